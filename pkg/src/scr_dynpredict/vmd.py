"""Variational mode decomposition with automatic mode count and last-mode pruning.

The signal is mirror-extended by half its length on each side and moved to the
one-sided spectrum (``rfft``).  Each sweep updates every mode by a Wiener
filter centred on its current frequency, re-estimates the centre frequency as
the power-weighted mean frequency of the mode, and takes a dual-ascent step
on the reconstruction constraint (disabled with ``tau = 0``).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VmdConfig:
    alpha: float = 2000.0
    tau: float = 0.0
    tol: float = 1e-7
    max_iter: int = 500
    init: str = "uniform"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.init not in ("uniform", "zero"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class ModeSet:
    """Modes ordered by ascending centre frequency (cycles/sample)."""

    modes: np.ndarray            # (K, n)
    omegas: np.ndarray           # (K,)
    signal: np.ndarray           # (n,)
    converged: bool = True
    n_iter: int = 0

    @property
    def K(self) -> int:
        return self.modes.shape[0]

    @property
    def residual(self) -> np.ndarray:
        return self.signal - self.modes.sum(axis=0)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"IMF{k + 1}" for k in range(self.K)] + ["signal"])
            for row in np.column_stack([self.modes.T, self.signal]):
                w.writerow([repr(float(v)) for v in row])

    def save_omegas(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"omegas": [float(w) for w in self.omegas],
                       "converged": self.converged, "n_iter": self.n_iter}, fh, indent=2)

    @classmethod
    def load(cls, csv_path, omegas_path) -> "ModeSet":
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        with open(omegas_path) as fh:
            meta = json.load(fh)
        return cls(data[:, :-1].T.copy(), np.array(meta["omegas"], dtype=float),
                   data[:, -1].copy(), meta["converged"], meta["n_iter"])


def decompose(signal, K: int, config: VmdConfig = VmdConfig()) -> ModeSet:
    """Split ``signal`` into ``K`` band-limited modes.

    Stops when the summed relative squared change of the mode spectra drops
    below ``config.tol``.  If ``max_iter`` is hit first the last iterate is
    returned with ``converged=False`` and a warning.
    """
    f = np.asarray(signal, dtype=float).ravel()
    n = f.size
    if n < 32:
        raise ValueError(f"signal needs at least 32 samples, got {n}")
    if K < 1:
        raise ValueError("K must be >= 1")
    half = n // 2
    ext = np.concatenate([f[:half][::-1], f, f[n - half:][::-1]])
    T = ext.size
    f_hat = np.fft.rfft(ext)
    freqs = np.fft.rfftfreq(T)

    if config.init == "uniform":
        omega = 0.5 * np.arange(K) / K
    else:
        omega = np.zeros(K)
    u_hat = np.zeros((K, freqs.size), dtype=complex)
    lam = np.zeros(freqs.size, dtype=complex)

    if not np.any(f_hat):
        return ModeSet(np.zeros((K, n)), np.sort(omega), f.copy(), True, 0)

    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        prev = u_hat.copy()
        total = u_hat.sum(axis=0)
        for k in range(K):
            total -= u_hat[k]
            u_hat[k] = (f_hat - total + lam / 2) / (1 + 2 * config.alpha * (freqs - omega[k]) ** 2)
            total += u_hat[k]
            power = np.abs(u_hat[k]) ** 2
            p_sum = power.sum()
            if p_sum > 0:
                omega[k] = float(np.dot(freqs, power) / p_sum)
        lam = lam + config.tau * (f_hat - total)

        change = 0.0
        for k in range(K):
            ref = np.vdot(prev[k], prev[k]).real
            diff = np.vdot(u_hat[k] - prev[k], u_hat[k] - prev[k]).real
            if ref > 0:
                change += diff / ref
            elif diff > 0:
                change = np.inf
        if change < config.tol:
            converged = True
            break

    if not converged:
        warnings.warn(f"VMD did not converge in {config.max_iter} iterations", stacklevel=2)

    modes = np.fft.irfft(u_hat, n=T, axis=1)[:, half:half + n]
    order = np.argsort(omega, kind="stable")
    return ModeSet(modes[order].copy(), omega[order].copy(), f.copy(), converged, it)


def _abs_corr(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return abs(float(np.corrcoef(a, b)[0, 1]))


@dataclass(frozen=True)
class ModeCountResult:
    K: int
    mode_set: ModeSet
    correlations: dict = field(default_factory=dict)
    capped: bool = False


def select_mode_count(signal, config: VmdConfig = VmdConfig(), corr_threshold: float = 0.1,
                      K_start: int = 2, K_cap: int = 12) -> ModeCountResult:
    """Grow K until the highest-frequency mode barely correlates with the signal.

    Decomposes with K = K_start, K_start + 1, ... and stops at the first K where
    ``|pearson(IMF_K, signal)| < corr_threshold``.  Reaching ``K_cap`` without
    stopping returns that decomposition with ``capped=True``.
    """
    f = np.asarray(signal, dtype=float).ravel()
    corrs = {}
    ms = None
    for K in range(K_start, K_cap + 1):
        ms = decompose(f, K, config)
        corrs[K] = _abs_corr(ms.modes[-1], f)
        if corrs[K] < corr_threshold:
            return ModeCountResult(K, ms, corrs, capped=False)
    warnings.warn(f"mode-count search reached K_cap={K_cap}", stacklevel=2)
    return ModeCountResult(K_cap, ms, corrs, capped=True)


def prune_last_mode(mode_set: ModeSet) -> ModeSet:
    """Drop the highest-frequency mode; it moves into the residual."""
    if mode_set.K < 2:
        raise ValueError("need at least two modes to prune one")
    return ModeSet(mode_set.modes[:-1].copy(), mode_set.omegas[:-1].copy(),
                   mode_set.signal, mode_set.converged, mode_set.n_iter)
