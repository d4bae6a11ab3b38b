"""Maximal information coefficient, lag search and delay-aligned reconstruction.

MIC here maximizes normalized mutual information over grid shapes
``(nx, ny)`` with ``nx * ny < B(n) = floor(n ** 0.6)``.  For every shape the
bins are equal-frequency on both axes (placed on ranks), so the statistic is
exactly invariant under strictly increasing transforms of either variable.
This is a tractable stand-in for the dynamic-programming partition search of
the original estimator.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dataset import SCR_INTERNAL, UNIT_LEVEL, TimeSeriesTable

MIN_SAMPLES = 20
DEFAULT_K_MAX = {SCR_INTERNAL: 60, UNIT_LEVEL: 30}


class ConstantSeriesWarning(UserWarning):
    """MIC was asked about a series with a single distinct value."""


def max_threads() -> int:
    """Thread cap from ``SCR_DYNPREDICT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SCR_DYNPREDICT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GridPartition:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "GridPartition":
        counts = np.asarray(counts, dtype=float)
        return cls(np.arange(counts.shape[0] + 1.0), np.arange(counts.shape[1] + 1.0), counts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def mutual_information(grid: GridPartition) -> float:
    """Mutual information of the grid's occupancy, in bits.

    Empty cells contribute nothing (``0 log 0 = 0``).
    """
    c = np.asarray(grid.counts, dtype=float)
    n = c.sum()
    if n <= 0:
        raise ValueError("grid has no samples")
    p = c / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    terms = p[nz] * np.log2(p[nz] / (px * py)[nz])
    return max(float(np.sort(terms).sum()), 0.0)


def _min_ranks(v: np.ndarray) -> np.ndarray:
    """0-based rank where ties share the lowest rank of their group."""
    return np.searchsorted(np.sort(v, kind="stable"), v, side="left")


def _bin_starts(n: int, nb: int) -> np.ndarray:
    # first rank of each equal-frequency bin: ceil(j * n / nb), j = 0..nb
    j = np.arange(nb + 1)
    return -((-j * n) // nb)


def equal_frequency_bins(v, nb: int) -> np.ndarray:
    """Bin index in ``0..nb-1`` of every sample; tied values share a bin."""
    v = np.asarray(v, dtype=float)
    return (_min_ranks(v) * nb) // v.size


def equal_frequency_grid(x, y, nx: int, ny: int) -> GridPartition:
    """Occupancy grid with equal-frequency bins on both axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    bx = equal_frequency_bins(x, nx)
    by = equal_frequency_bins(y, ny)
    counts = np.bincount(bx * ny + by, minlength=nx * ny).reshape(nx, ny).astype(float)

    def edges(v, b, nb):
        e = np.full(nb + 1, np.nan)
        for k in range(nb):
            if np.any(b == k):
                e[k] = v[b == k].min()
        e[nb] = v.max()
        return e

    return GridPartition(edges(x, bx, nx), edges(y, by, ny), counts)


def max_cells(n: int, b_exponent: float = 0.6) -> int:
    """Grid-size bound ``B(n)``."""
    return int(math.floor(n ** b_exponent + 1e-9))


def grid_shapes(n: int, b_exponent: float = 0.6) -> list[tuple[int, int]]:
    """All ``(nx, ny)`` with both sides in ``[2, B/2]`` and ``nx * ny < B``."""
    B = max_cells(n, b_exponent)
    side = B // 2
    return [(a, b) for a in range(2, side + 1) for b in range(2, side + 1) if a * b < B]


def _plogp(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def _scan(q_small: np.ndarray, q_big: np.ndarray, B: int) -> float:
    """Best normalized MI over shapes whose ``small``-axis bin count a <= b.

    Takes ranks of both series.  For each a, the one-hot bin membership of the small
    axis is cumulated along the big axis' rank order so that every
    equal-frequency partition of the big axis is read off by differencing.
    """
    n = q_small.size
    order = np.argsort(q_big, kind="stable")
    side = B // 2
    if side < 2:
        return 0.0
    # bin boundaries (as positions in big-axis rank order) for every b in 2..side
    all_b = np.arange(2, side + 1)
    starts = np.concatenate([_bin_starts(n, b) for b in all_b])
    pos = np.searchsorted(q_big[order], starts, side="left")
    offsets = np.concatenate(([0], np.cumsum(all_b + 1)))
    ranked_small = q_small[order]
    best = 0.0
    a = 2
    while a * a < B and a <= side:
        b_hi = min(side, (B - 1) // a)
        if b_hi >= a:
            bs = np.arange(a, b_hi + 1)
            chunk = pos[offsets[a - 2]: offsets[b_hi - 1]]
            seg_len = bs + 1
            seg_start = np.concatenate(([0], np.cumsum(seg_len)[:-1]))
            keep = np.ones(chunk.size, dtype=bool)
            keep[seg_start + bs] = False
            left = chunk[keep]
            keep[:] = True
            keep[seg_start] = False
            right = chunk[keep]
            seg = np.concatenate(([0], np.cumsum(bs)[:-1]))

            bx = (ranked_small * a) // n
            cum = np.zeros((a, n + 1))
            cum[bx, np.arange(1, n + 1)] = 1.0
            np.cumsum(cum, axis=1, out=cum)

            p = (cum[:, right] - cum[:, left]) / n
            px = np.bincount(bx, minlength=a) / n
            h_x = -_plogp(px).sum()
            h_y = -np.add.reduceat(_plogp(p.sum(axis=0)), seg)
            h_xy = -np.add.reduceat(_plogp(p).sum(axis=0), seg)
            score = (h_x + h_y - h_xy) / math.log2(a)
            best = max(best, float(score.max()))
        a += 1
    return best


def mic(x, y, b_exponent: float = 0.6) -> float:
    """Maximal information coefficient of two equally long series, in [0, 1].

    Returns 0 (with a :class:`ConstantSeriesWarning`) if either input is
    constant.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < MIN_SAMPLES:
        raise ValueError(f"MIC needs at least {MIN_SAMPLES} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("MIC inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        warnings.warn("constant series; MIC set to 0", ConstantSeriesWarning, stacklevel=2)
        return 0.0
    B = max_cells(x.size, b_exponent)
    qx, qy = _min_ranks(x), _min_ranks(y)
    score = max(_scan(qx, qy, B), _scan(qy, qx, B))
    return min(max(score, 0.0), 1.0)


def estimate_delay(x, y, k_max: int, b_exponent: float = 0.6) -> tuple[int, float]:
    """Lag ``j`` in ``0..k_max`` maximizing MIC between x(t-j) and y(t).

    Ties go to the smallest lag.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if y.size != n:
        raise ValueError("x and y must have equal length")
    if k_max < 0 or k_max >= n - MIN_SAMPLES:
        raise ValueError(f"k_max={k_max} must lie in [0, {n - MIN_SAMPLES})")
    best_lag, best = 0, -1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantSeriesWarning)
        for j in range(k_max + 1):
            m = mic(x[: n - j], y[j:], b_exponent)
            if m > best:
                best_lag, best = j, m
    return best_lag, best


@dataclass(frozen=True)
class DelayEntry:
    lag_samples: int
    lag_seconds: float
    mic: float


@dataclass(frozen=True)
class DelayMap:
    entries: Mapping[str, DelayEntry] = field(default_factory=dict)

    def lag(self, label: str) -> int:
        return self.entries[label].lag_samples

    @property
    def max_lag(self) -> int:
        return max((e.lag_samples for e in self.entries.values()), default=0)

    @classmethod
    def zeros(cls, labels, sample_period: float = 10.0) -> "DelayMap":
        return cls({lab: DelayEntry(0, 0.0, float("nan")) for lab in labels})

    @classmethod
    def from_lags(cls, lags: Mapping[str, int], sample_period: float = 10.0) -> "DelayMap":
        return cls({k: DelayEntry(int(v), int(v) * sample_period, float("nan"))
                    for k, v in lags.items()})

    def to_dict(self) -> dict:
        return {
            lab: {"lag_samples": e.lag_samples, "lag_seconds": e.lag_seconds,
                  "mic": None if math.isnan(e.mic) else e.mic}
            for lab, e in self.entries.items()
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DelayMap":
        return cls({
            lab: DelayEntry(int(v["lag_samples"]), float(v["lag_seconds"]),
                            float("nan") if v.get("mic") is None else float(v["mic"]))
            for lab, v in d.items()
        })

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "DelayMap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def estimate_delays(table: TimeSeriesTable, target: str | None = None,
                    k_max: Mapping[str, int] | None = None,
                    b_exponent: float = 0.6) -> DelayMap:
    """Per-column MIC-optimal lag against the target.

    ``k_max`` maps variable group to maximal lag in samples; it is clipped so
    that at least 20 overlapping samples remain.
    """
    target = target or table.target
    caps = dict(DEFAULT_K_MAX, **(k_max or {}))
    y = table.column(target)
    labels = [lab for lab in table.labels if lab != target]

    def one(lab):
        cap = min(caps[table.variable(lab).group], table.n_rows - MIN_SAMPLES - 1)
        return estimate_delay(table.column(lab), y, cap, b_exponent)

    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        results = list(pool.map(one, labels))
    return DelayMap({
        lab: DelayEntry(lag, lag * table.sample_period, m)
        for lab, (lag, m) in zip(labels, results)
    })


def reconstruct(table: TimeSeriesTable, delays: DelayMap, target: str | None = None
                ) -> TimeSeriesTable:
    """Shift each input by its lag so row t holds y(t) next to x_i(t - d_i).

    The first ``max(d_i)`` rows have no complete history and are dropped.
    """
    target = target or table.target
    n = table.n_rows
    lags = {}
    for lab in table.labels:
        if lab == target:
            continue
        if lab not in delays.entries:
            raise KeyError(f"no delay for column {lab!r}")
        lags[lab] = delays.lag(lab)
    D = max(lags.values(), default=0)
    if D >= n:
        raise ValueError(f"max delay {D} leaves no rows out of {n}")
    out = np.empty((n - D, len(table.labels)))
    for j, lab in enumerate(table.labels):
        d = 0 if lab == target else lags[lab]
        out[:, j] = table.values[D - d: n - d, j]
    return table.with_values(out)
