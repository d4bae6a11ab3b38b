"""Extreme learning machine regressor.

Hidden weights and biases are drawn once, uniformly on [-1, 1], from a seeded
generator and never trained.  Output weights solve the least-squares problem
``H @ beta = T`` through a truncated-SVD pseudoinverse, or through ridge
normal equations when ``ridge > 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = {
    "tanh": np.tanh,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
}

PINV_RCOND = 1e-10


def pinv_solve(H: np.ndarray, T: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Minimum-norm least-squares solution via SVD.

    Singular values below ``rcond * s_max`` are treated as zero.
    """
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((H.shape[1],) + T.shape[1:])
    keep = s > rcond * s[0]
    UtT = U[:, keep].T @ T
    return Vt[keep].T @ (UtT / s[keep][:, None])


@dataclass(frozen=True)
class ElmModel:
    W: np.ndarray         # (L, d)
    b: np.ndarray         # (L,)
    beta: np.ndarray      # (L, m)
    activation: str = "tanh"
    seed: int = 0
    ridge: float = 0.0

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W.shape[1]

    def hidden(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} input columns, got {X.shape[1]}")
        return ACTIVATIONS[self.activation](X @ self.W.T + self.b)

    def predict(self, X) -> np.ndarray:
        return self.hidden(X) @ self.beta

    def to_dict(self) -> dict:
        return {
            "n_hidden": self.n_hidden, "n_inputs": self.n_inputs,
            "n_outputs": self.beta.shape[1], "activation": self.activation,
            "seed": self.seed, "ridge": self.ridge,
            "W": self.W.ravel().tolist(), "b": self.b.tolist(),
            "beta": self.beta.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElmModel":
        L, n_in, m = d["n_hidden"], d["n_inputs"], d["n_outputs"]
        return cls(np.array(d["W"], dtype=float).reshape(L, n_in),
                   np.array(d["b"], dtype=float),
                   np.array(d["beta"], dtype=float).reshape(L, m),
                   d["activation"], d["seed"], d["ridge"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ElmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_hidden(d: int, L: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform [-1, 1] weights and biases, drawn one neuron (row) at a time.

    Row-wise drawing makes the first ``L`` neurons of a larger network with the
    same seed identical to an ``L``-neuron network.
    """
    rng = np.random.default_rng(seed)
    Wb = rng.uniform(-1.0, 1.0, size=(L, d + 1))
    return Wb[:, :d].copy(), Wb[:, d].copy()


def train(X, T, L: int = 100, seed: int = 0, ridge: float = 0.0,
          activation: str = "tanh") -> ElmModel:
    """Fit output weights for ``L`` random hidden units.

    ``T`` may be 1-D (single output) or (N, m).
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if T.ndim == 1:
        T = T[:, None]
    if X.shape[0] < 1 or L < 1:
        raise ValueError("need N >= 1 samples and L >= 1 hidden units")
    if X.shape[0] != T.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, T has {T.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T))):
        raise ValueError("ELM inputs and targets must be finite")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    W, b = init_hidden(X.shape[1], L, seed)
    H = ACTIVATIONS[activation](X @ W.T + b)
    if ridge > 0:
        beta = np.linalg.solve(H.T @ H + ridge * np.eye(L), H.T @ T)
    else:
        beta = pinv_solve(H, T)
    for arr in (W, b, beta):
        arr.setflags(write=False)
    return ElmModel(W, b, beta, activation, int(seed), float(ridge))


def predict(model: ElmModel, X) -> np.ndarray:
    return model.predict(X)
