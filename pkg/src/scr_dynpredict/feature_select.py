"""Tree-ensemble feature importances and the combined selection rule.

Three learners score every candidate input:

* a variance-reduction regression tree (CART),
* a bagged forest of such trees with per-split feature subsampling,
* second-order gradient boosting on squared loss (XGBoost-style split gain).

All three share one greedy builder.  A split's gain is

    G_L^2 / (H_L + lam) + G_R^2 / (H_R + lam) - G^2 / (H + lam)

over per-sample gradients g and hessians h.  With g = y - mean(y) at the node,
h = 1 and lam = 0 this is the node's drop in sum of squared errors, i.e.
CART's variance-reduction criterion scaled by the node size.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mic_delay import max_threads

_GAIN_RTOL = 1e-12
_TIE_RTOL = 1e-10


@dataclass
class TreeNode:
    n_samples: int
    value: float
    feature: int = -1
    threshold: float = math.nan
    impurity_decrease: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape[0])

    def walk(nd, idx):
        if nd.is_leaf:
            out[idx] = nd.value
            return
        go_left = X[idx, nd.feature] <= nd.threshold
        walk(nd.left, idx[go_left])
        walk(nd.right, idx[~go_left])

    walk(node, np.arange(X.shape[0]))
    return out


def _best_split(X, g, h, idx, features, min_leaf, lam):
    """Highest-gain (feature, threshold) over midpoints of distinct values.

    Gains within ``_TIE_RTOL`` of the node's gradient energy count as ties;
    ties keep the earliest feature in ``features`` and the lowest threshold,
    so round-off cannot decide between splits that are equal in exact
    arithmetic.
    """
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + lam)
    m = idx.size
    tol = _TIE_RTOL * float(np.dot(g[idx], g[idx]))
    best = (0.0, -1, math.nan)
    for f in features:
        xv = X[idx, f]
        o = np.argsort(xv, kind="stable")
        xs = xv[o]
        cg = np.cumsum(g[idx][o])[:-1]
        ch = np.cumsum(h[idx][o])[:-1]
        n_left = np.arange(1, m)
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
        if not ok.any():
            continue
        gain = cg * cg / (ch + lam) + (G - cg) ** 2 / (H - ch + lam) - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain >= gain.max() - tol))
        if gain[i] > best[0] + tol:
            best = (float(gain[i]), f, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow(X, y, *, max_depth, min_leaf, lam=0.0, boosting=False, max_features=None,
          rng=None, gains=None):
    """Greedy depth-first tree.  Returns (root, per-feature summed gain).

    For ``boosting`` the targets are gradients and leaves hold ``-G/(H+lam)``;
    otherwise leaves hold the mean and gradients are re-centred per node.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    gains = np.zeros(p) if gains is None else gains
    h = np.ones(y.size)

    def build(idx, depth):
        if boosting:
            g = y
            value = -g[idx].sum() / (idx.size + lam)
        else:
            value = float(y[idx].mean())
            g = np.zeros(y.size)
            g[idx] = y[idx] - value
        node = TreeNode(n_samples=int(idx.size), value=float(value))
        if depth >= max_depth or idx.size < 2 * min_leaf or np.ptp(y[idx]) == 0:
            return node
        if max_features is None or max_features >= p:
            feats = range(p)
        else:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
        gain, f, thr = _best_split(X, g, h, idx, feats, min_leaf, lam)
        energy = float(np.dot(g[idx], g[idx]))
        if f < 0 or gain <= _GAIN_RTOL * energy:
            return node
        go_left = X[idx, f] <= thr
        node.feature, node.threshold = int(f), float(thr)
        node.impurity_decrease = gain / idx.size
        gains[f] += gain
        node.left = build(idx[go_left], depth + 1)
        node.right = build(idx[~go_left], depth + 1)
        return node

    root = build(np.arange(y.size), 0)
    return root, gains


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if y.size != X.shape[0]:
        raise ValueError(f"y has {y.size} samples, X has {X.shape[0]}")
    return X, y


def fit_cart(X, y, max_depth: int = 8, min_leaf: int = 5) -> tuple[TreeNode, np.ndarray]:
    """Variance-reduction regression tree and its raw per-feature importances."""
    X, y = _check_xy(X, y)
    root, gains = _grow(X, y, max_depth=max_depth, min_leaf=min_leaf)
    return root, gains / y.size


def fit_cart_importance(X, y, max_depth: int = 8, min_leaf: int = 5) -> np.ndarray:
    """Sum over each feature's split nodes of (n_node / n) * impurity decrease."""
    return fit_cart(X, y, max_depth, min_leaf)[1]


def fit_forest_importance(X, y, n_trees: int = 100, max_features: int | None = None,
                          seed: int = 0, max_depth: int = 8, min_leaf: int = 5,
                          bootstrap: bool = True) -> np.ndarray:
    """Mean CART importance over bootstrap trees with per-split feature sampling.

    ``max_features`` defaults to ``ceil(sqrt(p))``.
    """
    X, y = _check_xy(X, y)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n, p = X.shape
    if max_features is None:
        max_features = math.ceil(math.sqrt(p))
    seeds = np.random.SeedSequence(seed).spawn(n_trees)

    def one(ss):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        _, gains = _grow(X[rows], y[rows], max_depth=max_depth, min_leaf=min_leaf,
                         max_features=max_features, rng=rng)
        return gains / n

    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        per_tree = list(pool.map(one, seeds))
    return np.mean(per_tree, axis=0)


@dataclass
class BoostedEnsemble:
    base: float
    learning_rate: float
    trees: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        out = np.full(np.asarray(X).shape[0], self.base)
        for t in self.trees:
            out += self.learning_rate * tree_predict(t, X)
        return out


def fit_gbt(X, y, n_rounds: int = 100, learning_rate: float = 0.1, max_depth: int = 4,
            lam: float = 1.0, min_leaf: int = 1) -> tuple[BoostedEnsemble, np.ndarray]:
    """Stagewise squared-loss boosting; returns the ensemble and summed split gain."""
    X, y = _check_xy(X, y)
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    model = BoostedEnsemble(base=float(y.mean()), learning_rate=learning_rate)
    F = np.full(y.size, model.base)
    gains = np.zeros(X.shape[1])
    model.losses.append(float(np.mean((y - F) ** 2)))
    for _ in range(n_rounds):
        grad = F - y
        tree, _ = _grow(X, grad, max_depth=max_depth, min_leaf=min_leaf, lam=lam,
                        boosting=True, gains=gains)
        model.trees.append(tree)
        F = F + learning_rate * tree_predict(tree, X)
        model.losses.append(float(np.mean((y - F) ** 2)))
    return model, gains


def fit_gbt_importance(X, y, n_rounds: int = 100, learning_rate: float = 0.1,
                       max_depth: int = 4, lam: float = 1.0) -> np.ndarray:
    return fit_gbt(X, y, n_rounds, learning_rate, max_depth, lam)[1]


# ----------------------------------------------------------------- combining

ALGORITHMS = ("cart", "forest", "boosted")


def _minmax(v: np.ndarray, name: str) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        warnings.warn(f"{name}: all importances equal; scaled scores set to 0", stacklevel=3)
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


@dataclass(frozen=True)
class ImportanceReport:
    labels: tuple
    cart: np.ndarray
    forest: np.ndarray
    boosted: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return (self.cart + self.forest + self.boosted) / 3.0

    def score(self, label: str) -> float:
        return float(self.combined[self.labels.index(label)])

    def to_dict(self) -> dict:
        comb = self.combined
        return {
            lab: {"cart": float(self.cart[i]), "forest": float(self.forest[i]),
                  "boosted": float(self.boosted[i]), "combined": float(comb[i])}
            for i, lab in enumerate(self.labels)
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImportanceReport":
        labels = tuple(d)
        col = lambda k: np.array([float(d[lab][k]) for lab in labels])
        return cls(labels, col("cart"), col("forest"), col("boosted"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ImportanceReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "combined"])
            for lab, c in zip(self.labels, self.combined):
                w.writerow([lab, repr(float(c))])


def combine_importance(labels: Sequence[str], cart, forest, boosted) -> ImportanceReport:
    """Min-max scale each learner's raw scores to [0, 1]; the combined score is their mean."""
    labels = tuple(labels)
    scaled = []
    for name, raw in zip(ALGORITHMS, (cart, forest, boosted)):
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (len(labels),):
            raise ValueError(f"{name}: expected {len(labels)} scores, got {raw.shape}")
        scaled.append(_minmax(raw, name))
    return ImportanceReport(labels, *scaled)


@dataclass(frozen=True)
class TreeParams:
    cart_depth: int = 8
    cart_min_leaf: int = 5
    n_trees: int = 100
    max_features: int | None = None
    gbt_rounds: int = 100
    gbt_rate: float = 0.1
    gbt_depth: int = 4
    gbt_lambda: float = 1.0


def feature_importances(X, y, labels: Sequence[str], params: TreeParams = TreeParams(),
                        seed: int = 0) -> ImportanceReport:
    """Run all three learners and combine their scores."""
    cart = fit_cart_importance(X, y, params.cart_depth, params.cart_min_leaf)
    forest = fit_forest_importance(X, y, params.n_trees, params.max_features, seed,
                                   params.cart_depth, params.cart_min_leaf)
    boosted = fit_gbt_importance(X, y, params.gbt_rounds, params.gbt_rate,
                                 params.gbt_depth, params.gbt_lambda)
    return combine_importance(labels, cart, forest, boosted)


def select_features(report: ImportanceReport, threshold: float = 0.2,
                    forced: Sequence[str] = ("NOx",)) -> list[str]:
    """Forced labels plus every label whose combined score exceeds ``threshold``.

    Ordered by descending combined score (ties keep report order).
    """
    for lab in forced:
        if lab not in report.labels:
            raise KeyError(f"forced feature {lab!r} is not a candidate")
    comb = report.combined
    chosen = [i for i, lab in enumerate(report.labels) if comb[i] > threshold or lab in forced]
    chosen.sort(key=lambda i: -comb[i])
    return [report.labels[i] for i in chosen]
