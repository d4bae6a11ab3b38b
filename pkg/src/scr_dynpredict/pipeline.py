"""End-to-end EC-VMD-ELM model: fitting, one-step-ahead evaluation, ablation, sensitivity.

Fitting runs, on the training split only::

    normalize -> MIC delays + reconstruction -> combined tree feature selection
    -> VMD of Q (mode-count search, last mode dropped) -> initial ELM
    -> error-correction ELM on [e(t-1), e(t-2), e(t-3), X(t)]

Evaluation is one-step-ahead: the error-correction stage is fed the realized
errors of the previous steps, computed from the measured target as it becomes
available.  Pass the training table as ``history`` so that delayed inputs and
the VMD of Q can see the samples preceding the scored rows.  The VMD is then
run over history and test jointly, which is acausal and only suitable for
offline evaluation.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import elm
from .dataset import (DataError, NormParams, TimeSeriesTable, apply_normalization,
                      denormalize, fit_normalization)
from .feature_select import ImportanceReport, TreeParams, feature_importances, select_features
from .mic_delay import DEFAULT_K_MAX, DelayMap, estimate_delays, reconstruct
from .vmd import VmdConfig, decompose, prune_last_mode, select_mode_count

VMD_LABEL = "Q"


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    delay: bool = True
    select: bool = True
    vmd: bool = True
    ec: bool = True
    k_max: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_K_MAX))
    mic_exponent: float = 0.6
    trees: TreeParams = TreeParams()
    threshold: float = 0.2
    forced: tuple = ("NOx",)
    vmd_config: VmdConfig = VmdConfig()
    corr_threshold: float = 0.1
    k_start: int = 2
    k_cap: int = 12
    hidden: int = 100
    ec_hidden: int = 100
    ridge: float = 1e-8
    activation: str = "tanh"
    error_lags: int = 3
    ec_feedback: str = "measured"
    # frozen stage outputs; when set the corresponding search is skipped
    delays: DelayMap | None = None
    features: tuple | None = None
    n_modes: int | None = None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("delays", "trees", "vmd_config")}
        d["trees"] = asdict(self.trees)
        d["vmd_config"] = asdict(self.vmd_config)
        d["forced"] = list(self.forced)
        d["features"] = None if self.features is None else list(self.features)
        d["delays"] = None if self.delays is None else self.delays.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d)
        if "trees" in d:
            d["trees"] = TreeParams(**d["trees"])
        if "vmd_config" in d:
            d["vmd_config"] = VmdConfig(**d["vmd_config"])
        if d.get("delays") is not None:
            d["delays"] = DelayMap.from_dict(d["delays"])
        for key in ("forced", "features"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class PipelineModel:
    config: PipelineConfig
    target: str
    labels: tuple
    sample_period: float
    norm: NormParams
    delays: DelayMap
    features: tuple
    n_modes: int | None
    input_labels: tuple
    initial: elm.ElmModel
    ec: elm.ElmModel | None = None
    importance: ImportanceReport | None = None

    @property
    def error_lags(self) -> int:
        return self.config.error_lags

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "target": self.target,
            "labels": list(self.labels),
            "sample_period": self.sample_period,
            "norm": self.norm.to_dict(),
            "delays": self.delays.to_dict(),
            "features": list(self.features),
            "n_modes": self.n_modes,
            "input_labels": list(self.input_labels),
            "initial": self.initial.to_dict(),
            "ec": None if self.ec is None else self.ec.to_dict(),
            "importance": None if self.importance is None else self.importance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineModel":
        return cls(
            config=PipelineConfig.from_dict(d["config"]),
            target=d["target"],
            labels=tuple(d["labels"]),
            sample_period=float(d["sample_period"]),
            norm=NormParams.from_dict(d["norm"]),
            delays=DelayMap.from_dict(d["delays"]),
            features=tuple(d["features"]),
            n_modes=d["n_modes"],
            input_labels=tuple(d["input_labels"]),
            initial=elm.ElmModel.from_dict(d["initial"]),
            ec=None if d["ec"] is None else elm.ElmModel.from_dict(d["ec"]),
            importance=None if d["importance"] is None else ImportanceReport.from_dict(d["importance"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PipelineModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------------- metrics


def metrics(y_true, y_pred) -> dict:
    """MAE, MSE and MAPE (percent).  MAPE is ``None`` if any true value is 0."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size != y_pred.size or y_true.size == 0:
        raise ValueError("metrics need two equally long, non-empty series")
    err = y_true - y_pred
    out = {"MAE": float(np.mean(np.abs(err))), "MSE": float(np.mean(err ** 2))}
    if np.any(y_true == 0):
        out["MAPE"] = None
    else:
        out["MAPE"] = float(np.mean(np.abs(err) / y_true) * 100.0)
    return out


# ------------------------------------------------------------- design matrix


def _ordered_features(features: Sequence[str]) -> list[str]:
    # Q (or its modes) leads, the rest keep selection order
    feats = list(features)
    if VMD_LABEL in feats:
        feats.remove(VMD_LABEL)
        feats.insert(0, VMD_LABEL)
    return feats


def _design(table_norm: TimeSeriesTable, target: str, delays: DelayMap,
            features: Sequence[str], n_modes: int | None, vmd_config: VmdConfig):
    """Inputs X(t), target y(t) and input labels for a normalized table."""
    rec = reconstruct(table_norm, delays, target)
    cols, names = [], []
    for lab in _ordered_features(features):
        if lab == VMD_LABEL and n_modes is not None:
            ms = prune_last_mode(decompose(rec.column(lab), n_modes, vmd_config))
            for k in range(ms.K):
                cols.append(ms.modes[k])
                names.append(f"{lab}_imf{k + 1}")
        else:
            cols.append(rec.column(lab))
            names.append(lab)
    return np.column_stack(cols), rec.column(target).copy(), tuple(names)


def _lagged(e: np.ndarray, X: np.ndarray, n_lags: int) -> np.ndarray:
    """Rows t >= n_lags of [e(t-1), ..., e(t-n_lags), X(t)]."""
    n = e.size
    lags = [e[n_lags - j: n - j] for j in range(1, n_lags + 1)]
    return np.column_stack(lags + [X[n_lags:]])


# ----------------------------------------------------------------------- fit


def fit(train: TimeSeriesTable, config: PipelineConfig = PipelineConfig()) -> PipelineModel:
    target = train.target
    inputs = [lab for lab in train.labels if lab != target]

    with _stage("normalize"):
        norm = fit_normalization(train)
        tn = apply_normalization(train, norm)

    with _stage("delays"):
        if config.delays is not None:
            delays = config.delays
        elif config.delay:
            delays = estimate_delays(tn, target, config.k_max, config.mic_exponent)
        else:
            delays = DelayMap.zeros(inputs, train.sample_period)
        rec = reconstruct(tn, delays, target)

    importance = None
    with _stage("select"):
        if config.features is not None:
            features = tuple(config.features)
        elif config.select:
            X_all = np.column_stack([rec.column(lab) for lab in inputs])
            importance = feature_importances(X_all, rec.column(target), inputs,
                                             config.trees, config.seed)
            features = tuple(select_features(importance, config.threshold, config.forced))
        else:
            features = tuple(inputs)
        missing = [lab for lab in features if lab not in inputs]
        if missing:
            raise KeyError(f"features not in table: {missing}")

    with _stage("vmd"):
        n_modes = None
        if config.vmd and VMD_LABEL in features:
            if config.n_modes is not None:
                n_modes = int(config.n_modes)
            else:
                n_modes = select_mode_count(rec.column(VMD_LABEL), config.vmd_config,
                                            config.corr_threshold, config.k_start,
                                            config.k_cap).K
        X, y, input_labels = _design(tn, target, delays, features, n_modes, config.vmd_config)

    with _stage("initial"):
        initial = elm.train(X, y, config.hidden, config.seed, config.ridge, config.activation)

    ec_model = None
    if config.ec:
        with _stage("error_correction"):
            p = config.error_lags
            if y.size <= p + 1:
                raise DataError("too few rows for error-correction lags")
            e = y - initial.predict(X)[:, 0]
            ec_model = elm.train(_lagged(e, X, p), e[p:], config.ec_hidden, config.seed + 1,
                                 config.ridge, config.activation)

    frozen = replace(config, delays=delays, features=features, n_modes=n_modes)
    return PipelineModel(frozen, target, tuple(train.labels), train.sample_period, norm,
                         delays, features, n_modes, input_labels, initial, ec_model, importance)


# ------------------------------------------------------------------ evaluate


@dataclass
class EvalReport:
    metrics: dict
    y_true: np.ndarray
    predictions: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self, series: bool = False) -> dict:
        d = {"metrics": self.metrics, "timing": self.timing}
        if series:
            d["y_true"] = self.y_true.tolist()
            d["predictions"] = {k: v.tolist() for k, v in self.predictions.items()}
        return d

    def save_json(self, path, series: bool = False, timing: bool = True) -> None:
        d = self.to_dict(series)
        if not timing:
            d.pop("timing")
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)

    def save_metrics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "MSE", "MAE", "MAPE"])
            for name, m in self.metrics.items():
                w.writerow([name, repr(m["MSE"]), repr(m["MAE"]),
                            "" if m["MAPE"] is None else repr(m["MAPE"])])

    def save_series_csv(self, path, model: str = "hybrid") -> None:
        """Two columns, measured and predicted, for external plotting."""
        pred = self.predictions.get(model, self.predictions["initial"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["measured", "predicted"])
            for a, b in zip(self.y_true, pred):
                w.writerow([repr(float(a)), repr(float(b))])


def _prepare(model: PipelineModel, table: TimeSeriesTable, history: TimeSeriesTable | None):
    if model.target not in table.labels:
        raise DataError(
            f"table lacks measured target {model.target!r}; evaluation is one-step-ahead "
            "and needs measured values to form the realized-error feedback"
        )
    full = table if history is None else history.concat(table)
    tn = apply_normalization(full, model.norm)
    X, y, _ = _design(tn, model.target, model.delays, model.features, model.n_modes,
                      model.config.vmd_config)
    keep = min(table.n_rows, y.size)
    return X[-keep:], y[-keep:]


def correct(model: PipelineModel, X: np.ndarray, y: np.ndarray,
            feedback: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Initial and hybrid predictions (normalized units) for consecutive rows.

    The first ``error_lags`` rows carry no correction.  With ``feedback =
    "measured"`` the lagged errors are the realized ``y - y_p``; with
    ``"recursive"`` they are the error model's own previous outputs.
    """
    y_p = model.initial.predict(X)[:, 0]
    if model.ec is None:
        return y_p, y_p.copy()
    p = model.error_lags
    feedback = feedback or model.config.ec_feedback
    e_p = np.zeros_like(y_p)
    if y_p.size > p:
        if feedback == "measured":
            e_p[p:] = model.ec.predict(_lagged(y - y_p, X, p))[:, 0]
        elif feedback == "recursive":
            for t in range(p, y_p.size):
                row = np.concatenate([e_p[t - p:t][::-1], X[t]])
                e_p[t] = model.ec.predict(row[None, :])[0, 0]
        else:
            raise ValueError(f"unknown feedback mode {feedback!r}")
    return y_p, y_p + e_p


def predict(model: PipelineModel, table: TimeSeriesTable,
            history: TimeSeriesTable | None = None, feedback: str | None = None) -> EvalReport:
    """Score ``table`` one step ahead and report metrics in physical units."""
    with _stage("predict"):
        X, y = _prepare(model, table, history)
        t0 = time.perf_counter()
        model.initial.predict(X)
        t_initial = time.perf_counter() - t0
        t0 = time.perf_counter()
        y_p, y_h = correct(model, X, y, feedback)
        t_hybrid = time.perf_counter() - t0

    dn = lambda v: denormalize(v, model.norm, model.target)
    y_true = dn(y)
    preds = {"initial": dn(y_p)}
    timing = {"initial_s": t_initial}
    if model.ec is not None:
        preds["hybrid"] = dn(y_h)
        timing["hybrid_s"] = t_hybrid
    return EvalReport({k: metrics(y_true, v) for k, v in preds.items()}, y_true, preds, timing)


# ------------------------------------------------------------------- ablation


def ablate(train: TimeSeriesTable, test: TimeSeriesTable,
           config: PipelineConfig = PipelineConfig()) -> list[dict]:
    """Every {delay, select, vmd} on/off combination, each with and without EC.

    Stage outputs shared between cells (delay maps, selected features, mode
    counts) are computed once.  All cells use ``config.seed``.
    """
    rows = []
    inputs = [lab for lab in train.labels if lab != train.target]
    base = replace(config, delays=None, features=None, n_modes=None)
    for use_delay in (True, False):
        first = fit(train, replace(base, delay=use_delay, select=True, vmd=True, ec=False))
        delays = first.delays
        for use_select in (True, False):
            features = first.features if use_select else tuple(inputs)
            n_modes = first.n_modes if use_select else None
            for use_vmd in (True, False):
                cfg = replace(base, delay=use_delay, select=use_select, vmd=use_vmd, ec=True,
                              delays=delays, features=features,
                              n_modes=n_modes if use_vmd else None)
                model = fit(train, cfg)
                rep = predict(model, test, history=train)
                for use_ec, name in ((False, "initial"), (True, "hybrid")):
                    rows.append({"delay": use_delay, "select": use_select, "vmd": use_vmd,
                                 "ec": use_ec, "n_inputs": len(model.input_labels),
                                 **rep.metrics[name]})
    return rows


def save_rows_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


# ---------------------------------------------------------------- sensitivity


def _mape_with(model: PipelineModel, X_tr, y_tr, X_te, y_te, cols) -> float:
    X_tr, X_te = X_tr.copy(), X_te.copy()
    for c in cols:
        mu = X_tr[:, c].mean()
        X_tr[:, c] = mu
        X_te[:, c] = mu
    cfg = model.config
    net = elm.train(X_tr, y_tr, cfg.hidden, cfg.seed, cfg.ridge, cfg.activation)
    dn = lambda v: denormalize(v, model.norm, model.target)
    return metrics(dn(y_te), dn(net.predict(X_te)[:, 0]))["MAPE"]


def sensitivity(train: TimeSeriesTable, test: TimeSeriesTable,
                config: PipelineConfig = PipelineConfig(),
                model: PipelineModel | None = None) -> list[dict]:
    """Test MAPE after replacing each input with its training mean, and growth vs. baseline.

    The modes of Q are replaced together and reported as one row ``"Q"``.
    Delays, features and mode count stay frozen from the baseline model; only
    the initial ELM is retrained, with the baseline's seed and size.
    """
    model = model or fit(train, replace(config, ec=False))
    with _stage("sensitivity"):
        tn = apply_normalization(train, model.norm)
        X_tr, y_tr, names = _design(tn, model.target, model.delays, model.features,
                                    model.n_modes, model.config.vmd_config)
        X_te, y_te = _prepare(model, test, train)
    groups: dict[str, list[int]] = {}
    for i, name in enumerate(names):
        groups.setdefault(name.split("_imf")[0], []).append(i)

    base = _mape_with(model, X_tr, y_tr, X_te, y_te, [])
    rows = [{"feature": "Mo", "MAPE": base, "growth_pct": 0.0}]
    for feat, cols in groups.items():
        m = _mape_with(model, X_tr, y_tr, X_te, y_te, cols)
        rows.append({"feature": feat, "MAPE": m, "growth_pct": 100.0 * (m - base) / base})
    return rows


# ------------------------------------------------------------ hidden size


HIDDEN_GRID = (20, 50, 80, 110, 140, 170, 200, 230, 260, 300)


def tune_hidden(train: TimeSeriesTable, config: PipelineConfig = PipelineConfig(),
                grid: Sequence[int] = HIDDEN_GRID, val_fraction: float = 0.2
                ) -> tuple[int, dict]:
    """Pick the initial ELM's hidden size by validation MAPE.

    The last ``val_fraction`` of ``train`` is held out.  Stages are fitted once
    on the rest and frozen while ``hidden`` varies; ties go to the smaller size.
    """
    n_fit = int(round(train.n_rows * (1.0 - val_fraction)))
    sub, val = train.rows(slice(0, n_fit)), train.rows(slice(n_fit, None))
    if val.n_rows < 1:
        raise DataError("validation split is empty")
    base = fit(sub, replace(config, ec=False))
    scores = {}
    for L in grid:
        model = fit(sub, replace(base.config, hidden=int(L), ec=False))
        mape = predict(model, val, history=sub).metrics["initial"]["MAPE"]
        scores[int(L)] = math.inf if mape is None else mape
    best = min(scores, key=lambda L: (scores[L], L))
    return best, scores
