"""Ingestion, cleaning, normalization, splitting and synthesis of plant records.

A :class:`TimeSeriesTable` is an immutable (rows x columns) float array tagged
with a :class:`VariableSchema` per column.  Row order is time order and rows are
spaced ``sample_period`` seconds apart (10 s for the DCS exports this package
was built around).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

SCR_INTERNAL = "scr_internal"
UNIT_LEVEL = "unit_level"
TARGET = "Y"


class SchemaError(ValueError):
    """Raised when a table does not match its declared columns."""


class DataError(ValueError):
    """Raised for malformed or degenerate numeric content."""


@dataclass(frozen=True)
class VariableSchema:
    label: str
    unit: str
    expected_range: tuple[float, float]
    group: str = SCR_INTERNAL
    target: bool = False

    def __post_init__(self):
        lo, hi = self.expected_range
        if not lo < hi:
            raise SchemaError(f"{self.label}: expected_range min must be < max")
        if self.group not in (SCR_INTERNAL, UNIT_LEVEL):
            raise SchemaError(f"{self.label}: unknown group {self.group!r}")


# Operating ranges after outlier removal, one row per measured point.
PLANT_SCHEMA: tuple[VariableSchema, ...] = (
    VariableSchema("Y", "mg/Nm3", (21.378, 37.241), target=True),
    VariableSchema("NOx", "mg/Nm3", (89.921, 317.043)),
    VariableSchema("O2in", "%", (3.673, 5.856)),
    VariableSchema("CO", "mg/Nm3", (4.275, 864.527)),
    VariableSchema("F", "Nm3/h", (115.333, 149.616)),
    VariableSchema("Pin", "kPa", (-1.155, -0.549)),
    VariableSchema("Tin", "degC", (350.000, 371.427)),
    VariableSchema("Q", "m3/h", (43.813, 129.658)),
    VariableSchema("3AB", "A", (0.220, 0.708)),
    VariableSchema("Pout", "kPa", (-1.614, -0.979)),
    VariableSchema("Tout", "degC", (350.876, 371.053)),
    VariableSchema("O2out", "%", (3.566, 6.161)),
    VariableSchema("NH3", "ppm", (1.878, 2.379)),
    VariableSchema("Ne", "MW", (765.312, 967.453), group=UNIT_LEVEL),
    VariableSchema("TF", "t/h", (251.343, 357.814), group=UNIT_LEVEL),
    VariableSchema("TA", "t/h", (2783.210, 3406.900), group=UNIT_LEVEL),
)


def validate_schema(schema: Sequence[VariableSchema]) -> None:
    labels = [s.label for s in schema]
    if len(set(labels)) != len(labels):
        raise SchemaError("column labels must be unique")
    n_targets = sum(s.target for s in schema)
    if n_targets != 1:
        raise SchemaError(f"exactly one target column required, got {n_targets}")


def schema_from_labels(labels: Sequence[str], target: str = TARGET) -> tuple[VariableSchema, ...]:
    """Build a schema for arbitrary labels.

    Labels known from :data:`PLANT_SCHEMA` keep their metadata; unknown labels
    get a placeholder range and the ``scr_internal`` group.
    """
    known = {s.label: s for s in PLANT_SCHEMA}
    out = []
    for lab in labels:
        base = known.get(lab, VariableSchema(lab, "", (0.0, 1.0)))
        out.append(replace(base, target=(lab == target)))
    schema = tuple(out)
    validate_schema(schema)
    return schema


@dataclass(frozen=True)
class TimeSeriesTable:
    schema: tuple[VariableSchema, ...]
    values: np.ndarray
    sample_period: float = 10.0

    def __post_init__(self):
        schema = tuple(self.schema)
        validate_schema(schema)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise SchemaError(
                f"values must be (rows, {len(schema)}), got {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.schema]

    @property
    def target(self) -> str:
        return next(s.label for s in self.schema if s.target)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n_rows

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"no column {label!r}") from None

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.index(label)]

    def variable(self, label: str) -> VariableSchema:
        return self.schema[self.index(label)]

    def with_values(self, values: np.ndarray) -> "TimeSeriesTable":
        return TimeSeriesTable(self.schema, values, self.sample_period)

    def with_column(self, label: str, column: np.ndarray) -> "TimeSeriesTable":
        values = self.values.copy()
        values[:, self.index(label)] = column
        return self.with_values(values)

    def rows(self, sl: slice) -> "TimeSeriesTable":
        return self.with_values(self.values[sl])

    def concat(self, other: "TimeSeriesTable") -> "TimeSeriesTable":
        if other.labels != self.labels:
            raise SchemaError("cannot concatenate tables with different columns")
        return self.with_values(np.vstack([self.values, other.values]))


@dataclass(frozen=True)
class NormParams:
    """Per-column min-max bounds in physical units."""

    bounds: Mapping[str, tuple[float, float]]

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, (lo, hi) in self.bounds.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormParams":
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


# --------------------------------------------------------------------------- io


def load_table(path, schema: Sequence[VariableSchema] = PLANT_SCHEMA,
               sample_period: float = 10.0) -> TimeSeriesTable:
    """Read a CSV with a header row into a table ordered like ``schema``.

    A leading column whose header is not a schema label is taken to be a
    timestamp and dropped.
    """
    schema = tuple(schema)
    validate_schema(schema)
    wanted = [s.label for s in schema]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [row for row in reader if row and any(c.strip() for c in row)]

    offset = 0
    if header and header[0] not in wanted:
        offset = 1
    cols = header[offset:]
    for lab in wanted:
        if lab not in cols:
            raise SchemaError(f"{path}: missing column {lab!r}")
    extra = [c for c in cols if c not in wanted]
    if extra:
        raise SchemaError(f"{path}: unexpected columns {extra}")
    if not body:
        raise DataError(f"{path}: no rows")

    order = [cols.index(lab) + offset for lab in wanted]
    values = np.empty((len(body), len(wanted)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        for j, src in enumerate(order):
            try:
                values[i, j] = float(row[src])
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {row[src]!r} at row {i}, column {wanted[j]!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0, 0])
        raise DataError(f"{path}: non-finite value at row {bad}")
    return TimeSeriesTable(schema, values, sample_period)


def save_table(table: TimeSeriesTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table.labels)
        for row in table.values:
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------------- cleaning


def clean_outliers(table: TimeSeriesTable, sigma_k: float = 3.0,
                   lookback: int = 5) -> TimeSeriesTable:
    """Replace 3-sigma outliers with the mean of the preceding accepted values.

    Mean and standard deviation are computed once per column over the whole
    series.  A flagged value at index ``i`` becomes the mean of the (up to
    ``lookback``) already-cleaned values before it; a flagged first value
    becomes the column median.
    """
    if table.n_rows == 0:
        raise DataError("cannot clean an empty table")
    out = table.values.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        mu, sd = col.mean(), col.std()
        if sd == 0.0:
            continue
        flagged = np.flatnonzero(np.abs(col - mu) > sigma_k * sd)
        if flagged.size == 0:
            continue
        median = float(np.median(col))
        for i in flagged:
            if i == 0:
                col[i] = median
            else:
                col[i] = col[max(0, i - lookback):i].mean()
    return table.with_values(out)


# -------------------------------------------------------------- normalization


def fit_normalization(table: TimeSeriesTable) -> NormParams:
    lo = table.values.min(axis=0)
    hi = table.values.max(axis=0)
    for lab, a, b in zip(table.labels, lo, hi):
        if not b > a:
            raise DataError(f"column {lab!r} is constant; cannot min-max normalize")
    return NormParams({lab: (float(a), float(b)) for lab, a, b in zip(table.labels, lo, hi)})


def apply_normalization(table: TimeSeriesTable, params: NormParams) -> TimeSeriesTable:
    """Scale every column with previously fitted bounds (values may leave [0, 1])."""
    out = np.empty_like(table.values)
    for j, lab in enumerate(table.labels):
        if lab not in params.bounds:
            raise SchemaError(f"no normalization bounds for {lab!r}")
        lo, hi = params.bounds[lab]
        out[:, j] = (table.values[:, j] - lo) / (hi - lo)
    return table.with_values(out)


def normalize(table: TimeSeriesTable) -> tuple[TimeSeriesTable, NormParams]:
    params = fit_normalization(table)
    return apply_normalization(table, params), params


def denormalize(values, params: NormParams, label: str) -> np.ndarray:
    if label not in params.bounds:
        raise SchemaError(f"no normalization bounds for {label!r}")
    lo, hi = params.bounds[label]
    return np.asarray(values, dtype=float) * (hi - lo) + lo


def split(table: TimeSeriesTable, n_train: int) -> tuple[TimeSeriesTable, TimeSeriesTable]:
    if not 0 < n_train < table.n_rows:
        raise DataError(f"n_train must lie in (0, {table.n_rows}), got {n_train}")
    return table.rows(slice(0, n_train)), table.rows(slice(n_train, None))


# ------------------------------------------------------------------ synthesis

# Lags (in samples) of the reference plant, used as generator defaults.
PLANT_DELAYS = {
    "NOx": 17, "O2in": 1, "CO": 30, "F": 5, "Pin": 2, "Tin": 26, "Q": 44,
    "3AB": 3, "Pout": 1, "Tout": 29, "O2out": 1, "NH3": 1, "Ne": 13, "TF": 11,
    "TA": 3,
}

# Signed weight of each driver in the synthetic outlet-NOx response.
DEFAULT_WEIGHTS = {
    "Q": -1.5, "Tout": 1.0, "Tin": 1.0, "TA": 1.0, "O2in": 1.0,
    "Ne": 1.0, "O2out": 1.0, "NOx": 1.0,
}


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic SCR record.

    ``noise_sigma`` is the additive noise standard deviation relative to the
    standard deviation of the noiseless response (0.1 -> 20 dB SNR).
    ``noise_ar`` is the AR(1) coefficient of that noise; values near one
    plant residual structure an error-correction stage can learn.  Each
    entry of ``tones`` is ``(frequency in cycles/sample, amplitude,
    response gain)`` of a sinusoid added to the Q column.
    """

    n: int = 4000
    seed: int = 0
    delays: Mapping[str, int] = field(default_factory=lambda: dict(PLANT_DELAYS))
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    noise_sigma: float = 0.1
    noise_ar: float = 0.0
    tones: tuple = ((0.02, 1.0, 1.5), (0.10, 0.6, 0.3))
    driver_ar: float = 0.9
    drift_ar: float = 0.98
    sample_period: float = 10.0

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        """Build from a flat or nested key-value mapping (e.g. parsed TOML)."""
        kw = {}
        delays = dict(PLANT_DELAYS)
        weights = dict(DEFAULT_WEIGHTS)
        for key, val in d.items():
            if key == "delays":
                delays.update({k: int(v) for k, v in val.items()})
            elif key.startswith("delays."):
                delays[key.split(".", 1)[1]] = int(val)
            elif key == "weights":
                weights = {k: float(v) for k, v in val.items()}
            elif key == "tones":
                kw["tones"] = tuple(
                    tuple(float(x) for x in t) + ((1.0,) if len(t) == 2 else ())
                    for t in val
                )
            elif key in ("n", "seed"):
                kw[key] = int(val)
            elif key in ("noise_sigma", "noise_ar", "driver_ar", "drift_ar", "sample_period"):
                kw[key] = float(val)
            else:
                raise KeyError(f"unknown synthetic config key {key!r}")
        return cls(delays=delays, weights=weights, **kw)


@dataclass(frozen=True)
class GroundTruth:
    delays: dict
    relevant_features: tuple
    tones: tuple
    snr_db: float


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    """Unit-variance stationary AR(1) path."""
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    scale = math.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + scale * e[t]
    return x


def _to_range(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # +-4 sigma spans the operating range; the rare excursions beyond are clipped
    return lo + (hi - lo) * np.clip(0.5 + z / 8.0, 0.0, 1.0)


def generate_synthetic(config: SynthConfig = SynthConfig(), seed: int | None = None
                       ) -> tuple[TimeSeriesTable, GroundTruth]:
    """Draw a 16-column record with planted delays, drivers and Q tones.

    The outlet NOx column is a weighted sum of ``tanh`` responses to the
    delayed relevant drivers plus (optionally autocorrelated) noise.  Columns
    with no weight are independent of the target.  Q is a slow AR drift plus
    the configured sinusoids; each tone enters the response with its own gain.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    schema = PLANT_SCHEMA
    labels = [s.label for s in schema]
    inputs = [lab for lab in labels if lab != TARGET]
    delays = {lab: int(config.delays.get(lab, 0)) for lab in inputs}
    if any(d < 0 for d in delays.values()):
        raise ValueError("delays must be non-negative")
    max_delay = max(delays.values())
    n = int(config.n)
    if n < max_delay + 10:
        raise ValueError(f"n={n} too small for max delay {max_delay} (need >= {max_delay + 10})")

    pad = max_delay
    total = n + pad
    t = np.arange(total, dtype=float)
    latent = {}
    for lab in inputs:
        if lab == "Q":
            continue
        latent[lab] = _ar1(rng, total, config.driver_ar)

    drift = _ar1(rng, total, config.drift_ar)
    phases = rng.uniform(0.0, 2 * np.pi, size=len(config.tones))
    tone_series = [amp * np.sin(2 * np.pi * f * t + ph)
                   for (f, amp, _), ph in zip(config.tones, phases)]
    q_raw = drift + sum(tone_series) + 0.05 * rng.standard_normal(total)
    q_scale = q_raw.std()
    latent["Q"] = (q_raw - q_raw.mean()) / q_scale
    q_response = drift + sum(g * s for (_, _, g), s in zip(config.tones, tone_series))
    q_response = (q_response - q_response.mean()) / q_response.std()

    # response at rows pad..total-1, driver i read at row t - d_i
    clean = np.zeros(n)
    for lab, w in config.weights.items():
        d = delays[lab]
        src = q_response if lab == "Q" else latent[lab]
        clean += w * np.tanh(src[pad - d: pad - d + n])
    clean_sd = clean.std()
    noise = _ar1(rng, n, config.noise_ar) * config.noise_sigma * clean_sd
    response = (clean - clean.mean()) / clean_sd + noise / clean_sd

    values = np.empty((n, len(labels)))
    for j, s in enumerate(schema):
        lo, hi = s.expected_range
        z = response if s.target else latent[s.label][pad:]
        values[:, j] = _to_range(z, lo, hi)
    table = TimeSeriesTable(schema, values, config.sample_period)
    snr = math.inf if config.noise_sigma == 0 else -20 * math.log10(config.noise_sigma)
    truth = GroundTruth(
        delays=dict(delays),
        relevant_features=tuple(lab for lab in inputs if config.weights.get(lab, 0) != 0),
        tones=tuple((f, a) for f, a, _ in config.tones),
        snr_db=snr,
    )
    return table, truth


def load_synth_config(path) -> SynthConfig:
    """Parse a TOML key-value file (keys: n, seed, delays.<label>, noise_sigma, tones, ...)."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return SynthConfig.from_mapping(tomllib.load(fh))
