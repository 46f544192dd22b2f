"""Time-series ingestion, chronological splits, synthetic fixtures and metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAPE_EPS = 1e-8


class DataError(ValueError):
    pass


class GapError(DataError):
    pass


@dataclass
class TimeSeriesMatrix:
    values: np.ndarray
    names: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise DataError(f"expected a t x N matrix, got shape {self.values.shape}")
        if not self.names:
            self.names = [f"v{i}" for i in range(self.values.shape[1])]
        if len(self.names) != self.values.shape[1]:
            raise DataError("one name per variable is required")

    @property
    def t(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "TimeSeriesMatrix":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeriesMatrix(self.values[start:stop].copy(), list(self.names), ts)

    def columns(self, idx: Sequence[int]) -> "TimeSeriesMatrix":
        idx = list(idx)
        return TimeSeriesMatrix(self.values[:, idx].copy(), [self.names[i] for i in idx], self.timestamps)


def _parse_cell(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null", "none"):
        return math.nan
    return float(text)


def load_csv(path, forward_fill: bool = False, timestamp_column: str | None = None,
             min_rows: int = 2) -> TimeSeriesMatrix:
    """Read a header-first numeric CSV. Gaps raise unless ``forward_fill``.

    Datasets need two rows; pass ``min_rows=1`` for windows and exported matrices.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        ts_idx = None
        if timestamp_column is not None:
            if timestamp_column not in header:
                raise DataError(f"{path}: no timestamp column {timestamp_column!r}")
            ts_idx = header.index(timestamp_column)
        names = [h for i, h in enumerate(header) if i != ts_idx]
        rows, stamps = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for j, cell in enumerate(row):
                if j == ts_idx:
                    stamps.append(cell.strip())
                    continue
                try:
                    vals.append(_parse_cell(cell))
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {header[j]!r}: cannot parse {cell!r}") from None
            rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    for i, j in zip(*np.nonzero(~np.isfinite(values))):
        if not forward_fill:
            raise GapError(f"{path}: missing value at row {i + 2}, column {names[j]!r}")
        if i == 0:
            raise GapError(f"{path}: cannot forward-fill column {names[j]!r} at the first data row")
        values[i, j] = values[i - 1, j]
    if len(values) < min_rows:
        raise DataError(f"{path}: need at least {min_rows} rows, got {len(values)}")
    return TimeSeriesMatrix(values, names, stamps if ts_idx is not None else None)


def save_csv(path, Y: TimeSeriesMatrix | np.ndarray, names: Sequence[str] | None = None) -> None:
    if isinstance(Y, TimeSeriesMatrix):
        values, names = Y.values, Y.names
    else:
        values = np.atleast_2d(np.asarray(Y, dtype=float))
        names = list(names) if names is not None else [f"v{i}" for i in range(values.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in values:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SplitSpec:
    parts: tuple
    absolute: bool = False

    @classmethod
    def ratios(cls, train, val, test) -> "SplitSpec":
        return cls((train, val, test), absolute=False)

    @classmethod
    def counts(cls, train: int, val: int, test: int) -> "SplitSpec":
        return cls((int(train), int(val), int(test)), absolute=True)

    @classmethod
    def parse(cls, text: str, absolute: bool = False) -> "SplitSpec":
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError(f"split needs three parts a:b:c, got {text!r}")
        return cls.counts(*parts) if absolute else cls.ratios(*parts)

    def lengths(self, t: int) -> tuple[int, int, int]:
        if any(p <= 0 for p in self.parts):
            raise DataError(f"split parts must be positive, got {self.parts}")
        if self.absolute:
            train, val, test = self.parts
            if train + val + test > t:
                raise DataError(f"split {self.parts} needs {train + val + test} rows, series has {t}")
            return t - val - test, val, test
        total = float(sum(self.parts))
        val = int(math.floor(t * self.parts[1] / total + 1e-9))
        test = int(math.floor(t * self.parts[2] / total + 1e-9))
        return t - val - test, val, test


def split(Y: TimeSeriesMatrix, spec: SplitSpec = SplitSpec.ratios(7, 1, 2)):
    """Contiguous train/val/test segments; leftover rows go to train."""
    n_train, n_val, n_test = spec.lengths(Y.t)
    return (Y.rows(0, n_train), Y.rows(n_train, n_train + n_val), Y.rows(n_train + n_val, Y.t))


# -- synthetic data --------------------------------------------------------
def _periodic(k: np.ndarray, period: float) -> np.ndarray:
    # modular phase keeps y[k] == y[k + period] exact for integer periods
    return np.sin(2.0 * np.pi * np.mod(k, period) / period)


def synth(kind: str, t: int, params: dict | None = None, noise: float = 0.0, seed: int = 0) -> TimeSeriesMatrix:
    """Synthetic fixtures.

    kinds: ``sine``, ``trend``, ``sine_plus_trend``, ``sine_abrupt``,
    ``coupled_pair``. Trend terms are ``slope * k / t_scale`` with
    ``t_scale`` defaulting to 1 for ``trend`` and to ``t`` for
    ``sine_plus_trend``.
    """
    if t < 2:
        raise DataError("synthetic series need t >= 2")
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    k = np.arange(t, dtype=np.float64)
    period = float(p.get("period", 12))
    amp = float(p.get("amplitude", 1.0))
    if kind == "sine":
        y = amp * _periodic(k, period)
    elif kind == "trend":
        y = float(p.get("slope", 0.5)) * k / float(p.get("t_scale", 1.0)) + float(p.get("intercept", 0.0))
    elif kind == "sine_plus_trend":
        y = float(p.get("slope", 0.5)) * k / float(p.get("t_scale", t)) + amp * _periodic(k, period)
    elif kind == "sine_abrupt":
        y = amp * _periodic(k, period)
        rate = float(p.get("switch_rate", 0.02))
        jump = float(p.get("jump", 2.0))
        state = np.cumsum(rng.random(t) < rate) % 2
        y = y + jump * state
    elif kind == "coupled_pair":
        return _coupled(t, p, noise, rng)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if noise:
        y = y + noise * rng.standard_normal(t)
    return TimeSeriesMatrix(y[:, None], ["y"])


def _coupled(t: int, p: dict, noise: float, rng) -> TimeSeriesMatrix:
    a = float(p.get("a", 1.0))
    tau = int(p.get("tau", 2))
    period = float(p.get("period", 12))
    ar = float(p.get("ar_scale", 0.5))
    phi = float(p.get("ar_coef", 0.8))
    n_extra = int(p.get("extra_noise_vars", 0))
    n = t + tau
    kk = np.arange(-tau, t, dtype=np.float64)
    latent = np.zeros(n)
    eps = rng.standard_normal(n)
    for i in range(1, n):
        latent[i] = phi * latent[i - 1] + ar * eps[i]
    base = _periodic(kk, period) + latent
    if noise:
        base = base + noise * rng.standard_normal(n)
    v1 = base[tau:]
    v2 = a * base[:t]
    if noise:
        v2 = v2 + noise * rng.standard_normal(t)
    cols = [v1, v2] + [rng.standard_normal(t) for _ in range(n_extra)]
    names = ["x1", "x2"] + [f"noise{i + 1}" for i in range(n_extra)]
    return TimeSeriesMatrix(np.column_stack(cols), names)


# -- metrics ---------------------------------------------------------------
@dataclass
class Metrics:
    mae: float
    rmse: float
    mape: float
    mape_excluded: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape, "mape_excluded": self.mape_excluded}


def metrics(y_true, y_pred) -> Metrics:
    """MAE, RMSE and plain MAPE; targets with ``|y| < 1e-8`` are left out of MAPE."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.size == 0:
        raise DataError("metrics need at least one value")
    if y_true.shape != y_pred.shape:
        raise DataError(f"length mismatch: {y_true.size} targets vs {y_pred.size} predictions")
    err = y_pred - y_true
    keep = np.abs(y_true) >= MAPE_EPS
    mape = float(np.mean(np.abs(err[keep]) / np.abs(y_true[keep]))) if keep.any() else math.nan
    # scale by the largest error so tiny errors do not underflow when squared
    scale = float(np.max(np.abs(err)))
    rmse = scale * float(np.sqrt(np.mean((err / scale) ** 2))) if scale > 0 else 0.0
    return Metrics(float(np.mean(np.abs(err))), rmse, mape, int((~keep).sum()))
