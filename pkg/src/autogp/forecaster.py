"""Windowing, end-to-end training, recursive forecasting and rolling-origin evaluation."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, Metrics, TimeSeriesMatrix, metrics
from .kernel_expr import format_expr, parse_expr
from .kernel_search import SearchBudget, greedy_search, kas_search, retrain_zeta
from .location import LocationLearner
from .model import AutoGPModel, ModelConfig, OptimConfig, TrainingPairs, fit
from .multivariate import CrossVariableWeights

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_KINDS = ("SE", "PER", "LIN", "RQ")


@dataclass(frozen=True)
class WindowConfig:
    L: int
    step: int = 1
    horizon: int = 1

    def __post_init__(self):
        if self.L < 1 or self.step < 1 or self.horizon < 1:
            raise ValueError(f"window config needs L, step, horizon >= 1, got {self}")


def _values(Y) -> np.ndarray:
    v = Y.values if isinstance(Y, TimeSeriesMatrix) else np.asarray(Y, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def make_windows(Y, cfg: WindowConfig) -> TrainingPairs:
    """Windows ``M_i`` = rows ``(i-1)*step+1 .. (i-1)*step+L`` with the next row as target.

    ``B = (t - L - 1) // step + 1`` so the last target row never passes ``t``.
    """
    v = _values(Y)
    t = len(v)
    if cfg.step > t:
        raise DataError(f"step {cfg.step} exceeds series length {t}")
    if t < cfg.L + 1:
        raise DataError(f"series of length {t} is too short for windows of length {cfg.L}")
    B = (t - cfg.L - 1) // cfg.step + 1
    starts = np.arange(B) * cfg.step
    M = np.stack([v[s:s + cfg.L] for s in starts])
    y = v[starts + cfg.L].copy()
    return TrainingPairs(M, y, starts + cfg.L + 1)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values) -> "Normalizer":
        v = _values(values)
        mean = v.mean(axis=0)
        std = v.std(axis=0)
        # constant columns keep their scale
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def forward(self, values) -> np.ndarray:
        return (_values(values) - self.mean) / self.std

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean


@dataclass
class SearchSpec:
    strategy: str = "kas"
    kernel: str | None = None
    kinds: tuple = DEFAULT_KINDS
    R: int = 2
    search_epochs: int | None = None

    def __post_init__(self):
        if self.strategy not in ("kas", "greedy", "fixed"):
            raise ValueError(f"unknown search strategy {self.strategy!r}")
        if self.strategy == "fixed" and not self.kernel:
            raise ValueError("fixed strategy needs a kernel expression")


@dataclass
class TrainedModel:
    model: AutoGPModel
    norm: Normalizer
    window: WindowConfig
    train_pairs: TrainingPairs
    history: list = field(default_factory=list)
    budget: SearchBudget | None = None
    seed: int = 0

    @property
    def expression(self) -> str:
        return format_expr(self.model.kernel)

    @property
    def N(self) -> int:
        return self.model.N


def _context_pairs(train_vals: np.ndarray, later: np.ndarray, cfg: WindowConfig) -> TrainingPairs:
    # windows whose targets all fall inside ``later``; context comes from the end of train
    joined = np.vstack([train_vals[-cfg.L:], later])
    return make_windows(joined, WindowConfig(cfg.L, cfg.step, cfg.horizon))


def train(Y, cfg: WindowConfig, search: SearchSpec | None = None, opt: OptimConfig | None = None,
          config: ModelConfig | None = None, seed: int = 0, val=None) -> TrainedModel:
    """Fit the model on the training series ``Y`` (normalised per variable).

    ``val`` is the validation segment that directly follows ``Y``; greedy
    search requires it. KAS falls back to the training pairs when it is
    missing. After KAS the discovered structure is retrained from scratch
    under the same seed with ``zeta = 1/S``.
    """
    search = search or SearchSpec()
    opt = opt or OptimConfig()
    config = config or ModelConfig()
    raw = _values(Y)
    norm = Normalizer.fit(raw)
    z = norm.forward(raw)
    pairs = make_windows(z, cfg)
    val_pairs = None
    if val is not None and len(_values(val)):
        val_pairs = _context_pairs(z, norm.forward(val), cfg)
    search_opt = OptimConfig(opt.lr, search.search_epochs or opt.epochs, opt.decay, opt.step_size)
    budget = None
    if search.strategy == "fixed":
        parse_expr(search.kernel)  # fail fast on bad text before any training
        model = AutoGPModel.build(pairs.M, search.kernel, config, seed)
        history = fit(model, pairs.M, pairs.y, opt)
    elif search.strategy == "kas":
        result = kas_search(pairs, val_pairs or pairs, search.kinds, search.R, search_opt, config, seed)
        budget = result.budget
        # retrain the found structure from a fresh data-driven start; the relaxed
        # parameters sit at amplitudes tuned for the softmax mixture, not for the sum
        model = AutoGPModel.build(pairs.M, format_expr(result.expr), config, seed)
        history = retrain_zeta(model, pairs, opt)
    else:
        if val_pairs is None:
            raise DataError("greedy search needs a validation segment")
        result = greedy_search(pairs, val_pairs, search.kinds, search.R, search_opt, config, seed)
        model, budget, history = result.model, result.budget, result.history
    model.condition(pairs.M, pairs.y)
    return TrainedModel(model, norm, cfg, pairs, history, budget, seed)


def _check_window(tm: TrainedModel, recent) -> np.ndarray:
    r = _values(recent)
    if r.shape != (tm.window.L, tm.N):
        raise ValueError(f"recent window must be {tm.window.L} x {tm.N}, got {r.shape[0]} x {r.shape[1]}")
    return r


def _recursive(model: AutoGPModel, windows: np.ndarray, F: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised recursion over a batch of windows ``(O, L, N)`` -> ``(O, F, N)`` each."""
    O, _, N = windows.shape
    means = np.empty((O, F, N))
    stds = np.empty((O, F, N))
    w = windows.copy()
    for k in range(F):
        m, s = model.posterior_at(w)
        means[:, k], stds[:, k] = m, s
        # drop the oldest row and append the prediction
        w = np.concatenate([w[:, 1:], m[:, None, :]], axis=1)
    return means, stds


def predict(tm: TrainedModel, recent, F: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """F-step recursive forecast from the last L rows; mean and std, each ``F x N``."""
    if F < 1:
        raise ValueError("horizon F must be >= 1")
    window = tm.norm.forward(_check_window(tm, recent))
    means, stds = _recursive(tm.model, window[None], F)
    return tm.norm.inverse(means[0]), stds[0] * tm.norm.std


@dataclass
class EvalResult:
    metrics: Metrics
    per_variable: list
    n_origins: int
    predictions: np.ndarray
    targets: np.ndarray


def _origins(t: int, L: int, F: int, step: int) -> np.ndarray:
    origins = np.arange(L, t - F + 1, step)
    if origins.size == 0:
        raise DataError(f"series of length {t} has no forecast origin for L={L}, F={F}")
    return origins


def _score(preds: np.ndarray, truth: np.ndarray) -> EvalResult:
    per_var = [metrics(truth[..., n], preds[..., n]) for n in range(truth.shape[-1])]
    return EvalResult(metrics(truth, preds), per_var, truth.shape[0], preds, truth)


def evaluate(tm: TrainedModel, series, F: int | None = None, step: int = 1) -> EvalResult:
    """Rolling-origin evaluation over every origin with L rows of history and F rows ahead."""
    F = tm.window.horizon if F is None else F
    v = _values(series)
    if v.shape[1] != tm.N:
        raise ValueError(f"series has {v.shape[1]} variables, model expects {tm.N}")
    L = tm.window.L
    origins = _origins(len(v), L, F, step)
    windows = np.stack([v[o - L:o] for o in origins])
    truth = np.stack([v[o:o + F] for o in origins])
    means, _ = _recursive(tm.model, tm.norm.forward(windows.reshape(-1, tm.N)).reshape(windows.shape), F)
    return _score(tm.norm.inverse(means), truth)


def evaluate_persistence(series, L: int, F: int, step: int = 1) -> EvalResult:
    """Last-value baseline on the same origins as :func:`evaluate`."""
    v = _values(series)
    origins = _origins(len(v), L, F, step)
    truth = np.stack([v[o:o + F] for o in origins])
    preds = np.repeat(v[origins - 1][:, None, :], F, axis=1)
    return _score(preds, truth)


# -- model files -------------------------------------------------------------
def save_model(tm: TrainedModel, path) -> Path:
    path = Path(path)
    model = tm.model
    meta = {
        "format_version": FORMAT_VERSION,
        "L": model.L, "N": model.N,
        "window": asdict(tm.window),
        "config": model.config.to_dict(),
        "rank": int(model.cross.D_prime.shape[1]),
        "kernel": tm.expression,
        "seed": tm.seed,
        "fingerprint": model.cache.fingerprint(),
        "history": [float(x) for x in tm.history],
        "budget": None if tm.budget is None else {"validation_count": tm.budget.validation_count,
                                                  "wall_time": tm.budget.wall_time},
    }
    arrays = {f"param:{k}": v for k, v in model.state_dict().items()}
    arrays.update({"norm:mean": tm.norm.mean, "norm:std": tm.norm.std,
                   "train:M": tm.train_pairs.M, "train:y": tm.train_pairs.y,
                   "train:index": tm.train_pairs.target_index,
                   "meta": np.array(json.dumps(meta))})
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


class ModelFileError(ValueError):
    pass


def load_model(path) -> TrainedModel:
    """Rebuild a model and its conditioning cache from a file written by :func:`save_model`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such model file: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(str(arrays.pop("meta")))
    except (ValueError, KeyError, OSError) as exc:
        raise ModelFileError(f"{path}: not a model file ({exc})") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {meta.get('format_version')}")
    config = ModelConfig.from_dict(meta["config"])
    config.rank = meta["rank"]
    L, N = meta["L"], meta["N"]
    location = LocationLearner(L, N, delta=config.delta, d=config.d, heads=config.heads, hidden=config.hidden)
    cross = CrossVariableWeights.init(N, meta["rank"])
    from .autodiff import Tensor

    model = AutoGPModel(location, parse_expr(meta["kernel"]), cross, Tensor(0.0, requires_grad=True), config)
    model.load_state_dict({k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("param:")})
    pairs = TrainingPairs(arrays["train:M"], arrays["train:y"], arrays["train:index"])
    model.condition(pairs.M, pairs.y)
    if model.cache.fingerprint() != meta["fingerprint"]:
        warnings.warn(f"{path}: rebuilt training cache differs from the saved fingerprint", RuntimeWarning)
    budget = None
    if meta.get("budget"):
        budget = SearchBudget(meta["budget"]["validation_count"], meta["budget"]["wall_time"])
    return TrainedModel(model, Normalizer(arrays["norm:mean"], arrays["norm:std"]),
                        WindowConfig(**meta["window"]), pairs, meta["history"], budget, meta["seed"])
