"""The deep autoregressive GP: parameters, NLML, cached posterior."""
from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg as sla

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .gp import Posterior, jittered_cholesky, nlml
from .kernel_expr import RelaxedKernel, copy_expr, leaves, parse_expr, sums
from .kernels import BasicKernelKind
from .location import LocationLearner
from .multivariate import CrossVariableWeights, assemble_K, flatten_locations

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, loss: float, detail: str = ""):
        msg = f"non-finite training loss {loss} at epoch {epoch}"
        super().__init__(msg + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.loss = loss


@dataclass
class ModelConfig:
    delta: int | None = None
    d: int = 8
    heads: int = 1
    hidden: tuple = (64, 32)
    rank: int | None = None
    noise_init: float = 0.1
    coupling: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    epochs: int = 200
    decay: float = 1.0
    step_size: int = 10


@dataclass
class GPCache:
    H: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    D: np.ndarray = field(repr=False, default=None)

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.L).tobytes()).hexdigest()[:16]


class AutoGPModel:
    """Location learner + kernel + cross-variable weights + noise."""

    def __init__(self, location: LocationLearner, kernel, cross: CrossVariableWeights,
                 raw_log_sigma2: Tensor, config: ModelConfig):
        self.location = location
        self.kernel = kernel
        self.cross = cross
        self.raw_log_sigma2 = raw_log_sigma2
        self.config = config
        self.cache: GPCache | None = None
        if not config.coupling:
            self.cross.D_prime.data[:] = 0.0

    @classmethod
    def build(cls, M_train, kernel, config: ModelConfig | None = None, seed: int = 0) -> "AutoGPModel":
        """Fresh model. ``kernel`` is kernel text, a KernelExpr, a RelaxedKernel
        or ``("kas", kinds, R)`` for a new relaxed search kernel."""
        config = config or ModelConfig()
        M_train = np.asarray(M_train, dtype=np.float64)
        _, L, N = M_train.shape
        ss = np.random.SeedSequence(seed)
        loc_seed, cross_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        location = LocationLearner(L, N, delta=config.delta, d=config.d, heads=config.heads,
                                   hidden=config.hidden, seed=loc_seed)
        H0 = location(M_train).data
        if isinstance(kernel, str):
            kernel = parse_expr(kernel, H0)
        elif isinstance(kernel, tuple) and kernel and kernel[0] == "kas":
            _, kinds, R = kernel
            kernel = RelaxedKernel.build([BasicKernelKind.parse(k) if isinstance(k, str) else BasicKernelKind(k) for k in kinds], R, H0)
        cross = CrossVariableWeights.init(N, config.rank, seed=cross_seed)
        raw_s2 = Tensor(math.log(config.noise_init), requires_grad=True)
        return cls(location, kernel, cross, raw_s2, config)

    # -- parameters ---------------------------------------------------------
    @property
    def N(self) -> int:
        return self.location.N

    @property
    def L(self) -> int:
        return self.location.L

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.raw_log_sigma2.data))

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"loc.{k}": v for k, v in self.location.named_parameters().items()}
        out.update(self.kernel_parameters())
        out["cross.D_prime"] = self.cross.D_prime
        out["cross.raw_lambda"] = self.cross.raw_lambda
        out["noise.raw_log_sigma2"] = self.raw_log_sigma2
        return out

    def kernel_parameters(self) -> dict[str, Tensor]:
        k = self.kernel
        if isinstance(k, RelaxedKernel):
            out = {f"kernel.basic{i}.{b.kind.name}": b.params.raw for i, b in enumerate(k.basics)}
            out["kernel.alpha"] = k.arch.alpha
            out["kernel.beta"] = k.arch.beta
            return out
        out = {f"kernel.leaf{i}.{lf.kind.name}": lf.params.raw for i, lf in enumerate(leaves(k))}
        out.update({f"kernel.zeta{i}": s.raw_zeta for i, s in enumerate(sums(k))})
        return out

    def trainable(self) -> list[Tensor]:
        params = self.named_parameters()
        if not self.config.coupling:
            params.pop("cross.D_prime")
        return list(params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for k, v in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match {v.shape}")
            v.data[...] = arr

    # -- forward --------------------------------------------------------------
    def locations(self, M) -> Tensor:
        return self.location(M)

    def covariance(self, H1, H2=None) -> Tensor:
        x1 = flatten_locations(H1)
        x2 = x1 if H2 is None else flatten_locations(H2)
        C = self.kernel.gram(x1, x2)
        B2 = ad.as_tensor(H1).shape[0] if H2 is None else ad.as_tensor(H2).shape[0]
        return assemble_K(C, self.cross, B2)

    def loss(self, M, y) -> Tensor:
        """Training NLML of targets ``y`` (B x N) given windows ``M``."""
        H = self.locations(M)
        K = self.covariance(H)
        return nlml(K, np.asarray(y).T.ravel(), ad.exp(self.raw_log_sigma2))

    # -- posterior ------------------------------------------------------------
    def condition(self, M, y) -> GPCache:
        """Factor the training covariance once; inference reuses it."""
        H = self.locations(M).data
        K = self.covariance(H).data
        n = K.shape[0]
        L, jitter = jittered_cholesky(K + self.sigma2 * np.eye(n))
        alpha = sla.cho_solve((L, True), np.asarray(y, dtype=float).T.ravel())
        self.cache = GPCache(H, L, alpha, jitter, self.cross.matrix().data)
        return self.cache

    def _cross_cov(self, Hs: np.ndarray) -> np.ndarray:
        return self.covariance(Hs, self.cache.H).data

    def posterior_at(self, windows) -> tuple[np.ndarray, np.ndarray]:
        """One-step posterior mean and std for a batch of windows, each ``(O, N)``."""
        if self.cache is None:
            raise RuntimeError("model has no conditioning cache; call condition() first")
        Hs = self.locations(windows).data
        O = Hs.shape[0]
        K_st = self._cross_cov(Hs)
        mean = K_st @ self.cache.alpha
        V = sla.solve_triangular(self.cache.L, K_st.T, lower=True)
        x = Hs.T.ravel()
        prior = np.concatenate([
            np.diag(self.kernel.gram(x[n * O:(n + 1) * O], x[n * O:(n + 1) * O]).data) * self.cache.D[n, n]
            for n in range(self.N)])
        var = prior - np.einsum("ij,ij->j", V, V)
        std = np.sqrt(np.clip(var, 0.0, None))
        return mean.reshape(self.N, O).T, std.reshape(self.N, O).T

    def posterior(self, window) -> Posterior:
        """Full N x N posterior for a single window."""
        Hs = self.locations(np.asarray(window)[None]).data
        K_st = self._cross_cov(Hs)
        K_ss = self.covariance(Hs).data
        V = sla.solve_triangular(self.cache.L, K_st.T, lower=True)
        cov = K_ss - V.T @ V
        return Posterior(K_st @ self.cache.alpha, 0.5 * (cov + cov.T))

    def one_step_mse(self, M, y) -> float:
        mean, _ = self.posterior_at(M)
        return float(np.mean((mean - np.asarray(y)) ** 2))


def fit(model: AutoGPModel, M, y, opt: OptimConfig, callback=None) -> list[float]:
    """Full-batch Adam on the NLML. Returns the per-epoch loss trajectory."""
    params = model.trainable()
    optimizer = Adam(params, lr=opt.lr, decay=opt.decay, step_size=opt.step_size)
    history: list[float] = []
    for epoch in range(opt.epochs):
        try:
            loss = model.loss(M, y)
        except np.linalg.LinAlgError as exc:
            raise DivergenceError(epoch, math.nan, str(exc)) from exc
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(epoch, value)
        grads = ad.backward(loss)
        bad = [p for p in params if p in grads and not np.all(np.isfinite(grads[p]))]
        if bad:
            raise DivergenceError(epoch, value, "non-finite gradient")
        optimizer.step(grads)
        history.append(value)
        if callback is not None:
            callback(epoch, value)
    log.debug("fit: %d epochs, loss %.6g -> %.6g", opt.epochs, history[0] if history else math.nan,
              history[-1] if history else math.nan)
    return history


def with_kernel(model: AutoGPModel, kernel) -> AutoGPModel:
    """Copy of ``model``'s location, cross-variable and noise parameters around a new kernel."""
    kernel = copy_expr(kernel) if not isinstance(kernel, RelaxedKernel) else kernel
    return AutoGPModel(copy.deepcopy(model.location), kernel, copy.deepcopy(model.cross),
                       Tensor(model.raw_log_sigma2.data.copy(), requires_grad=True), model.config)


@dataclass
class TrainingPairs:
    """Windows ``M`` (B, L, N), targets ``y`` (B, N), 1-based target rows."""

    M: np.ndarray
    y: np.ndarray
    target_index: np.ndarray

    @property
    def B(self) -> int:
        return self.M.shape[0]
