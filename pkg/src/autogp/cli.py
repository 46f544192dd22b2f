"""``autogp`` command line: search, train, forecast, eval, export-cov, synth.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .data import DataError, SplitSpec, TimeSeriesMatrix, load_csv, save_csv, split, synth
from .forecaster import (DEFAULT_KINDS, ModelFileError, SearchSpec, WindowConfig, evaluate, load_model,
                         make_windows, Normalizer, predict, save_model, train)
from .kernel_expr import KernelParseError, format_expr
from .kernel_search import greedy_search, kas_search
from .model import DivergenceError, ModelConfig, OptimConfig
from .multivariate import covariance_blocks

log = logging.getLogger("autogp")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    L: int = 12
    step: int = 1
    horizon: int = 1
    split: str = "7:1:2"
    strategy: str = "kas"
    R: int = 2
    kinds: list = field(default_factory=lambda: list(DEFAULT_KINDS))
    kernel: str | None = None
    lr: float = 1e-3
    decay: float = 1.0
    step_size: int = 10
    epochs: int = 200
    search_epochs: int | None = None
    delta: int | None = None
    d: int = 8
    rank: int | None = None
    coupling: bool = True
    forward_fill: bool = False
    seed: int = 0
    out: str = "."

    def validate(self) -> None:
        if self.L < 1 or self.step < 1 or self.horizon < 1:
            raise UsageError("L, step and horizon must be >= 1")
        if self.R < 1:
            raise UsageError("R must be >= 1")
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if not 1e-5 <= self.lr <= 1e-2:
            log.warning("learning rate %g lies outside the usual range [1e-5, 1e-2]", self.lr)
        if self.strategy not in ("kas", "greedy", "fixed"):
            raise UsageError(f"unknown strategy {self.strategy!r}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = cls()
        for k, v in raw.items():
            cfg.set(k, v)
        return cfg

    def set(self, key: str, value) -> None:
        """Assign ``key``; string values are coerced to the field's type."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        current = getattr(self, key)
        if isinstance(value, str):
            value = _coerce(key, value, current, fields[key].type)
        setattr(self, key, value)

    def window(self) -> WindowConfig:
        return WindowConfig(self.L, self.step, self.horizon)

    def optim(self) -> OptimConfig:
        return OptimConfig(self.lr, self.epochs, self.decay, self.step_size)

    def model_config(self) -> ModelConfig:
        return ModelConfig(delta=self.delta, d=self.d, rank=self.rank, coupling=self.coupling)

    def search_spec(self) -> SearchSpec:
        strategy = "fixed" if self.kernel else self.strategy
        return SearchSpec(strategy, self.kernel, tuple(self.kinds), self.R, self.search_epochs)


def _coerce(key: str, text: str, current, annotation: str):
    text = text.strip()
    try:
        if "bool" in annotation:
            if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if "list" in annotation:
            return [p.strip() for p in text.split(",") if p.strip()]
        if "None" in annotation and text.lower() in ("none", "null", ""):
            return None
        if "int" in annotation:
            return int(text)
        if "float" in annotation:
            return float(text)
    except ValueError:
        raise UsageError(f"bad value {text!r} for {key}") from None
    return text


# -- commands ----------------------------------------------------------------
def _load(cfg: RunConfig) -> TimeSeriesMatrix:
    if not cfg.data:
        raise UsageError("no dataset given (--data)")
    return load_csv(cfg.data, forward_fill=cfg.forward_fill)


def _segments(cfg: RunConfig):
    Y = _load(cfg)
    return split(Y, SplitSpec.parse(cfg.split))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_search(cfg: RunConfig) -> int:
    if cfg.strategy not in ("kas", "greedy"):
        raise UsageError("search needs --strategy kas or greedy")
    tr, va, _ = _segments(cfg)
    w = cfg.window()
    norm = Normalizer.fit(tr.values)
    z = norm.forward(tr.values)
    pairs = make_windows(z, w)
    val = make_windows(np.vstack([z[-cfg.L:], norm.forward(va.values)]), w)
    search_opt = OptimConfig(cfg.lr, cfg.search_epochs or cfg.epochs, cfg.decay, cfg.step_size)
    fn = kas_search if cfg.strategy == "kas" else greedy_search
    result = fn(pairs, val, cfg.kinds, cfg.R, search_opt, cfg.model_config(), cfg.seed)
    out = _out_dir(cfg)
    text = format_expr(result.expr)
    (out / "kernel.txt").write_text(text + "\n")
    report = {"strategy": cfg.strategy, "R": cfg.R, "kinds": list(cfg.kinds), "seed": cfg.seed,
              "expression": text, "validation_count": result.budget.validation_count,
              "wall_time": result.budget.wall_time, "val_loss": result.val_loss}
    (out / "search_report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(text)
    return EXIT_OK


def cmd_train(cfg: RunConfig, kernel_file: str | None) -> int:
    if kernel_file:
        path = Path(kernel_file)
        if not path.exists():
            raise FileNotFoundError(f"no such kernel file: {path}")
        cfg.kernel = path.read_text().strip()
    tr, va, _ = _segments(cfg)
    tm = train(tr.values, cfg.window(), cfg.search_spec(), cfg.optim(), cfg.model_config(), cfg.seed,
               val=va.values)
    out = _out_dir(cfg)
    save_model(tm, out / "model.npz")
    with (out / "train_log.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss"])
        for i, loss in enumerate(tm.history):
            wr.writerow([i, repr(float(loss))])
    (out / "kernel.txt").write_text(tm.expression + "\n")
    if tm.history:
        print(f"final loss {tm.history[-1]!r}")
    print(tm.expression)
    return EXIT_OK


def cmd_forecast(model_path: str, recent_path: str, F: int, out_path: str) -> int:
    tm = load_model(model_path)
    recent = load_csv(recent_path, min_rows=1)
    if recent.values.shape != (tm.window.L, tm.N):
        raise UsageError(f"recent window must be {tm.window.L} x {tm.N}, got "
                         f"{recent.values.shape[0]} x {recent.values.shape[1]}")
    mean, std = predict(tm, recent.values, F)
    names = [f"{n}_mean" for n in recent.names] + [f"{n}_std" for n in recent.names]
    save_csv(out_path, np.hstack([mean, std]), names)
    return EXIT_OK


def cmd_eval(model_path: str, test_path: str, F: int | None, out_path: str) -> int:
    tm = load_model(model_path)
    test = load_csv(test_path)
    if test.N != tm.N:
        raise UsageError(f"test data has {test.N} variables, model expects {tm.N}")
    res = evaluate(tm, test.values, F)
    m = res.metrics
    with Path(out_path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mae", "rmse", "mape", "mape_excluded"])
        wr.writerow([repr(m.mae), repr(m.rmse), repr(m.mape), m.mape_excluded])
    print(f"mae={m.mae!r} rmse={m.rmse!r} mape={m.mape!r} mape_excluded={m.mape_excluded}")
    return EXIT_OK


def cmd_export_cov(model_path: str, pair, out_dir: str) -> int:
    tm = load_model(model_path)
    model = tm.model
    N = model.N
    if pair is not None:
        m, n = pair
        if not (0 <= m < N and 0 <= n < N):
            raise UsageError(f"pair ({m}, {n}) out of range for N={N}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    H = model.cache.H
    K = model.covariance(H).data
    C = model.kernel.gram(H.T.ravel()).data
    D = model.cross.matrix().data

    def write(name, A):
        save_csv(out / name, A, [f"c{j}" for j in range(A.shape[1])])

    write("K.csv", K)
    write("D.csv", D)
    blocks = covariance_blocks(C, N)
    pairs = [tuple(pair)] if pair is not None else sorted(blocks)
    for (a, b) in pairs:
        write(f"C_{a}_{b}.csv", blocks[(a, b)])
    return EXIT_OK


def cmd_synth(kind: str, t: int, noise: float, seed: int, params: dict, out_path: str) -> int:
    Y = synth(kind, t, params, noise=noise, seed=seed)
    save_csv(out_path, Y)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------
def _add_run_options(p: argparse.ArgumentParser, with_search: bool = True) -> None:
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--data", help="input CSV (header row, one column per variable)")
    p.add_argument("-L", "--window", dest="L", type=int, help="subsequence length L")
    p.add_argument("--step", type=int, help="window moving step")
    p.add_argument("--split", help="train:val:test ratios, default 7:1:2")
    if with_search:
        p.add_argument("--strategy", choices=("kas", "greedy"))
        p.add_argument("-R", type=int, dest="R", help="search depth")
        p.add_argument("--kinds", help="comma-separated basic kernels, e.g. SE,PER,LIN,RQ")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--decay", type=float)
    p.add_argument("--step-size", dest="step_size", type=int)
    p.add_argument("--delta", type=int, help="patch size")
    p.add_argument("--forward-fill", dest="forward_fill", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--save-config", help="write the effective config as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autogp", description="Deep GP forecasting with kernel search")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="search a kernel structure")
    _add_run_options(p)
    p = sub.add_parser("train", help="train a model")
    _add_run_options(p)
    p.add_argument("--kernel", help="fixed kernel expression, e.g. 'SE + PER'")
    p.add_argument("--kernel-file", help="file holding a kernel expression")

    p = sub.add_parser("forecast", help="recursive forecast from a recent window")
    p.add_argument("--model", required=True)
    p.add_argument("--recent", required=True, help="CSV with exactly L rows")
    p.add_argument("-F", "--horizon", dest="F", type=int, default=1)
    p.add_argument("--out", required=True, help="predictions CSV")

    p = sub.add_parser("eval", help="rolling-origin evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("-F", "--horizon", dest="F", type=int)
    p.add_argument("--out", required=True, help="metrics CSV")

    p = sub.add_parser("export-cov", help="write K, D and C blocks as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--pair", type=int, nargs=2, metavar=("M", "N"))
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--kind", required=True,
                   choices=("sine", "trend", "sine_plus_trend", "sine_abrupt", "coupled_pair"))
    p.add_argument("-t", type=int, default=600)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    return parser


_FLAG_KEYS = ("data", "L", "step", "split", "strategy", "R", "lr", "epochs", "decay", "step_size",
              "delta", "forward_fill", "seed", "out", "kernel")


def resolve_config(args) -> RunConfig:
    """File, then ``--set`` overrides, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"no such config file: {path}")
        try:
            cfg = RunConfig.from_json(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    for k in _FLAG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    if getattr(args, "kinds", None):
        cfg.kinds = [p.strip() for p in args.kinds.split(",") if p.strip()]
    cfg.validate()
    return cfg


def _parse_params(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--param {k}: not a number: {v!r}") from None
    return out


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    _accel.apply_thread_cap()
    cmd = args.command
    if cmd in ("search", "train"):
        cfg = resolve_config(args)
        if args.save_config:
            Path(args.save_config).write_text(cfg.to_json() + "\n")
        if cmd == "search":
            return cmd_search(cfg)
        return cmd_train(cfg, args.kernel_file)
    if cmd == "forecast":
        if args.F < 1:
            raise UsageError("-F must be >= 1")
        return cmd_forecast(args.model, args.recent, args.F, args.out)
    if cmd == "eval":
        return cmd_eval(args.model, args.test, args.F, args.out)
    if cmd == "export-cov":
        return cmd_export_cov(args.model, args.pair, args.out)
    return cmd_synth(args.kind, args.t, args.noise, args.seed, _parse_params(args.param), args.out)


def main(argv=None) -> int:
    try:
        return run(argv)
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"autogp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KernelParseError as exc:
        print(f"autogp: invalid kernel expression: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, DataError, ModelFileError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"autogp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
