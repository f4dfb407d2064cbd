"""Command line entry point: JSON in, deterministic JSON out.

Every subcommand reads a model file, runs one computation and emits a
single JSON document with a "version" field. Floats are printed with 17
significant digits so output round-trips exactly and repeated runs are
byte-identical. Exit codes: 0 success, 1 validation error, 2 internal
consistency error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import ConsistencyError, ValidationError
from .law import law_distribution, semigroup_distribution, simulate
from .longtime import conditional_distribution, decay_certificate, qprocess, quasi_limit
from .partitions import SetPartition, SiteSet
from .process import (
    DEFAULT_STATE_CAP,
    ProcessModel,
    closure,
    rate_family_from_obj,
)
from .recomb import (
    approx_solution,
    measure_from_obj,
    measure_to_obj,
    ode_oracle,
    solve,
)
from .trees import DEFAULT_TREE_CAP, count_trees, enumerate_trees, tree_to_obj

DEFAULT_REPLICATES = 100_000
DEFAULT_SEED = 0
THREADS_ENV = "FRAGMENTOR_THREADS"


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters shared by the subcommands."""

    subcommand: str
    model_path: str
    measure_path: str | None
    time: float
    method: str
    replicates: int
    seed: int
    tree_cap: int
    state_cap: int
    step: float
    theta: float
    max_trajectories: int
    output: str | None
    threads: int

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValidationError("--t must be nonnegative")
        if self.replicates < 1:
            raise ValidationError("--n must be at least 1")
        if self.tree_cap < 1:
            raise ValidationError("--tree-cap must be at least 1")
        if self.state_cap < 1:
            raise ValidationError("--state-cap must be at least 1")
        if not self.step > 0:
            raise ValidationError("--step must be positive")
        if not self.theta > 0:
            raise ValidationError("--theta must be positive")
        if self.max_trajectories < 0:
            raise ValidationError("--max-trajectories must be nonnegative")
        if self.threads < 1:
            raise ValidationError("--threads must be at least 1")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fragmentor", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--model", required=True, help="rate family JSON file")
        p.add_argument("--output", "-o", default=None, help="write the report here instead of stdout")
        p.add_argument(
            "--threads",
            type=int,
            default=int(os.environ.get(THREADS_ENV, "1")),
            help="cap on worker threads; results are identical for any value",
        )
        p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP)

    p = sub.add_parser("closure", help="compile the state space and generator")
    common(p)

    p = sub.add_parser("law", help="distribution of the chain at time t")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--method", choices=["formula", "semigroup", "mc"], default="semigroup")
    p.add_argument("--n", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--tree-cap", type=int, default=DEFAULT_TREE_CAP)

    p = sub.add_parser("trees", help="enumerate the trees reaching a target state")
    common(p)
    p.add_argument("--target", required=True, help="partition literal, JSON list of lists")
    p.add_argument("--count-only", action="store_true")
    p.add_argument("--tree-cap", type=int, default=DEFAULT_TREE_CAP)

    p = sub.add_parser("simulate", help="Monte Carlo jump-chain runs")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--max-trajectories", type=int, default=100)

    p = sub.add_parser("quasilimit", help="decay constants and the quasi-limit law")
    common(p)

    p = sub.add_parser("qprocess", help="the never-absorbed chain")
    common(p)

    p = sub.add_parser("solve", help="the measure dynamics at time t")
    common(p)
    p.add_argument("--mu", required=True, help="measure JSON file")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--method", choices=["recsol", "ode", "approx"], default="recsol")
    p.add_argument("--step", type=float, default=1e-3, help="fixed step for the ode method")
    p.add_argument("--law", choices=["formula", "semigroup"], default="semigroup")
    p.add_argument("--tree-cap", type=int, default=DEFAULT_TREE_CAP)

    p = sub.add_parser("decay", help="grid certificate for the bulk escape rate")
    common(p)
    p.add_argument("--theta", type=float, required=True)

    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        subcommand=args.subcommand,
        model_path=args.model,
        measure_path=getattr(args, "mu", None),
        time=getattr(args, "t", 0.0),
        method=getattr(args, "method", ""),
        replicates=getattr(args, "n", DEFAULT_REPLICATES),
        seed=getattr(args, "seed", DEFAULT_SEED),
        tree_cap=getattr(args, "tree_cap", DEFAULT_TREE_CAP),
        state_cap=getattr(args, "state_cap", DEFAULT_STATE_CAP),
        step=getattr(args, "step", 1e-3),
        theta=getattr(args, "theta", 1.0),
        max_trajectories=getattr(args, "max_trajectories", 100),
        output=getattr(args, "output", None),
        threads=getattr(args, "threads", 1),
    )


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None


def _load_model(cfg: RunConfig) -> ProcessModel:
    rho = rate_family_from_obj(_load_json(cfg.model_path))
    return closure(rho, state_cap=cfg.state_cap)


def _format_distribution(model: ProcessModel, dist) -> list:
    sites = model.rho.sites
    return [
        {"partition": sites.format_partition(p), "p": float(dist[p])}
        for p in model.states
        if p in dist
    ]


# ---------------------------------------------------------------------------
# JSON emission with fixed float formatting


def _emit(obj, out: list[str], indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, value) in enumerate(obj.items()):
            out.append(pad + "  " + json.dumps(str(key)) + ": ")
            _emit(value, out, indent + 1)
            out.append(",\n" if k + 1 < len(obj) else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        out.append("[\n")
        for k, value in enumerate(seq):
            out.append(pad + "  ")
            _emit(value, out, indent + 1)
            out.append(",\n" if k + 1 < len(seq) else "\n")
        out.append(pad + "]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            out.append("null")
        else:
            out.append(format(x, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, indent)
    else:
        raise ConsistencyError(f"cannot serialize {type(obj).__name__} to JSON")


def render_json(obj) -> str:
    out: list[str] = []
    _emit(obj, out, 0)
    out.append("\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# Subcommands


def _run_closure(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    return {
        "version": __version__,
        "sites": list(sites.labels),
        "state_count": model.n,
        "states": [sites.format_partition(p) for p in model.states],
        "gamma_star": sites.format_partition(model.gamma_star),
        "generator": model.generator,
    }


def _run_law(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    if cfg.method == "formula":
        report = law_distribution(model, cfg.time, tree_cap=cfg.tree_cap)
    elif cfg.method == "mc":
        report, _ = simulate(model, cfg.time, cfg.replicates, seed=cfg.seed, trajectories=False)
    else:
        report = semigroup_distribution(model, cfg.time)
    doc = {
        "version": __version__,
        "t": cfg.time,
        "method": report.method,
        "distribution": _format_distribution(model, report.distribution),
        "diagnostics": dict(report.diagnostics),
    }
    if report.std_errors is not None:
        doc["std_errors"] = _format_distribution(model, report.std_errors)
    return doc


def _run_trees(cfg: RunConfig, args: argparse.Namespace) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    try:
        literal = json.loads(args.target)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--target is not valid JSON: {exc}") from None
    target = sites.parse_partition(literal, carrier=model.carrier)
    if target not in model.state_index:
        raise ValidationError("the target partition is not a state of this model")
    count = count_trees(model, target)
    doc = {
        "version": __version__,
        "target": sites.format_partition(target),
        "count": count,
    }
    if not args.count_only:
        trees = enumerate_trees(model, target, tree_cap=cfg.tree_cap)
        doc["trees"] = [tree_to_obj(sites, t) for t in trees]
    return doc


def _run_simulate(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    report, trajectories = simulate(
        model, cfg.time, cfg.replicates, seed=cfg.seed, trajectories=cfg.max_trajectories > 0
    )
    doc = {
        "version": __version__,
        "t": cfg.time,
        "method": report.method,
        "distribution": _format_distribution(model, report.distribution),
        "std_errors": _format_distribution(model, report.std_errors),
        "diagnostics": dict(report.diagnostics),
    }
    if cfg.max_trajectories > 0:
        doc["trajectories"] = [
            {
                "jump_times": list(tr.jump_times),
                "states": [sites.format_partition(p) for p in tr.states],
            }
            for tr in trajectories[: cfg.max_trajectories]
        ]
        doc["trajectories_shown"] = min(cfg.max_trajectories, len(trajectories))
    return doc


def _run_quasilimit(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    report = quasi_limit(model)
    return {
        "version": __version__,
        "pre_absorbing": [sites.format_partition(p) for p in report.pre_absorbing],
        "decay_rate": report.decay_rate,
        "slow_states": [sites.format_partition(p) for p in report.slow_states],
        "outside_rate": None if math.isinf(report.outside_rate) else report.outside_rate,
        "hit_transforms": [
            {"partition": sites.format_partition(p), "value": v}
            for p, v in report.hit_transforms.items()
        ],
        "normalizer": report.normalizer,
        "distribution": [
            {"partition": sites.format_partition(p), "p": v}
            for p, v in report.distribution.items()
        ],
    }


def _run_qprocess(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    qp = qprocess(model)
    return {
        "version": __version__,
        "decay_rate": qp.decay_rate,
        "support": [sites.format_partition(p) for p in qp.support],
        "transforms": [
            {"partition": sites.format_partition(p), "value": v}
            for p, v in qp.transforms.items()
        ],
        "generator": qp.generator,
    }


def _run_solve(cfg: RunConfig, args: argparse.Namespace) -> dict:
    model = _load_model(cfg)
    sites = model.rho.sites
    mu = measure_from_obj(_load_json(cfg.measure_path), sites.labels)
    if cfg.method == "ode":
        report = ode_oracle(model, mu, cfg.time, cfg.step)
    elif cfg.method == "approx":
        report = approx_solution(model, mu, cfg.time)
    else:
        kwargs = {"tree_cap": cfg.tree_cap} if args.law == "formula" else {}
        report = solve(model, mu, cfg.time, law_method=args.law, **kwargs)
    return {
        "version": __version__,
        "t": cfg.time,
        "method": report.method,
        "measure": measure_to_obj(report.measure, sites.labels),
        "diagnostics": dict(report.diagnostics),
    }


def _run_decay(cfg: RunConfig) -> dict:
    model = _load_model(cfg)
    report = decay_certificate(model, cfg.theta)
    return {
        "version": __version__,
        "theta": report.theta,
        "trivial": report.trivial,
        "slope": report.slope,
        "fitted_c": report.fitted_c,
        "rate_bound": report.rate_bound,
        "grid": list(report.grid),
        "probabilities": list(report.probabilities),
    }


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _config(args)
        if cfg.subcommand == "closure":
            doc = _run_closure(cfg)
        elif cfg.subcommand == "law":
            doc = _run_law(cfg)
        elif cfg.subcommand == "trees":
            doc = _run_trees(cfg, args)
        elif cfg.subcommand == "simulate":
            doc = _run_simulate(cfg)
        elif cfg.subcommand == "quasilimit":
            doc = _run_quasilimit(cfg)
        elif cfg.subcommand == "qprocess":
            doc = _run_qprocess(cfg)
        elif cfg.subcommand == "solve":
            doc = _run_solve(cfg, args)
        elif cfg.subcommand == "decay":
            doc = _run_decay(cfg)
        else:  # pragma: no cover - argparse enforces the choices
            raise ValidationError(f"unknown subcommand {cfg.subcommand!r}")
        text = render_json(doc)
        if cfg.output:
            with open(cfg.output, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConsistencyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
