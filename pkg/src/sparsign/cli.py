"""Command-line experiment runner.

    sparsign run SPEC.json [--seed N] [--out DIR] [--jobs K]
    sparsign bound-check SPEC.json [--out FILE]

Exit codes: 0 success, 1 bound violation, 2 spec parse/schema error,
3 invariant violation, 4 numeric failure during a run.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import analysis
from .compressors import CompressorConfig
from .core import RngStream
from .objectives import QuadraticProblem, ScaledRosenbrock, SyntheticClassification
from .simulation import RunConfig, RunResult, run

log = logging.getLogger("sparsign")

SPEC_VERSION = 1
CSV_HEADER = "round,objective,wrong_agg_fraction,grad_l1,uplink_bits,downlink_bits,kappa_mean"

EXIT_OK, EXIT_VIOLATION, EXIT_PARSE, EXIT_INVARIANT, EXIT_NUMERIC = 0, 1, 2, 3, 4


class SpecError(Exception):
    """Malformed spec: unknown or missing field, wrong type, bad JSON."""


PROBLEM_FIELDS = {
    "rosenbrock_scaled": {"type", "workers", "num_negative", "dim", "negative_mass", "init"},
    "quadratic": {"type", "workers", "dim", "spread", "init"},
    "synthetic_classification": {
        "type", "workers", "classes", "samples_per_worker", "alpha", "feature_dim", "class_separation",
    },
}
RUN_FIELDS = {
    "algorithm", "rounds", "sample_size", "compressor", "local_budget", "global_budget",
    "local_steps", "eta", "eta_local", "server_rule", "batch_size", "track_kappa",
}
COMPRESSOR_FIELDS = {"kind", "budget", "noise_stddev", "levels", "shared_max"}
SPEC_FIELDS = {"version", "name", "problem", "run", "repeats", "master_seed", "output_path"}


def _check_keys(obj: Any, allowed: set, path: str, required: tuple = ()) -> dict:
    if not isinstance(obj, dict):
        raise SpecError(f"{path}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise SpecError(f"{path}: unknown field(s) {', '.join(unknown)}")
    for key in required:
        if key not in obj:
            raise SpecError(f"{path}: missing required field '{key}'")
    return obj


def _typed(obj: dict, key: str, kind, path: str, default=None):
    if key not in obj:
        return default
    val = obj[key]
    ok = isinstance(val, kind) and not (kind in (int, (int, float)) and isinstance(val, bool))
    if not ok:
        raise SpecError(f"{path}.{key}: expected {getattr(kind, '__name__', 'number')}, got {val!r}")
    return val


NUMBER = (int, float)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    problem: dict
    run: RunConfig
    repeats: int = 1
    master_seed: int = 0
    output_path: str = "results"
    version: int = SPEC_VERSION

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @classmethod
    def from_dict(cls, data: Any) -> "ExperimentSpec":
        _check_keys(data, SPEC_FIELDS, "spec", ("version", "name", "problem", "run"))
        version = _typed(data, "version", int, "spec")
        if version != SPEC_VERSION:
            raise SpecError(f"spec.version: unsupported version {version}")
        name = _typed(data, "name", str, "spec")
        problem = _parse_problem(data["problem"])
        run_cfg = _parse_run(data["run"], problem["workers"], _typed(data, "master_seed", int, "spec", 0))
        return cls(
            name=name,
            problem=problem,
            run=run_cfg,
            repeats=_typed(data, "repeats", int, "spec", 1),
            master_seed=run_cfg.master_seed,
            output_path=_typed(data, "output_path", str, "spec", "results"),
            version=version,
        )

    def to_dict(self) -> dict:
        run_dict = self.run.to_dict()
        for key in ("workers", "master_seed", "debug"):
            run_dict.pop(key, None)
        if not self.run.track_kappa:
            run_dict.pop("track_kappa", None)
        return {
            "version": self.version,
            "name": self.name,
            "problem": dict(self.problem),
            "run": run_dict,
            "repeats": self.repeats,
            "master_seed": self.master_seed,
            "output_path": self.output_path,
        }

    def repeat_seed(self, k: int) -> int:
        gen = RngStream(self.master_seed, ("repeat", k)).generator()
        return int(gen.integers(0, 2**63 - 1))


def _parse_problem(obj: Any) -> dict:
    if not isinstance(obj, dict) or "type" not in obj:
        raise SpecError("spec.problem: expected an object with a 'type' field")
    kind = obj["type"]
    if kind not in PROBLEM_FIELDS:
        raise SpecError(f"spec.problem.type: unknown problem {kind!r}")
    _check_keys(obj, PROBLEM_FIELDS[kind], "spec.problem", ("workers",))
    path = "spec.problem"
    _typed(obj, "workers", int, path)
    for key in ("num_negative", "dim", "classes", "samples_per_worker", "feature_dim"):
        _typed(obj, key, int, path)
    for key in ("negative_mass", "alpha", "class_separation", "spread"):
        _typed(obj, key, NUMBER, path)
    if "init" in obj and not isinstance(obj["init"], (int, float, list)):
        raise SpecError(f"{path}.init: expected a number or a list of numbers")
    return dict(obj)


def _parse_run(obj: Any, workers: int, seed: int) -> RunConfig:
    path = "spec.run"
    _check_keys(obj, RUN_FIELDS, path, ("algorithm", "rounds", "sample_size"))
    comp = None
    if "compressor" in obj:
        c = _check_keys(obj["compressor"], COMPRESSOR_FIELDS, path + ".compressor", ("kind",))
        _typed(c, "kind", str, path + ".compressor")
        comp = CompressorConfig(**c)
    kwargs = {}
    for key, kind in (
        ("algorithm", str), ("rounds", int), ("sample_size", int), ("local_steps", int),
        ("batch_size", int), ("server_rule", str), ("track_kappa", bool),
        ("local_budget", NUMBER), ("global_budget", NUMBER), ("eta", NUMBER), ("eta_local", NUMBER),
    ):
        val = _typed(obj, key, kind, path)
        if val is not None:
            kwargs[key] = val
    return RunConfig(workers=workers, compressor=comp, master_seed=seed, **kwargs)


def build_problem(problem: dict, seed: int):
    """Instantiate the problem described by a parsed spec for one repeat."""
    rng = RngStream(seed, ("problem",))
    kind = problem["type"]
    M = problem["workers"]
    if kind == "rosenbrock_scaled":
        return ScaledRosenbrock.sample(
            num_workers=M,
            num_negative=problem.get("num_negative", int(0.8 * M)),
            base_dim=problem.get("dim", 10),
            rng=rng,
            negative_mass=problem.get("negative_mass", 0.01),
            init=problem.get("init", -2.0),
        )
    if kind == "quadratic":
        gen = rng.generator()
        dim = problem.get("dim", 1)
        centers = gen.normal(0.0, problem.get("spread", 0.0), size=(M, dim)) if problem.get("spread") else np.zeros((M, dim))
        return QuadraticProblem(centers, init=problem.get("init"))
    return SyntheticClassification.generate(
        num_classes=problem.get("classes", 10),
        num_workers=M,
        samples_per_worker=problem.get("samples_per_worker", 200),
        alpha=problem.get("alpha", 0.1),
        rng=rng,
        feature_dim=problem.get("feature_dim", 20),
        class_separation=problem.get("class_separation", 1.0),
    )


def load_spec_text(path: str) -> tuple[str, str]:
    """Read a spec file, falling back to the bundled spec of the same name."""
    p = Path(path)
    if p.exists():
        return p.read_text(), str(p)
    bundled = resources.files("sparsign") / "specs" / p.name
    if bundled.is_file():
        return bundled.read_text(), f"<bundled>/{p.name}"
    raise SpecError(f"{path}: no such spec file")


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentSpec.from_dict(data)


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(result: RunResult, path: Path) -> None:
    lines = [CSV_HEADER]
    for r in result.records:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.round, r.objective_value, r.wrong_agg_fraction, r.grad_l1,
                    r.uplink_bits, r.downlink_bits, r.kappa_mean,
                )
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _run_repeat(spec: ExperimentSpec, k: int, out_dir: str) -> dict:
    seed = spec.repeat_seed(k)
    problem = build_problem(spec.problem, seed)
    cfg = RunConfig(**{**spec.run.__dict__, "master_seed": seed})
    result = run(problem, cfg)
    csv_path = Path(out_dir) / f"{spec.name}_r{k}.csv"
    write_csv(result, csv_path)
    return {
        "repeat": k,
        "seed": seed,
        "csv": csv_path.name,
        "initial_objective": result.initial_objective,
        "final_objective": result.final_objective,
        "mean_wrong_agg_fraction": result.mean_wrong_aggregation(),
        "total_uplink_bits": float(result.column("uplink_bits").sum()),
        "total_downlink_bits": float(result.column("downlink_bits").sum()),
        "recurrence_max_deviation": result.recurrence_max_deviation,
    }


def write_summary(spec: ExperimentSpec, rows: list, path: Path) -> None:
    lines = [f"name={spec.name}", f"repeats={spec.repeats}", f"master_seed={spec.master_seed}"]
    for row in rows:
        k = row["repeat"]
        for key, val in row.items():
            if key != "repeat":
                lines.append(f"repeat.{k}.{key}={val if isinstance(val, str) else _fmt(val)}")
    for key in ("final_objective", "mean_wrong_agg_fraction", "total_uplink_bits"):
        vals = np.array([row[key] for row in rows], dtype=float)
        lines.append(f"aggregate.{key}.mean={_fmt(vals.mean())}")
        lines.append(f"aggregate.{key}.std={_fmt(vals.std())}")
        lines.append(f"aggregate.{key}.min={_fmt(vals.min())}")
        lines.append(f"aggregate.{key}.max={_fmt(vals.max())}")
    ratio = np.array([row["final_objective"] / row["initial_objective"] for row in rows])
    lines.append(f"aggregate.final_over_initial.mean={_fmt(ratio.mean())}")
    path.write_text("\n".join(lines) + "\n")


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str] = None, jobs: int = 1) -> Path:
    """Run every repeat, write per-repeat CSVs and the summary; returns the summary path."""
    out = Path(out_dir or spec.output_path)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and spec.repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_repeat, spec, k, str(out)) for k in range(spec.repeats)]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_repeat(spec, k, str(out)) for k in range(spec.repeats)]
    summary = out / f"{spec.name}_summary.txt"
    write_summary(spec, rows, summary)
    return summary


# bound-check ---------------------------------------------------------------

BOUND_FIELDS = {"version", "mode", "p_bar", "q_offset", "q_bar", "workers", "distributions"}


def parse_bound_spec(text: str, source: str = "<spec>") -> list:
    """Return the list of WorkerOutcomeDist objects (or None rows) to check."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _check_keys(data, BOUND_FIELDS, "bound_spec", ("version", "mode"))
    if data["version"] != SPEC_VERSION:
        raise SpecError(f"bound_spec.version: unsupported version {data['version']}")
    mode = data["mode"]
    dists = []
    if mode == "sweep":
        for key in ("p_bar", "workers"):
            if not isinstance(data.get(key), list):
                raise SpecError(f"bound_spec.{key}: expected a list")
        if ("q_offset" in data) == ("q_bar" in data):
            raise SpecError("bound_spec: give exactly one of q_offset and q_bar")
        for p in data["p_bar"]:
            qs = [p + data["q_offset"]] if "q_offset" in data else data["q_bar"]
            for q in qs:
                for M in data["workers"]:
                    if not isinstance(M, int) or M < 1:
                        raise SpecError(f"bound_spec.workers: invalid worker count {M!r}")
                    if M > analysis.MAX_ENUMERATION_WORKERS:
                        raise ValueError(f"M={M} exceeds the enumeration limit")
                    dists.append(analysis.WorkerOutcomeDist.homogeneous(p, q, M))
    elif mode == "distributions":
        if not isinstance(data.get("distributions"), list):
            raise SpecError("bound_spec.distributions: expected a list")
        for i, d in enumerate(data["distributions"]):
            _check_keys(d, {"p", "q"}, f"bound_spec.distributions[{i}]", ("p", "q"))
            dists.append(analysis.WorkerOutcomeDist(d["p"], d["q"]))
    else:
        raise SpecError(f"bound_spec.mode: expected 'sweep' or 'distributions', got {mode!r}")
    return dists


def bound_check(dists: list) -> tuple[list, bool]:
    rows = [analysis.check_distribution(d) for d in dists]
    ok = all(r.status != "VIOLATION" for r in rows)
    return rows, ok


def format_bound_table(rows: list) -> str:
    out = ["p_bar,q_bar,M,exact_prob,bound,slack,status"]
    for r in rows:
        out.append(
            ",".join(
                [_fmt(r.p_bar), _fmt(r.q_bar), str(r.num_workers), _fmt(r.exact_prob),
                 "" if r.bound is None else _fmt(r.bound),
                 "" if r.slack is None else _fmt(r.slack), r.status]
            )
        )
    return "\n".join(out) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sparsign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("spec")
    p_run.add_argument("--seed", type=int, help="override master_seed")
    p_run.add_argument("--out", help="override output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel repeats")
    p_bound = sub.add_parser("bound-check", help="compare exact wrong-aggregation probability with the bound")
    p_bound.add_argument("spec")
    p_bound.add_argument("--out", help="write the table to this file instead of stdout")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        text, source = load_spec_text(args.spec)
        if args.command == "run":
            spec = parse_spec(text, source)
            if args.seed is not None:
                spec = ExperimentSpec.from_dict({**spec.to_dict(), "master_seed": args.seed})
            summary = run_experiment(spec, args.out, args.jobs)
            log.info("wrote %s", summary)
            print(summary)
            return EXIT_OK
        rows, ok = bound_check(parse_bound_spec(text, source))
        table = format_bound_table(rows)
        if args.out:
            Path(args.out).write_text(table)
        else:
            sys.stdout.write(table)
        return EXIT_OK if ok else EXIT_VIOLATION
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
