"""Batch experiments: one synthetic (or fixed) problem per seed, several
methods per problem, a report per seed and a cross-seed summary."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .data import load_bundle
from .report import build_report, run_metrics
from .synthbench import SynthConfig, generate_problem, load_problem, save_problem
from .trainer import ConfigError, TrainConfig, save_run, train


@dataclass
class MethodSpec:
    name: str
    config: TrainConfig


@dataclass
class ExperimentSpec:
    methods: list[MethodSpec]
    seeds: list[int]
    out: Path
    problem: Path | None = None
    synth: SynthConfig | None = None
    split: str = "tuning"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("experiment needs at least one method")
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        if (self.problem is None) == (self.synth is None):
            raise ConfigError("give exactly one of 'problem' or 'synth'")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> ExperimentSpec:
        d = dict(d)
        unknown = set(d) - {"methods", "seeds", "out", "problem", "synth", "split"}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        base = base or Path(".")
        methods = []
        for entry in d.get("methods", []):
            if isinstance(entry, str):
                entry = {"method": entry}
            entry = dict(entry)
            cfg = dict(entry.pop("config", {}))
            method = entry.pop("method", cfg.get("method"))
            name = entry.pop("name", method)
            if entry:
                raise ConfigError(f"unknown method keys: {sorted(entry)}")
            cfg["method"] = method
            methods.append(MethodSpec(name, TrainConfig.from_dict(cfg)))
        out = Path(d.get("out", "experiment"))
        problem = d.get("problem")
        return cls(
            methods=methods, seeds=[int(s) for s in d.get("seeds", [])],
            out=out if out.is_absolute() else base / out,
            problem=None if problem is None else (base / problem if not Path(problem).is_absolute() else Path(problem)),
            synth=None if d.get("synth") is None else SynthConfig.from_dict(d["synth"]),
            split=d.get("split", "tuning"),
        )


def _problem_dir(spec: ExperimentSpec, seed: int) -> Path:
    return spec.problem if spec.problem is not None else spec.out / f"seed_{seed}" / "problem"


def _prepare(spec: ExperimentSpec, seed: int) -> None:
    if spec.synth is None:
        return
    cfg = SynthConfig.from_dict({**spec.synth.to_dict(), "seed": seed})
    save_problem(generate_problem(cfg), _problem_dir(spec, seed), force=True)


def _run_one(spec: ExperimentSpec, seed: int, ms: MethodSpec, backend: str | None) -> str:
    problem = load_problem(_problem_dir(spec, seed))
    cfg = TrainConfig.from_dict({**ms.config.to_dict(), "seed": seed})
    result = train(problem[spec.split], cfg, backend=backend)
    run_dir = spec.out / f"seed_{seed}" / ms.name
    save_run(result, run_dir, metrics=run_metrics(result, problem.splits))
    return str(run_dir)


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return math.fsum(xs) / len(xs) if xs else None


def run_experiment(spec: ExperimentSpec, jobs: int = 1, backend: str | None = None) -> dict:
    """Train every (seed, method) pair, then report per seed and summarise.

    Runs are independent and individually seeded, so the outputs do not
    depend on ``jobs``.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    spec.out.mkdir(parents=True, exist_ok=True)
    tasks = [(seed, ms) for seed in spec.seeds for ms in spec.methods]
    if jobs == 1:
        for seed in spec.seeds:
            _prepare(spec, seed)
        for seed, ms in tasks:
            _run_one(spec, seed, ms, backend)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_prepare, [spec] * len(spec.seeds), spec.seeds))
            futures = [pool.submit(_run_one, spec, seed, ms, backend) for seed, ms in tasks]
            for f in futures:
                f.result()

    per_method: dict[str, dict[str, list]] = {ms.name: {"acc": [], "pgr": [], "hit": []} for ms in spec.methods}
    for seed in spec.seeds:
        problem_dir = _problem_dir(spec, seed)
        target = load_bundle(problem_dir / "target")
        runs = [spec.out / f"seed_{seed}" / ms.name for ms in spec.methods]
        report = build_report(runs, target)
        (spec.out / f"seed_{seed}" / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        for ms, row in zip(spec.methods, report["runs"]):
            agg = per_method[ms.name]
            agg["acc"].append(row["target_accuracy"])
            agg["pgr"].append(row["pgr"])
            if row["hit_or_miss"] is not None:
                agg["hit"].append(row["hit_or_miss"]["hit"])
    summary = {
        "seeds": spec.seeds,
        "methods": {
            name: {
                "mean_target_accuracy": _mean(agg["acc"]),
                "mean_pgr": _mean(agg["pgr"]),
                "hits": sum(agg["hit"]) if agg["hit"] else None,
                "runs": len(agg["acc"]),
            } for name, agg in per_method.items()
        },
    }
    (spec.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

