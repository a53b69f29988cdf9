"""Command line entry point.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import click

from .data import BundleError, load_bundle
from .dpo_r import evaluate_pairs, fit_theta, load_pairs
from .experiment import ExperimentSpec, run_experiment
from .report import build_report, format_report, run_metrics
from .synthbench import SynthConfig, generate_problem, load_problem, save_problem
from .trainer import ConfigError, TrainConfig, load_run, save_run, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


def _read_json(path: str, what: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise click.BadParameter(f"{path} is not valid JSON: {exc}", param_hint=what) from None
    if not isinstance(data, dict):
        raise click.BadParameter(f"{path} must hold a JSON object", param_hint=what)
    return data


def _is_problem(path: Path) -> bool:
    return (path / "problem.json").is_file()


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Weak-to-strong training with adaptively weighted weak-model ensembles."""


@cli.command("gen-synth")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the seed in CONFIG.")
@click.option("--force", is_flag=True, help="Overwrite an existing problem directory.")
def gen_synth(config, out_dir, seed, force):
    """Generate a synthetic problem (four split bundles plus problem.json)."""
    raw = _read_json(config, "CONFIG")
    if seed is not None:
        raw["seed"] = seed
    problem = generate_problem(SynthConfig.from_dict(raw))
    if (Path(out_dir) / "problem.json").exists() and not force:
        raise click.UsageError(f"{out_dir} already holds a problem; pass --force to overwrite")
    save_problem(problem, out_dir, force=force)
    click.echo(json.dumps({"out": out_dir, "weak_accuracy": problem.weak_accs}, sort_keys=True))


_PY_TYPES = {int: click.INT, float: click.FLOAT, str: click.STRING}


def _config_options(func):
    # one flag per TrainConfig field; None means "not given on the command line"
    for f in reversed(fields(TrainConfig)):
        default_type = type(f.default)
        func = click.option(f"--{f.name.replace('_', '-')}", f.name, type=_PY_TYPES.get(default_type, click.STRING),
                            default=None, help=f"TrainConfig.{f.name} (default {f.default!r}).")(func)
    return func


def _resolve_config(config_file, overrides: dict) -> TrainConfig:
    base = _read_json(config_file, "--config") if config_file else {}
    merged = {**base, **{k: v for k, v in overrides.items() if v is not None}}
    if "seed" not in merged and os.environ.get("RAVEN_SEED"):
        try:
            merged["seed"] = int(os.environ["RAVEN_SEED"])
        except ValueError:
            raise click.BadParameter("RAVEN_SEED must be an integer", param_hint="RAVEN_SEED") from None
    return TrainConfig.from_dict(merged)


@cli.command("train")
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--run-dir", required=True, type=click.Path(file_okay=False), help="Where run artifacts go.")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="TrainConfig JSON; flags win over its values.")
@click.option("--m", "expect_m", type=int, default=None, help="Expected number of weak models.")
@click.option("--split", default="tuning", show_default=True, help="Split to train on (problem directories).")
@click.option("--gt-run", "gt_runs", multiple=True, type=click.Path(exists=True, file_okay=False),
              help="gt-trained run directory used for PGR in metrics.json; repeatable.")
@click.option("--backend", type=click.Choice(["cython", "python"]), default=None, help="Kernel backend.")
@click.option("--force", is_flag=True, help="Overwrite an existing run directory.")
@_config_options
def train_cmd(data_dir, run_dir, config_file, expect_m, split, gt_runs, backend, force, **overrides):
    """Train one method on DATA_DIR (a problem directory or a single bundle)."""
    cfg = _resolve_config(config_file, overrides)
    path = Path(data_dir)
    if _is_problem(path):
        problem = load_problem(path)
        if split not in problem.splits:
            raise click.BadParameter(f"no split {split!r} in {data_dir}", param_hint="--split")
        splits, tuning = problem.splits, problem[split]
    else:
        tuning = load_bundle(path)
        splits = {tuning.split_tag: tuning}
    if expect_m is not None and expect_m != tuning.m:
        raise click.BadParameter(f"bundle has {tuning.m} weak models, not {expect_m}", param_hint="--m")
    if (Path(run_dir) / "result.json").exists() and not force:
        raise click.UsageError(f"{run_dir} already holds a run; pass --force to overwrite")
    gt_probes = [load_run(g)[1] for g in gt_runs]
    result = train(tuning, cfg, backend=backend)
    metrics = run_metrics(result, splits, gt_probes)
    save_run(result, run_dir, metrics=metrics)
    theta = ", ".join(f"{t:.4f}" for t in result.theta.theta)
    click.echo(f"{cfg.method}: {result.total_steps} steps, theta = [{theta}], run -> {run_dir}")
    for tag, acc in metrics["accuracy"].items():
        click.echo(f"  {tag:<10} accuracy {acc:.4f}")


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--target", required=True, type=click.Path(exists=True, file_okay=False),
              help="Labelled target bundle, or a problem directory (its target split is used).")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Also write the JSON report here.")
def report_cmd(run_dirs, target, fmt, out):
    """Target accuracy, PGR and hit/miss for finished runs."""
    tpath = Path(target)
    bundle = load_bundle(tpath / "target" if _is_problem(tpath) else tpath)
    rep = build_report(list(run_dirs), bundle)
    if out:
        Path(out).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    click.echo(json.dumps(rep, indent=2, sort_keys=True) if fmt == "json" else format_report(rep))


def _parse_theta(text: str | None):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got {text!r}", param_hint="--theta") from None


@cli.command("dpo-r")
@click.argument("prefs", type=click.Path(exists=True, dir_okay=False))
@click.option("--theta", default=None, help="Comma separated ensemble weights (default uniform).")
@click.option("--fit", is_flag=True, help="Adapt theta by projected gradient descent before reporting.")
@click.option("--lr-w", type=float, default=0.01, show_default=True)
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write JSON here instead of stdout.")
def dpo_r_cmd(prefs, theta, fit, lr_w, steps, out):
    """Per-pair and mean DPO-R loss over a JSON-lines preference file."""
    pairs = load_pairs(prefs)
    weights = _parse_theta(theta)
    history = None
    if fit:
        w, history = fit_theta(pairs, lr_w=lr_w, steps=steps, theta=weights)
        weights = w.theta
    rep = evaluate_pairs(pairs, weights).to_dict()
    if history is not None:
        rep["fit_history"] = history
    _emit(rep, out)


@cli.command("weights")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def weights_cmd(run_dir):
    """Print a run's theta_trajectory.csv."""
    path = Path(run_dir) / "theta_trajectory.csv"
    if not path.is_file():
        raise click.BadParameter(f"{run_dir} has no theta_trajectory.csv", param_hint="RUN_DIR")
    click.echo(path.read_text(), nl=False)


@cli.command("run-experiment")
@click.argument("spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--backend", type=click.Choice(["cython", "python"]), default=None)
def run_experiment_cmd(spec, jobs, backend):
    """Run every (seed, method) pair of an experiment spec and summarise."""
    es = ExperimentSpec.from_dict(_read_json(spec, "SPEC"), base=Path(spec).parent)
    summary = run_experiment(es, jobs=jobs, backend=backend)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="raven", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (ValueError, BundleError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
