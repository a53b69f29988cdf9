"""Consolidated target-split report over finished run directories."""
from __future__ import annotations

from pathlib import Path

from .data import DataBundle
from .metrics import (
    generalization_gap,
    hit_or_miss,
    pgr_ensemble,
    pgr_single,
    probe_accuracy,
    weak_accuracies,
)
from .trainer import TrainResult, load_run


class ReportError(ValueError):
    pass


def run_metrics(result: TrainResult, splits: dict[str, DataBundle], gt_runs=()) -> dict:
    """Contents of metrics.json for a run evaluated on every labelled split.

    ``gt_runs`` are gt-trained probes (or TrainResults); with them PGR on
    the target split (or the last labelled split) is filled in.
    """
    labelled = {t: b for t, b in splits.items() if b.has_labels}
    out = {
        "method": result.config.method,
        "accuracy": {t: probe_accuracy(result.probe, b) for t, b in labelled.items()},
        "weak_accuracy": {t: weak_accuracies(b) for t, b in labelled.items()},
        "generalization_gap": None, "pgr": None, "variant": None, "pgr_undefined": False,
        "hit_or_miss": None,
    }
    if result.config.method == "gt":
        out["gt_accuracy"] = dict(out["accuracy"])
    if "source" in labelled and "tuning" in labelled:
        out["generalization_gap"] = generalization_gap(result.probe, labelled["source"], labelled["tuning"])
    if not labelled:
        return out
    tag = "target" if "target" in labelled else list(labelled)[-1]
    target = labelled[tag]
    weak = out["weak_accuracy"][tag]
    out["eval_split"] = tag
    gts = [probe_accuracy(getattr(g, "probe", g), target) for g in gt_runs]
    acc = out["accuracy"][tag]
    rep = None
    if gts and result.config.method in ("naive", "gt"):
        rep = pgr_single(weak[result.config.weak_index if result.config.method == "naive" else 0], acc, gts[0])
    elif gts and len(gts) in (1, target.m):
        rep = pgr_ensemble(weak, acc, gts if len(gts) == target.m else gts * target.m)
    if rep is not None:
        out.update(pgr=rep.pgr, variant=rep.variant, pgr_undefined=rep.undefined)
    if result.config.method == "raven" and target.m >= 2:
        hm = hit_or_miss(result, weak)
        out["hit_or_miss"] = {"hit": hm.hit, "tie": hm.tie, "theta_best": hm.theta_best, "acc_best": hm.acc_best}
    return out


def _row(run_dir, summary, acc):
    return {"run": str(run_dir), "method": summary["method"], "seed": summary["config"]["seed"],
            "target_accuracy": acc, "pgr": None, "variant": None, "undefined": False,
            "hit_or_miss": None, "final_theta": summary["final_theta"]}


def build_report(run_dirs, target: DataBundle) -> dict:
    """Per-run target accuracy, PGR and hit/miss.

    Single PGR (naive, gt) pairs with the first gt run. Ensemble PGR (ensemble,
    raven) pairs gt run i with weak model i when there are m gt runs, in the
    order given; a single gt run stands in for all m.
    """
    if not run_dirs:
        raise ReportError("no run directories given")
    if not target.has_labels:
        raise ReportError("target bundle has no labels")
    weak = weak_accuracies(target)
    runs = []
    for rd in run_dirs:
        summary, probe = load_run(rd)
        if (summary["k"], summary["d"], summary["m"]) != (target.k, target.d, target.m):
            raise ReportError(f"{rd}: run shape (k, d, m) = {(summary['k'], summary['d'], summary['m'])} "
                              f"does not match target {(target.k, target.d, target.m)}")
        runs.append((Path(rd), summary, probe_accuracy(probe, target)))
    gt_accs = [acc for _, s, acc in runs if s["method"] == "gt"]

    rows = []
    for rd, summary, acc in runs:
        row = _row(rd, summary, acc)
        method = summary["method"]
        rep = None
        if method in ("naive", "gt") and gt_accs:
            w = weak[summary["config"]["weak_index"] if method == "naive" else 0]
            rep = pgr_single(w, acc, gt_accs[0])
        elif method in ("ensemble", "raven") and gt_accs:
            if len(gt_accs) == target.m:
                rep = pgr_ensemble(weak, acc, gt_accs)
            elif len(gt_accs) == 1:
                rep = pgr_ensemble(weak, acc, gt_accs * target.m)
        if rep is not None:
            row.update(pgr=rep.pgr, variant=rep.variant, undefined=rep.undefined)
        if method == "raven" and target.m >= 2:
            hm = hit_or_miss(summary["final_theta"], weak)
            row["hit_or_miss"] = {"hit": hm.hit, "tie": hm.tie, "theta_best": hm.theta_best, "acc_best": hm.acc_best}
        rows.append(row)
    return {"target": target.split_tag, "weak_accuracy": weak, "gt_accuracy": gt_accs, "runs": rows}


def format_report(report: dict) -> str:
    head = ["method", "seed", "accuracy", "pgr", "variant", "hit/miss", "run"]
    lines = [[r["method"], str(r["seed"]), f"{r['target_accuracy']:.4f}",
              "undef" if r["undefined"] else ("-" if r["pgr"] is None else f"{r['pgr']:.4f}"),
              r["variant"] or "-",
              "-" if r["hit_or_miss"] is None else ("hit" if r["hit_or_miss"]["hit"] else "miss"),
              r["run"]] for r in report["runs"]]
    widths = [max(len(x) for x in col) for col in zip(head, *lines)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*ln) for ln in lines]
    out = [ln.rstrip() for ln in out]
    out.append("weak accuracy on " + report["target"] + ": " + ", ".join(f"{a:.4f}" for a in report["weak_accuracy"]))
    return "\n".join(out)
