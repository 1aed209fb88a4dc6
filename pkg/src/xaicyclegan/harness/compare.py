"""Baseline vs explanation-assisted runs over several seeds."""
from __future__ import annotations

import json
import logging
import statistics
from pathlib import Path

from ..training import MODES, train_loop
from .config import RunConfig, load_datasets
from .plots import Panel, moving_average, write_svg
from .runlog import RunWriter, read_metrics, METRICS

log = logging.getLogger(__name__)

WINDOW = 10
REPORT = "report.json"
REPORT_PLOT = "report.svg"


def steps_to_threshold(cycle: list[float], threshold: float, window: int = WINDOW) -> int | None:
    """First step (1-based) whose trailing ``window``-step mean cycle loss is <= threshold."""
    avg = moving_average(cycle, window)
    for i in range(window - 1, len(avg)):
        if avg[i] <= threshold:
            return i + 1
    return None


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def summarize(runs: list[dict], threshold: float) -> dict:
    summary = {}
    for mode in MODES:
        ok = [r for r in runs if r["mode"] == mode and r["status"] == "ok"]
        stt = [r["steps_to_threshold"] for r in ok]
        summary[mode] = {
            "runs": len([r for r in runs if r["mode"] == mode]),
            "completed": len(ok),
            "reached_threshold": sum(s is not None for s in stt),
            "median_steps_to_threshold": _median(stt),
            "median_final_cycle": _median([r["final_cycle"] for r in ok]),
            "median_final_adversarial": _median([r["final_adversarial"] for r in ok]),
        }
    return summary


def observation(summary: dict, threshold: float) -> str:
    b, x = summary["baseline"], summary["xai"]
    bs, xs = b["median_steps_to_threshold"], x["median_steps_to_threshold"]
    head = (f"median steps to a windowed cycle loss <= {threshold:g}: "
            f"baseline {bs if bs is not None else 'not reached'}, xai {xs if xs is not None else 'not reached'}")
    if bs is None and xs is None:
        verdict = "neither mode reached the threshold"
    elif bs is None:
        verdict = "only xai reached the threshold"
    elif xs is None:
        verdict = "only baseline reached the threshold"
    elif xs < bs:
        verdict = "xai reached the threshold sooner"
    elif xs > bs:
        verdict = "baseline reached the threshold sooner"
    else:
        verdict = "both modes reached the threshold at the same step"
    return f"{head}; {verdict} (observation only, not a pass/fail criterion)"


def _run_entry(cfg: RunConfig, run_dir: Path, datasets) -> dict:
    entry = {"mode": cfg.train.mode, "seed": cfg.train.seed, "run_dir": run_dir.name}
    writer = RunWriter(run_dir, cfg)
    try:
        train_loop(cfg.train, *datasets, sinks=[writer], on_checkpoint=writer.checkpoint, keep_records=False)
        entry["status"] = "ok"
        entry["error"] = None
    except Exception as exc:  # noqa: BLE001 - a failed child must not sink the report
        log.error("run %s failed: %s", run_dir.name, exc)
        entry["status"] = "failed"
        entry["error"] = str(exc)
    finally:
        writer.close()
    rows = read_metrics(run_dir / METRICS)
    cycle = [r["loss_cycle"] for r in rows]
    adv = [0.5 * (r["loss_D_A"] + r["loss_D_B"]) for r in rows]
    entry["records"] = len(rows)
    entry["steps_to_threshold"] = steps_to_threshold(cycle, cfg.threshold) if entry["status"] == "ok" else None
    entry["final_cycle"] = moving_average(cycle, WINDOW)[-1] if cycle else None
    entry["final_adversarial"] = moving_average(adv, WINDOW)[-1] if adv else None
    entry["trajectories"] = {
        "loss_cycle": cycle,
        "adversarial_D_mean": adv,
        "loss_G": [r["loss_G"] for r in rows],
    }
    return entry


def _mean_curve(runs: list[dict], mode: str, key: str) -> list[tuple[float, float]]:
    curves = [r["trajectories"][key] for r in runs if r["mode"] == mode and r["trajectories"][key]]
    if not curves:
        return []
    n = min(len(c) for c in curves)
    mean = [sum(c[i] for c in curves) / len(curves) for i in range(n)]
    return list(zip(range(1, n + 1), moving_average(mean, WINDOW)))


def report_panels(runs: list[dict]) -> list[Panel]:
    return [
        Panel("mean adversarial (discriminator) loss", {m: _mean_curve(runs, m, "adversarial_D_mean") for m in MODES}),
        Panel("mean cycle loss", {m: _mean_curve(runs, m, "loss_cycle") for m in MODES}),
        Panel("mean generator loss", {m: _mean_curve(runs, m, "loss_G") for m in MODES}),
    ]


def run_compare(cfg: RunConfig, seeds: list[int], out_dir: Path) -> dict:
    """Run both modes for every seed under ``out_dir`` and write the report."""
    if not seeds:
        raise ValueError("compare needs at least one seed")
    datasets = load_datasets(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        for mode in MODES:
            child = RunConfig(cfg.train.replace(mode=mode, seed=int(seed)), cfg.dataset, cfg.threshold,
                              cfg.log_wall_time)
            runs.append(_run_entry(child, out_dir / f"{mode}-seed{seed}", datasets))
    summary = summarize(runs, cfg.threshold)
    report = {
        "config_hash": cfg.digest(),
        "threshold": cfg.threshold,
        "window": WINDOW,
        "steps": cfg.train.steps,
        "seeds": [int(s) for s in seeds],
        "runs": runs,
        "summary": summary,
        "observation": observation(summary, cfg.threshold),
    }
    write_report(report, out_dir)
    return report


def write_report(report: dict, out_dir: Path) -> None:
    (Path(out_dir) / REPORT).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    write_svg(report_panels(report["runs"]), Path(out_dir) / REPORT_PLOT, columns=3)
