"""Run directories: manifest, line-delimited metrics, checkpoints, plot."""
from __future__ import annotations

import json
import os
import time
from pathlib import Path

from ..training import LOSS_FIELDS, LossRecord, Trainer
from .checkpoint import checkpoint_save
from .config import RunConfig
from .plots import loss_panels, write_svg

METRICS = "metrics.jsonl"
TIMING = "timing.jsonl"
MANIFEST = "manifest.json"
PLOT = "loss.svg"
RUNS_ENV = "XAIGAN_RUNS_DIR"


def runs_root(out: str | None = None) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(RUNS_ENV, "runs"))


def record_line(record: LossRecord, wall_time: bool) -> str:
    doc = record.as_dict()
    if not wall_time:
        doc["wall_ms"] = 0.0
    return json.dumps({k: doc[k] for k in LOSS_FIELDS}, separators=(",", ":"))


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_manifest(run_dir: Path, cfg: RunConfig) -> None:
    doc = {
        "run_id": run_dir.name,
        "config": cfg.as_dict(),
        "dataset": cfg.dataset,
        "config_hash": cfg.digest(),
        "start_time": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (run_dir / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class RunWriter:
    """Sink and checkpoint callback for :func:`train_loop` that fills ``run_dir``."""

    def __init__(self, run_dir: Path, cfg: RunConfig):
        self.run_dir = Path(run_dir)
        self.cfg = cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for name in (METRICS, TIMING):
            (self.run_dir / name).unlink(missing_ok=True)
        for old in self.run_dir.glob("ckpt_*.xaic"):
            old.unlink()
        write_manifest(self.run_dir, cfg)
        self._metrics = open(self.run_dir / METRICS, "w", encoding="utf-8")
        self._timing = open(self.run_dir / TIMING, "w", encoding="utf-8")

    def __call__(self, record: LossRecord) -> None:
        self._metrics.write(record_line(record, self.cfg.log_wall_time) + "\n")
        self._metrics.flush()
        self._timing.write(json.dumps({"step": record.step, "wall_ms": round(record.wall_ms, 3)}) + "\n")
        self._timing.flush()

    def checkpoint(self, trainer: Trainer, final: bool) -> None:
        name = "final.xaic" if final else f"ckpt_{trainer.step:06d}.xaic"
        checkpoint_save(trainer, self.run_dir / name)

    def close(self) -> None:
        for fh in (self._metrics, self._timing):
            if not fh.closed:
                fh.close()
        write_plot(self.run_dir)


def write_plot(run_dir: Path) -> None:
    records = read_metrics(run_dir / METRICS)
    write_svg(loss_panels(records), run_dir / PLOT)
