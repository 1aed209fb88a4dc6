"""Run configuration: a JSON document plus command-line overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..data import KINDS, DomainDataset, gen_synthetic_domains, load_domain_dir
from ..training import ConfigError, TrainConfig

TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
DEFAULT_DATASET = {"kind": "stripes", "n": 64, "seed": 0}
DEFAULT_THRESHOLD = 5.0


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    threshold: float = DEFAULT_THRESHOLD  # cycle-loss level for steps-to-threshold
    log_wall_time: bool = False  # real timings in metrics.jsonl break byte-identical logs

    def as_dict(self) -> dict:
        return {
            **dataclasses.asdict(self.train),
            "dataset": self.dataset,
            "threshold": self.threshold,
            "log_wall_time": self.log_wall_time,
        }

    def digest(self) -> str:
        doc = {"version": __version__, **self.as_dict()}
        doc.pop("seed")
        doc.pop("mode")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_id(self) -> str:
        return f"{self.train.mode}-seed{self.train.seed}-{self.digest()[:10]}"


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def _check_type(name: str, value):
    f = TRAIN_FIELDS[name]
    default = f.default
    if name == "force_lambda":
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number or null, got {value!r}")
        return None if value is None else float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


def _dataset_descriptor(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("dataset", f"expected an object, got {raw!r}")
    if "path" in raw:
        extra = set(raw) - {"path", "seed"}
        if extra:
            raise ConfigError("dataset", f"unknown keys {sorted(extra)} for a directory dataset")
        return {"path": str(raw["path"]), "seed": int(raw.get("seed", 0))}
    desc = {**DEFAULT_DATASET, **raw}
    extra = set(desc) - set(DEFAULT_DATASET)
    if extra:
        raise ConfigError("dataset", f"unknown keys {sorted(extra)}")
    if desc["kind"] not in KINDS:
        raise ConfigError("dataset.kind", f"must be one of {KINDS}, got {desc['kind']!r}")
    for key in ("n", "seed"):
        if isinstance(desc[key], bool) or not isinstance(desc[key], int):
            raise ConfigError(f"dataset.{key}", f"expected an integer, got {desc[key]!r}")
    if desc["n"] < 2:
        raise ConfigError("dataset.n", f"must be at least 2, got {desc['n']}")
    return desc


def build_config(doc: dict) -> RunConfig:
    doc = dict(doc)
    dataset = _dataset_descriptor(doc.pop("dataset", {}))
    threshold = doc.pop("threshold", DEFAULT_THRESHOLD)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
        raise ConfigError("threshold", f"expected a number, got {threshold!r}")
    log_wall = doc.pop("log_wall_time", False)
    if not isinstance(log_wall, bool):
        raise ConfigError("log_wall_time", f"expected true/false, got {log_wall!r}")
    unknown = sorted(set(doc) - set(TRAIN_FIELDS))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    kwargs = {k: _check_type(k, v) for k, v in doc.items()}
    return RunConfig(TrainConfig(**kwargs), dataset, float(threshold), log_wall)


def load_config(path=None, sets=(), **flags) -> RunConfig:
    """Read ``path`` (JSON), apply ``--set key=value`` strings, then flags."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config", f"{path}: top level must be an object")
    for item in sets:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_path(doc, key.strip(), parse_value(value))
    for key, value in flags.items():
        if value is not None:
            doc[key] = value
    return build_config(doc)


def load_datasets(cfg: RunConfig) -> tuple[DomainDataset, DomainDataset]:
    desc = cfg.dataset
    if "path" in desc:
        return (load_domain_dir(desc["path"], "A", seed=desc["seed"] * 2),
                load_domain_dir(desc["path"], "B", seed=desc["seed"] * 2 + 1))
    return gen_synthetic_domains(desc["kind"], desc["n"], cfg.train.image_size, desc["seed"])
