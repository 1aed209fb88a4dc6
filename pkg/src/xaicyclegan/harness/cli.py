"""Command line: ``xaigan train|compare|dump-saliency|eval``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..autograd import Tensor, no_grad
from ..data import PPMError, load_ppm, sample_noise_mask, save_ppm
from ..explain import compute_saliency
from ..training import ConfigError, NonFiniteLossError, train_loop
from .checkpoint import CheckpointError, checkpoint_load
from .compare import run_compare
from .config import RunConfig, load_config, load_datasets
from .runlog import RunWriter, runs_root

log = logging.getLogger("xaicyclegan")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON configuration file")
    p.add_argument("--mode", choices=("baseline", "xai"))
    p.add_argument("--steps", type=int)
    p.add_argument("--out", metavar="DIR", help="runs root (default: $XAIGAN_RUNS_DIR or ./runs)")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable, dotted keys reach into 'dataset'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xaigan", description="Saliency-guided CycleGAN training at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    _add_run_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint of the same config")

    p = sub.add_parser("compare", help="baseline vs xai over several seeds")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])

    p = sub.add_parser("dump-saliency", help="write discriminator saliency maps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="P6 PPM image")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--domain", choices=("A", "B"), default="B", help="domain whose critics judge the image")
    p.add_argument("--config", metavar="PATH", help="config supplying saliency settings")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("eval", help="translate a directory of PPM images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--direction", choices=("AB", "BA"), default="AB")
    p.add_argument("--seed", type=int, default=0, help="seed for the soft noise mask")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _config(args, **flags) -> RunConfig:
    return load_config(args.config, args.sets, **flags)


def cli_train(args) -> int:
    cfg = _config(args, seed=args.seed, mode=args.mode, steps=args.steps)
    datasets = load_datasets(cfg)  # fail before creating any run directory
    trainer = None
    if args.resume:
        trainer = checkpoint_load(args.resume, cfg.train).trainer
        trainer.cfg = cfg.train
    run_dir = runs_root(args.out) / cfg.run_id()
    writer = RunWriter(run_dir, cfg)
    try:
        train_loop(cfg.train, *datasets, sinks=[writer], trainer=trainer, on_checkpoint=writer.checkpoint,
                   keep_records=False)
    except NonFiniteLossError as exc:
        log.error("run aborted: %s", exc)
        return EXIT_FAILED
    finally:
        writer.close()
    print(run_dir)
    return EXIT_OK


def cli_compare(args) -> int:
    cfg = _config(args, mode=args.mode, steps=args.steps)
    out_dir = runs_root(args.out) / f"compare-{cfg.digest()[:10]}"
    report = run_compare(cfg, args.seeds, out_dir)
    print(out_dir)
    print(report["observation"])
    failed = [r for r in report["runs"] if r["status"] != "ok"]
    return EXIT_FAILED if failed else EXIT_OK


def cli_dump_saliency(args) -> int:
    cfg = _config(args).train
    loaded = checkpoint_load(args.checkpoint, cfg)
    sample = load_ppm(args.image, domain=args.domain)
    models = loaded.models
    image = sample.pixels.astype(np.float32)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    critics = {"primary": getattr(models, f"D_{args.domain}"), "mask": getattr(models, f"M_{args.domain}")}
    for name, critic in critics.items():
        expl = compute_saliency(critic, image, cfg.saliency_target, cfg.saliency_reduce, source=name)
        save_ppm(expl, out / f"saliency_{name}_{args.domain}.pgm")
    print(out)
    return EXIT_OK


def cli_eval(args) -> int:
    cfg = _config(args).train
    loaded = checkpoint_load(args.checkpoint, cfg)
    gen = loaded.models.G_AB if args.direction == "AB" else loaded.models.G_BA
    files = sorted(Path(args.input).glob("*.ppm"))
    if not files:
        log.error("no .ppm files in %s", args.input)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for f in files:
        sample = load_ppm(f)
        h, w = sample.pixels.shape[1:]
        with no_grad():
            fake = gen(Tensor(sample.pixels.astype(np.float32)), sample_noise_mask(h, w, rng))
        save_ppm(fake, out / f.name)
    print(out)
    return EXIT_OK


COMMANDS = {"train": cli_train, "compare": cli_compare, "dump-saliency": cli_dump_saliency, "eval": cli_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, PPMError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
