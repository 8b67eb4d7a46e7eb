"""``deepifsac`` command line: simulate, train, impute, bench, verify, synth."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, load_config, validate
from .data import (CSVFormatError, DataMatrix, atomic_write_text, load_csv, matrix_to_csv, read_mask_csv,
                   synthetic_dataset, write_csv, write_mask_csv)
from .evaluation import run_benchmark, write_reports
from .missingness import KINDS, MissingnessSpec, generate_mask
from .model import ModelConfig, fit_imputer, load_checkpoint, save_checkpoint

log = logging.getLogger("deepifsac")

OUTPUT_ENV = "DEEPIFSAC_OUTPUT_DIR"


def _versions() -> dict:
    return {"deepifsac": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(outdir, command: str, config: dict, seed: int, outputs: dict[str, Path]) -> Path:
    blob = json.dumps(config, sort_keys=True)
    digests = {}
    for key, path in sorted(outputs.items()):
        if key == "timings":
            continue
        digests[Path(path).name] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    manifest = {"command": command, "seed": seed, "config": config,
                "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
                "versions": _versions(), "outputs_sha256": digests}
    path = Path(outdir) / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _output_dir(arg: str | None, default: str) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or default)


def _load_data(args) -> DataMatrix:
    header = {"auto": None, "yes": True, "no": False}[args.header]
    return load_csv(args.data, header=header, label_column=args.label_column)


def _add_data_args(p):
    p.add_argument("--data", required=True, help="input CSV of numeric features")
    p.add_argument("--header", choices=("auto", "yes", "no"), default="auto")
    p.add_argument("--label-column", default=None, help="name or index of a label column to drop")


_MODEL_FLAGS = {
    "epochs": int, "mode": str, "dim": int, "heads": int, "layers": int, "dropout": float, "p_cutmix": float,
    "tau": float, "lr": float, "weight_decay": float, "batch_size": int, "lambda_contrastive": float,
}


def _add_model_args(p):
    for name, typ in _MODEL_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None, dest=name)


def _model_overrides(args) -> dict:
    return {k: getattr(args, k) for k in _MODEL_FLAGS if getattr(args, k, None) is not None}


# -------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    data = _load_data(args)
    if (data.mask == 0).any():
        log.warning("input already has %d missing cells; they stay missing", int((data.mask == 0).sum()))
    spec = MissingnessSpec(args.kind, args.rate, args.seed, args.driver_fraction, args.direction, args.steepness)
    mask = generate_mask(np.where(data.mask == 1, data.values, 0.0), spec) & data.mask
    out = _output_dir(args.out_dir, "runs/simulate")
    masked = data.with_mask(mask)
    write_csv(out / "masked.csv", masked)
    write_mask_csv(out / "mask.csv", mask)
    outputs = {"masked": out / "masked.csv", "mask": out / "mask.csv"}
    write_manifest(out, "simulate", {"data": str(args.data), **vars(spec)}, args.seed, outputs)
    print(f"missing fraction {1 - mask.mean():.4f}; wrote {out / 'masked.csv'} and {out / 'mask.csv'}")
    return 0


def cmd_train(args) -> int:
    data = _load_data(args)
    if args.mask:
        mask = read_mask_csv(args.mask)
        if mask.shape != data.shape:
            raise CSVFormatError(f"mask shape {mask.shape} does not match data shape {data.shape}")
        data = data.with_mask(mask & data.mask)
    config = ModelConfig(**{"seed": args.seed, **_model_overrides(args)})

    def progress(epoch, record):
        if epoch % max(1, config.epochs // 10) == 0 or epoch == config.epochs - 1:
            log.info("epoch %d loss %.4f recon %.4f contrastive %.4f", epoch, record["loss"], record["recon"],
                     record["contrastive"])

    imputer = fit_imputer(data, config, progress)
    save_checkpoint(args.checkpoint, imputer)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "recon", "contrastive"])
    for rec in imputer.history:
        w.writerow([rec["epoch"], repr(rec["loss"]), repr(rec["recon"]), repr(rec["contrastive"])])
    history = Path(args.history or Path(args.checkpoint).with_suffix(".history.csv"))
    atomic_write_text(history, buf.getvalue())
    print(f"wrote checkpoint {args.checkpoint} and loss history {history}")
    return 0


def cmd_impute(args) -> int:
    imputer = load_checkpoint(args.checkpoint)
    data = _load_data(args)
    if data.shape[1] != imputer.n_features:
        raise CSVFormatError(f"checkpoint expects {imputer.n_features} features, data has {data.shape[1]}")
    values = imputer.transform(data)
    atomic_write_text(args.out, matrix_to_csv(values, data.columns))
    print(f"imputed {int((data.mask == 0).sum())} cells; wrote {args.out}")
    return 0


def _materialize(spec) -> DataMatrix:
    if spec.synthetic is not None:
        return synthetic_dataset(**spec.synthetic)
    return load_csv(spec.path, header=spec.header, label_column=spec.label_column)


def cmd_bench(args) -> int:
    cfg = load_config(args.config) if args.config else validate({"datasets": [{"id": "synthetic",
                                                                              "synthetic": {}}]}, "defaults")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.methods:
        cfg = validate({**cfg.canonical(), "methods": args.methods.split(",")}, "flags")
    overrides = _model_overrides(args)
    if overrides:
        cfg.model = {**cfg.model, **overrides}
    cfg = validate(cfg.canonical(), "effective config")
    out = _output_dir(args.out_dir, cfg.output_dir)
    methods = cfg.build_methods()
    reports = []
    for ds in cfg.datasets:
        data = _materialize(ds)
        log.info("dataset %s: %d rows x %d features", ds.id, *data.shape)
        reports += run_benchmark(data, methods, cfg.kinds, cfg.rates, cfg.seed, ds.id, cfg.missingness,
                                 cfg.workers)
    outputs = write_reports(reports, out)
    canonical = cfg.canonical()
    canonical.pop("output_dir")
    canonical.pop("workers")
    write_manifest(out, "bench", canonical, cfg.seed, outputs)
    sys.stdout.write(outputs["ranks"].read_text())
    failed = [f"{r.dataset}/{r.kind}/{r.rate}/{r.method}" for r in reports if r.failed]
    if failed:
        log.error("failed runs: %s", ", ".join(failed))
        return 1
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_synth(args) -> int:
    data = synthetic_dataset(args.rows, args.features, args.factors, args.noise, args.seed)
    write_csv(args.out, data)
    print(f"wrote {args.rows}x{args.features} synthetic dataset to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepifsac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a missingness mask over a complete dataset")
    _add_data_args(p)
    p.add_argument("--kind", choices=KINDS, type=str.upper, default="MCAR")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--driver-fraction", type=float, default=0.1)
    p.add_argument("--direction", choices=("high", "low", "both"), default="high")
    p.add_argument("--steepness", type=float, default=1.0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an imputer and write a checkpoint")
    _add_data_args(p)
    p.add_argument("--mask", default=None, help="0/1 mask CSV (1 = observed) combined with NA cells")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", default=None, help="loss history CSV (default: next to checkpoint)")
    p.add_argument("--seed", type=int, default=0)
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="fill missing cells of a CSV with a trained checkpoint")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("bench", help="run the five-fold benchmark and emit reports and rank tables")
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--methods", default=None, help="comma-separated method names")
    _add_model_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run gradient, mask-rate and loss-identity checks")
    p.add_argument("--quick", action="store_true", help="skip the slower statistical checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="write the bundled synthetic dataset as CSV")
    p.add_argument("--rows", type=int, default=500)
    p.add_argument("--features", type=int, default=10)
    p.add_argument("--factors", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CSVFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
