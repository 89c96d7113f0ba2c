"""Command line entry point: ``cfpower <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, SystemConfig, load_config, sample_seed
from .neural import TrainConfig, load_model, save_model
from .precoding import SCHEMES
from .solver import bisection_maxmin


class CliError(Exception):
    """Reported as one ``error: <kind>: <message>`` line with exit code 2."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _config(args) -> SystemConfig:
    overrides = {"master_seed": getattr(args, "seed", None)}
    if args.config is None:
        return SystemConfig(**{k: v for k, v in overrides.items() if v is not None})
    try:
        return load_config(args.config, **overrides)
    except ConfigError as exc:
        raise CliError("config", str(exc)) from exc


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       loss=args.loss, seed=args.seed or 0)


def _read(path) -> pipeline.Dataset:
    if not Path(path).is_file():
        raise CliError("io", f"dataset not found: {path}")
    return pipeline.read_dataset(path)


def _save(model: pipeline.TrainedModel, path, meta) -> None:
    save_model(path, model.net, model.normalizer, model.history, meta)


def _load(path) -> pipeline.TrainedModel:
    net, norm, _ = load_model(path)
    return pipeline.TrainedModel(net, norm, None)


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.out is None:
        raise CliError("usage", "--out is required")
    _, summary = pipeline.generate_dataset(cfg, args.samples, args.scheme, args.out, workers=args.workers)
    print(f"wrote {summary.written} records to {args.out} "
          f"(non_converged={summary.non_converged}, failed_audit={summary.failed_audit})")
    return 0


def cmd_split(args) -> int:
    data = _read(args.dataset)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    parts = pipeline.split_dataset(data, args.test_count, args.val_fraction, args.seed or 0)
    for name, part in zip(("train", "val", "test"), parts):
        pipeline.write_dataset(part, out / f"{name}.csv")
    print(" ".join(f"{n}={len(p)}" for n, p in zip(("train", "val", "test"), parts)))
    return 0


def cmd_solve_one(args) -> int:
    cfg = _config(args)
    seed = sample_seed(cfg.master_seed, args.index)
    realization, coeffs = pipeline.sample_coefficients(cfg, seed, args.scheme)
    sol = bisection_maxmin(coeffs, cfg, served=realization.served)
    print(f"status {sol.status}")
    print(f"s_star {sol.s_star!r}")
    print("per_ue_sinr " + " ".join(repr(float(v)) for v in sol.per_ue_sinr))
    print(f"iterations {sol.iterations}")
    return 0 if sol.status == "converged" else 1


def cmd_train_central(args) -> int:
    cfg = _config(args)
    train = _read(args.train)
    val = _read(args.val) if args.val else None
    model = pipeline.train_centralized(train, val, cfg, _train_config(args))
    _save(model, args.out, {"role": "centralized", "scheme": train.scheme})
    print(f"final train loss {model.history.train_loss[-1]:.6g}")
    return 0


def cmd_train_local(args) -> int:
    cfg = _config(args)
    train = _read(args.train)
    val = _read(args.val) if args.val else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = pipeline.train_decentralized(train, val, cfg, _train_config(args))
    for l, m in enumerate(models):
        _save(m, out / f"ap{l}.npz", {"role": "decentralized", "ap": l, "scheme": train.scheme})
    print(f"wrote {len(models)} models to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    test = _read(args.test)
    central = _load(args.central) if args.central else None
    local = None
    if args.local_dir:
        local = [_load(Path(args.local_dir) / f"ap{l}.npz") for l in range(test.L)]
    try:
        report = pipeline.evaluate_policies(test, cfg, central, local)
    except ValueError as exc:
        raise CliError("dimension", str(exc)) from exc
    if args.out:
        pipeline.emit_cdf(report, args.out)
    print(pipeline.format_summary(report))
    return 0


def cmd_report(args) -> int:
    if not Path(args.cdf).is_file():
        raise CliError("io", f"report not found: {args.cdf}")
    print(pipeline.format_summary(pipeline.read_cdf(args.cdf)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfpower", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if scheme:
            p.add_argument("--scheme", choices=SCHEMES, default="mr")
        return p

    def training(p):
        p.add_argument("--train", required=True)
        p.add_argument("--val")
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--loss", choices=("mse", "cross_entropy"), default="mse")

    p = common(sub.add_parser("generate", help="label user drops with the max-min optimum"), scheme=True)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("split", help="train/validation/test split of a dataset"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-count", type=int, default=100)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_split)

    p = common(sub.add_parser("solve-one", help="solve the max-min problem for one drop"), scheme=True)
    p.add_argument("--index", type=int, default=0, help="sample index under the master seed")
    p.set_defaults(func=cmd_solve_one)

    p = common(sub.add_parser("train-central", help="train the centralized network"))
    training(p)
    p.set_defaults(func=cmd_train_central)

    p = common(sub.add_parser("train-local", help="train one network per AP"))
    training(p)
    p.set_defaults(func=cmd_train_local)

    p = common(sub.add_parser("evaluate", help="SE of every policy on a test set; --out writes the CDF CSV"))
    p.add_argument("--test", required=True)
    p.add_argument("--central")
    p.add_argument("--local-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summary statistics of a CDF CSV")
    p.add_argument("cdf")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_out = {"train-central", "train-local"}
    if args.command in needs_out and not args.out:
        parser.error("--out is required")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except (pipeline.DatasetError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
