"""Command-line entry point: ``segdesic {encode,gen,train,eval,ablate}``.

Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 numerical or
contract error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from .errors import ConfigError, SegDesicError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("segdesicnet")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segdesic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, required=False, help="RunConfig JSON (defaults fill the rest)")
        sp.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable)",
        )

    sp = sub.add_parser("encode", help="print the normalized GRID encoding of a Lambert-93 point")
    sp.add_argument("--lon", type=float, required=True, help="easting in EPSG:2154 meters")
    sp.add_argument("--lat", type=float, required=True, help="northing in EPSG:2154 meters")
    sp.add_argument("--out", type=Path, help="directory for resolved_config.json")
    common(sp)

    sp = sub.add_parser("gen", help="generate the synthetic two-domain corpus")
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("train", help="train on a generated corpus")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--split", choices=["target", "source-val"], default="target")
    sp.add_argument("--out", type=Path, help="results directory (default: next to the checkpoint)")

    sp = sub.add_parser("ablate", help="sweep alpha / S / lambda_min / lambda_max")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--alphas", type=_float_list)
    sp.add_argument("--scales", type=_int_list)
    sp.add_argument("--lambda-mins", type=_float_list)
    sp.add_argument("--lambda-maxs", type=_float_list)
    common(sp)
    return p


def _load_config(args) -> config_mod.RunConfig:
    if args.config is not None and not args.config.is_file():
        raise FileNotFoundError(f"config file {args.config} does not exist")
    return config_mod.load(args.config, args.overrides)


def _require_dir(path: Path, what: str) -> None:
    if not path.is_dir():
        raise FileNotFoundError(f"{what} directory {path} does not exist")


def _print_table(payload: dict) -> None:
    width = max(len(k) for k in payload["per_class_iou"]) + 2
    for name, v in payload["per_class_iou"].items():
        shown = "   n/a" if v is None else f"{100 * v:6.2f}"
        print(f"{name:<{width}}{shown}")
    print(f"{'mIoU':<{width}}{100 * payload['miou']:6.2f}")


def cmd_encode(args) -> int:
    from .geo_encoding import encode_pipeline
    from .geodesy import Epsg2154Coord

    cfg = _load_config(args)
    if args.out is not None:
        from .runs import write_resolved

        write_resolved(cfg, args.out)
    enc = encode_pipeline(cfg.encoder_settings, Epsg2154Coord(args.lon, args.lat))
    print(json.dumps([float(v) for v in enc.values]))
    return EXIT_OK


def cmd_gen(args) -> int:
    from .runs import generate

    cfg = _load_config(args)
    path = generate(cfg, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .runs import CHECKPOINT_NAME, train

    cfg = _load_config(args)
    _require_dir(args.data, "data")
    result = train(cfg, args.data, args.out)
    print(
        f"best epoch {result.best_epoch} of {len(result.log)}; "
        f"source-val mIoU {100 * result.best_val:.2f}; checkpoint {args.out / CHECKPOINT_NAME}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .runs import evaluate

    if not args.checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} does not exist")
    _require_dir(args.data, "data")
    payload = evaluate(args.checkpoint, args.data, args.split, args.out)
    _print_table(payload)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .runs import ablate

    cfg = _load_config(args)
    _require_dir(args.data, "data")
    rows = ablate(
        cfg, args.data, args.out,
        alphas=args.alphas, scales=args.scales, lambda_mins=args.lambda_mins, lambda_maxs=args.lambda_maxs,
    )
    print(f"{'lambda_min':>10} {'lambda_max':>10} {'S':>4} {'alpha':>6} {'mIoU':>7}")
    for r in rows:
        print(f"{r['lambda_min']:>10g} {r['lambda_max']:>10g} {r['S']:>4d} {r['alpha']:>6g} {100 * r['miou']:>7.2f}")
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def _thread_limit():
    raw = os.environ.get("SEGDESIC_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SEGDESIC_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("SEGDESIC_THREADS must be >= 0")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"segdesic: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SegDesicError as exc:
        print(f"segdesic: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"segdesic: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
