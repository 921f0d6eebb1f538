"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional, Sequence

from .codec import compress_file, decompress_file, evaluate
from .io.checkpoint import read_checkpoint_header, save_checkpoint
from .io.container import MAGIC as CONTAINER_MAGIC
from .io.container import CodedImage
from .io.errors import CodecError
from .io.images import PatchSource, desk_corpus, list_images, load_images
from .plotting import figure_path, plot_rd_curve, plot_telemetry
from .training import PAPER_LATENT_GRID, SweepError, TrainConfig, TrainingDiverged, sweep, train

log = logging.getLogger("vaecodec")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# config-file and flag spellings of TrainConfig fields
_ALIASES = {"lambda": "lmbda"}
_CONFIG_FIELDS = {f.name: f for f in fields(TrainConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _coerce(name: str, raw: str):
    kind = _CONFIG_FIELDS[name].type
    kind = kind if isinstance(kind, type) else {"float": float, "int": int, "str": str}[kind]
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key.replace("-", "_"))
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training configuration (overrides --config)")
    g.add_argument("--config", help="key = value file with TrainConfig fields")
    g.add_argument("--lambda", "--lmbda", dest="lmbda", type=float, help="rate weight (default 0.001)")
    g.add_argument("--latent-channels", type=int)
    g.add_argument("--hidden-channels", type=int)
    g.add_argument("--patch-size", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--steps", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--loss-mode", choices=["rate_distortion", "beta_vae"])
    d = p.add_argument_group("training data")
    d.add_argument("--data", help="directory of PNG/PPM training images (default: synthetic desk corpus)")
    d.add_argument("--desk-count", type=int, default=20, help="synthetic scenes when --data is absent")
    d.add_argument("--desk-size", type=int, default=128)
    d.add_argument("--pool", type=int, default=200, help="fixed patch pool size; 0 draws fresh crops")


def _train_config(args) -> TrainConfig:
    values = read_config(args.config) if args.config else {}
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _dataset(args, config: TrainConfig):
    if args.data:
        source = PatchSource.from_directory(args.data, config.patch_size, seed=config.seed)
    else:
        source = PatchSource(desk_corpus(args.desk_count, args.desk_size, seed=config.seed),
                             config.patch_size, seed=config.seed)
    return source.extract(args.pool) if args.pool > 0 else source


def cmd_train(args) -> int:
    config = _train_config(args)
    dataset = _dataset(args, config)
    model = train(config, dataset, telemetry=args.telemetry, log_every=args.log_every)
    digest = save_checkpoint(model, args.out)
    if args.telemetry:
        plot_telemetry(model.telemetry, figure_path(args.telemetry))
    final = model.telemetry[-1]
    print(f"saved {args.out} (model id {digest.hex()[:16]}), final loss {final['loss']:.6f}, "
          f"mse {final['mse']:.6f}, rate {final['rate_bpp']:.4f} bpp")
    return EXIT_OK


def _grid(text: str) -> list[int]:
    try:
        grid = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated integers, got {text!r}") from None
    if not grid:
        raise UsageError("--grid is empty")
    return grid


def cmd_sweep(args) -> int:
    config = _train_config(args)
    grid = _grid(args.grid)
    dataset = _dataset(args, config)
    if args.eval:
        eval_set = load_images(list_images(args.eval))
        if not eval_set:
            raise CodecError(f"{args.eval}: no readable evaluation images")
    else:
        held = desk_corpus(args.eval_count, args.desk_size, seed=config.seed + 1)
        eval_set = [(f"heldout_{i:03d}", im) for i, im in enumerate(held)]

    models_dir = Path(args.models_dir) if args.models_dir else None
    if models_dir:
        models_dir.mkdir(parents=True, exist_ok=True)

    def keep(latent, model):
        if models_dir:
            save_checkpoint(model, models_dir / f"latent_{latent:03d}.ckpt")

    points = sweep(config, grid, dataset, eval_set, csv_path=args.csv, on_model=keep)
    plot_rd_curve(points, figure_path(args.csv))
    for p in points:
        print(f"latent {p.latent_channels:4d}  {p.bpp:7.4f} bpp  mse {p.mse:.6f}  "
              f"psnr {p.psnr:6.2f} dB  ssim {p.ssim:.4f}")
    print(f"wrote {args.csv} and {figure_path(args.csv)}")
    return EXIT_OK


def cmd_compress(args) -> int:
    summary = compress_file(args.inp, args.model, args.out)
    print(json.dumps(asdict(summary)))
    return EXIT_OK


def cmd_decompress(args) -> int:
    print(json.dumps(decompress_file(args.inp, args.model, args.out)))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rows, mean = evaluate(args.images, args.model, args.csv)
    for r in [*rows, mean]:
        print(f"{r.name:32s} {r.bpp:8.4f} bpp  mse {r.mse:.6f}  psnr {r.psnr:6.2f} dB  ssim {r.ssim:.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        data = Path(args.path).read_bytes()
    except OSError as exc:
        raise CodecError(f"cannot read {args.path}: {exc.strerror or exc}") from None
    if data[:4] == CONTAINER_MAGIC:
        header = CodedImage.from_bytes(data).header_dict()
    else:
        header = read_checkpoint_header(data)
    print(json.dumps(header, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vaecodec", description="Learned lossy image codec.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a codec and save a checkpoint")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--telemetry", help="per-step CSV (a PNG plot is written alongside)")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train one model per latent width and write the RD curve")
    _add_train_flags(p)
    p.add_argument("--grid", default=",".join(map(str, PAPER_LATENT_GRID)))
    p.add_argument("--csv", required=True, help="RD CSV path (a PNG plot is written alongside)")
    p.add_argument("--eval", help="directory of held-out images (default: synthetic held-out scenes)")
    p.add_argument("--eval-count", type=int, default=20)
    p.add_argument("--models-dir", help="also save each grid point's checkpoint here")
    p.set_defaults(func=cmd_sweep)

    for name, func, help_text in (("compress", cmd_compress, "image -> container"),
                                  ("decompress", cmd_decompress, "container -> image")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True, help="checkpoint path")
        p.add_argument("--in", dest="inp", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score every image in a directory")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True, help="directory of PNG/PPM images")
    p.add_argument("--csv", help="per-image CSV with a final mean row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="print a container or checkpoint header")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vaecodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CodecError, OSError, TrainingDiverged, SweepError) as exc:
        print(f"vaecodec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
