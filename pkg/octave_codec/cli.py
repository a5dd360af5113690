"""
Command-line entry point: train, encode, decode, eval and bd.

Exit codes: 0 success, 1 any other codec error, 2 configuration error,
3 I/O, dataset or backend error, 4 malformed container or checkpoint.
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from octave_codec import __version__
from octave_codec.bitstream import decode_image_with_stats, encode_image_with_stats
from octave_codec.checkpoint import load_checkpoint
from octave_codec.datasets import NamedImage, load_images, load_training_set, synthetic_images
from octave_codec.entropy import ExternalLosslessBackend, LosslessBackend
from octave_codec.exceptions import (
    BackendError,
    CodecError,
    ConfigError,
    DatasetError,
    FormatError,
)
from octave_codec.images import read_image, write_image
from octave_codec.metrics import MsSsimConfig, ms_ssim_value, psnr, psnr_yuv, scales_for_size
from octave_codec.model import MIN_EXTENT, SPATIAL_FACTOR, CodecModel, ModelConfig, trace_summary
from octave_codec.quantization import QuantizerConfig, QuantMode
from octave_codec.report import ImageResult, RDReport, bd_table, format_bd_table, read_rd_csv
from octave_codec.residual import BACKEND_IDS, ResidualConfig
from octave_codec.settings import CodecSettings, codec_settings
from octave_codec.tensor import Tensor, no_grad
from octave_codec.training import TrainSchedule, train, write_loss_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4


def model_config(s: CodecSettings) -> ModelConfig:
    if s.MAP_CHANNELS != s.WIDTHS[-1]:
        raise ConfigError(f"MAP_CHANNELS={s.MAP_CHANNELS} disagrees with the last WIDTHS entry {s.WIDTHS[-1]}")
    return ModelConfig(
        alpha=s.ALPHA,
        widths=s.WIDTHS,
        kernel_outer=s.KERNEL_OUTER,
        kernel_inner=s.KERNEL_INNER,
        rates=s.TRAIN_RATES,
        use_gdn=s.USE_GDN,
        use_res=s.USE_RES,
    )


def train_schedule(s: CodecSettings) -> TrainSchedule:
    return TrainSchedule(
        epochs=s.EPOCHS,
        batch_size=s.BATCH_SIZE,
        learning_rate=s.LEARNING_RATE,
        seed=s.SEED,
        max_steps=s.MAX_STEPS or None,
    )


def residual_config(s: CodecSettings, quality: int) -> ResidualConfig:
    return ResidualConfig(
        backend=s.RESIDUAL_BACKEND,
        quality=quality,
        fallback=s.RESIDUAL_FALLBACK,
        encode_command=s.RESIDUAL_ENCODE_COMMAND,
        decode_command=s.RESIDUAL_DECODE_COMMAND,
    )


def lossless_backend(s: CodecSettings) -> Optional[LosslessBackend]:
    if s.LOSSLESS_BACKEND == "builtin":
        return None
    return ExternalLosslessBackend(s.LOSSLESS_ENCODE_COMMAND, s.LOSSLESS_DECODE_COMMAND)


def quant_mode(s: CodecSettings) -> QuantMode:
    return "deterministic" if s.DETERMINISTIC_QUANT else "stochastic"


def encode_quality(s: CodecSettings) -> int:
    if s.ENCODE_RESIDUAL_QUALITY:
        return s.ENCODE_RESIDUAL_QUALITY
    if not s.RESIDUAL_QUALITIES:
        raise ConfigError("RESIDUAL_QUALITIES is empty and ENCODE_RESIDUAL_QUALITY is unset")
    return s.RESIDUAL_QUALITIES[-1]


def operating_points(s: CodecSettings) -> list[tuple[int, int]]:
    if len(s.EVAL_BITS) != len(s.RESIDUAL_QUALITIES):
        raise ConfigError(
            f"EVAL_BITS has {len(s.EVAL_BITS)} entries but RESIDUAL_QUALITIES has {len(s.RESIDUAL_QUALITIES)}"
        )
    return list(zip(s.EVAL_BITS, s.RESIDUAL_QUALITIES))


def validate_settings(s: CodecSettings) -> None:
    """Build every derived object once so bad values fail before any work starts."""
    model_config(s)
    train_schedule(s)
    if s.IMAGE_SIZE % SPATIAL_FACTOR or s.IMAGE_SIZE < MIN_EXTENT:
        raise ConfigError(f"IMAGE_SIZE must be a multiple of {SPATIAL_FACTOR} and at least {MIN_EXTENT}")
    if s.SYNTHETIC_IMAGES < 1:
        raise ConfigError("SYNTHETIC_IMAGES must be >= 1")
    if s.WORKERS < 1:
        raise ConfigError("WORKERS must be >= 1")
    if s.RESIDUAL_BACKEND not in BACKEND_IDS:
        raise ConfigError(f"RESIDUAL_BACKEND must be one of {sorted(BACKEND_IDS)}")
    if s.LOSSLESS_BACKEND not in ("builtin", "external"):
        raise ConfigError("LOSSLESS_BACKEND must be builtin or external")
    for bits, quality in operating_points(s):
        QuantizerConfig(bits=bits)
        residual_config(s, quality)
    if s.ENCODE_RESIDUAL_QUALITY < 0:
        raise ConfigError("ENCODE_RESIDUAL_QUALITY must be >= 0")
    QuantizerConfig(bits=s.ENCODE_BITS)
    residual_config(s, encode_quality(s))
    MsSsimConfig(scales=s.TRAIN_MSSSIM_SCALES)
    MsSsimConfig(scales=s.EVAL_MSSSIM_SCALES)


def output_dir(s: CodecSettings) -> Path:
    path = Path(s.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(s: CodecSettings) -> Path:
    path = output_dir(s) / "config.txt"
    path.write_text(s.dump(), encoding="utf-8")
    return path


def _int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(item) for item in text.split(",") if item.strip())
    except ValueError as e:
        raise ConfigError(f"{flag} expects integers, got {text!r}") from e


def cmd_train(args: argparse.Namespace, s: CodecSettings) -> int:
    dataset_dir = args.dataset or s.DATASET
    if dataset_dir:
        data = load_training_set(dataset_dir, s.IMAGE_SIZE)
    else:
        logger.info(f"No dataset configured; using {s.SYNTHETIC_IMAGES} synthetic images")
        data = synthetic_images(s.SYNTHETIC_IMAGES, s.IMAGE_SIZE, seed=s.SEED)
    model = CodecModel(model_config(s), seed=s.SEED)
    logger.info(f"Model has {model.parameter_count()} parameters")
    out = output_dir(s)
    echo_config(s)
    result = train(
        data,
        model,
        train_schedule(s),
        msssim=MsSsimConfig(scales=s.TRAIN_MSSSIM_SCALES),
        checkpoint_dir=out / "checkpoints",
    )
    csv_path = write_loss_csv(result.log, out / "loss.csv")
    first, last = result.log[0].total, result.log[-1].total
    print(f"trained {len(result.log)} steps: loss {first:.5f} -> {last:.5f}; best epoch mean {result.best_loss:.5f}")
    print(f"loss log: {csv_path}")
    print(f"checkpoints: {out / 'checkpoints'}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace, s: CodecSettings) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    bits = s.ENCODE_BITS
    quality = encode_quality(s)
    image = read_image(args.image)
    if args.verbose:
        for line in trace_summary(_trace(model)):
            logger.debug(line)
    encoded = encode_image_with_stats(
        image,
        model,
        bits,
        residual_config(s, quality),
        mode=quant_mode(s),
        seed=s.SEED,
        lossless=lossless_backend(s),
    )
    out = output_dir(s)
    echo_config(s)
    target = out / (Path(args.image).stem + ".ocbs")
    target.write_bytes(encoded.data)
    b = encoded.budget
    print(f"wrote {target} ({b.total_bytes} bytes)")
    print(f"bpp {b.bpp:.6f} = base {b.base_bpp:.6f} + enhancement {b.enhancement_bpp:.6f}")
    return EXIT_OK


def _trace(model: CodecModel) -> list[Any]:
    trace: list[Any] = []
    with no_grad():
        y = model.encode_features(Tensor(np.zeros((1, 3, MIN_EXTENT, MIN_EXTENT))), trace)
        model.decode_features(y, trace)
    return trace


def cmd_decode(args: argparse.Namespace, s: CodecSettings) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = Path(args.bitstream).read_bytes()
    decoded = decode_image_with_stats(data, model, lossless_backend(s), s.RESIDUAL_DECODE_COMMAND)
    out = output_dir(s)
    target = out / (Path(args.bitstream).stem + ".ppm")
    write_image(target, decoded.image)
    c = decoded.container
    print(f"wrote {target} ({c.width}x{c.height}, {c.bits}-bit code maps)")
    print(f"bpp {8.0 * len(data) / (c.width * c.height):.6f}")
    return EXIT_OK


@dataclass
class Evaluator:
    """Encodes and decodes one image at every operating point; picklable for worker processes."""

    model: CodecModel
    points: list[tuple[int, int]]
    residual: dict[int, ResidualConfig]
    mode: QuantMode
    seed: int
    msssim: MsSsimConfig
    lossless: Optional[LosslessBackend]

    def __call__(self, job: tuple[int, NamedImage]) -> list[ImageResult]:
        index, item = job
        x = item.image
        cfg = scales_for_size(min(x.shape[1:]), self.msssim)
        rows = []
        for bits, quality in self.points:
            seed = int(np.random.SeedSequence([self.seed, index, bits, quality]).generate_state(1)[0])
            encoded = encode_image_with_stats(
                x, self.model, bits, self.residual[quality], self.mode, seed, self.lossless
            )
            decoded = decode_image_with_stats(
                encoded.data, self.model, self.lossless, self.residual[quality].decode_command
            )
            b = encoded.budget
            rows.append(
                ImageResult(
                    image=item.name,
                    bits=bits,
                    quality=quality,
                    bpp=b.bpp,
                    base_bpp=b.base_bpp,
                    enhancement_bpp=b.enhancement_bpp,
                    enhancement_share=b.enhancement_share,
                    psnr=psnr(x, decoded.image),
                    psnr_yuv=psnr_yuv(x, decoded.image),
                    msssim=ms_ssim_value(x, decoded.image, cfg),
                    base_psnr=psnr(x, np.clip(decoded.base, 0.0, 1.0)),
                    encoder_seconds=encoded.encoder_seconds,
                    decoder_seconds=decoded.decoder_seconds,
                )
            )
        logger.info(f"Evaluated {item.name} at {len(self.points)} operating points")
        return rows


def cmd_eval(args: argparse.Namespace, s: CodecSettings) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    images = load_images(args.images)
    points = operating_points(s)
    evaluator = Evaluator(
        model=model,
        points=points,
        residual={q: residual_config(s, q) for _, q in points},
        mode=quant_mode(s),
        seed=s.SEED,
        msssim=MsSsimConfig(scales=s.EVAL_MSSSIM_SCALES),
        lossless=lossless_backend(s),
    )
    jobs = list(enumerate(images))
    if s.WORKERS > 1:
        with ProcessPoolExecutor(max_workers=s.WORKERS) as pool:
            per_image = list(pool.map(evaluator, jobs))
    else:
        per_image = [evaluator(job) for job in jobs]
    rows = [row for image_rows in per_image for row in image_rows]

    report = RDReport(
        rows=rows,
        metadata={
            "version": __version__,
            "checkpoint": str(args.checkpoint),
            "images": len(images),
            "quantizer": quant_mode(s),
            "residual_backend": s.RESIDUAL_BACKEND,
            "residual_quality_note": "built-in requantization steps stand in for BPG QPs; not comparable to BPG",
            "msssim": "RGB, averaged over channels",
            "psnr_yuv": "BT.601 full range, (6Y + U + V) / 8",
        },
    )
    out = output_dir(s)
    echo_config(s)
    csv_path = report.write_csv(out / "rd_report.csv")
    json_path = report.write_json(out / "rd_summary.json")
    print(f"{'bits':>4} {'q':>3} {'bpp':>9} {'psnr':>8} {'msssim':>8} {'enh%':>6}")
    for entry in report.aggregate():
        print(
            f"{entry['bits']:>4} {entry['quality']:>3} {entry['bpp']:>9.4f} {entry['psnr']:>8.3f} "
            f"{entry['msssim']:>8.5f} {100.0 * entry['enhancement_share']:>6.1f}"
        )
    print(f"report: {csv_path}, {json_path}")
    return EXIT_OK


def cmd_bd(args: argparse.Namespace, s: CodecSettings) -> int:
    anchor = read_rd_csv(args.anchor)
    test = read_rd_csv(args.test)
    print(format_bd_table(bd_table(anchor, test, method=args.method)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY = value settings file")
    common.add_argument("--seed", type=int, help="Random seed (SEED)")
    common.add_argument("--bits", help="Code-map bit depth; a comma list for eval (EVAL_BITS)")
    common.add_argument("--residual-backend", choices=sorted(BACKEND_IDS), help="RESIDUAL_BACKEND")
    common.add_argument("--residual-quality", help="Residual quality; a comma list for eval (RESIDUAL_QUALITIES)")
    common.add_argument("--deterministic-quant", action="store_true", help="Round to nearest when encoding")
    common.add_argument("--out", help="Output directory (OUTPUT_DIR)")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="octave-codec", description="Variable-rate learned image codec with octave code maps")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="Train a variable-rate model")
    p.add_argument("dataset", nargs="?", help="Image directory (DATASET); synthetic images when omitted")
    p.add_argument("--steps", type=int, help="Optimizer steps (MAX_STEPS)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="Encode an image to an .ocbs container")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="Decode an .ocbs container to PPM")
    p.add_argument("checkpoint")
    p.add_argument("bitstream")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="Rate-distortion evaluation over an image directory")
    p.add_argument("checkpoint")
    p.add_argument("images")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bd", parents=[common], help="Bjontegaard deltas between two report CSVs")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--method", choices=("polyfit", "pchip"), default="polyfit")
    p.set_defaults(handler=cmd_bd)
    return parser


def apply_arguments(args: argparse.Namespace, s: CodecSettings) -> None:
    s.reload()
    if args.config:
        s.load_file(args.config)
    overrides: dict[str, Any] = {
        "SEED": args.seed,
        "OUTPUT_DIR": args.out,
        "RESIDUAL_BACKEND": args.residual_backend,
        "DETERMINISTIC_QUANT": True if args.deterministic_quant else None,
        "MAX_STEPS": getattr(args, "steps", None),
    }
    if args.command == "eval":
        if args.bits:
            overrides["EVAL_BITS"] = _int_list(args.bits, "--bits")
        if args.residual_quality:
            overrides["RESIDUAL_QUALITIES"] = _int_list(args.residual_quality, "--residual-quality")
    elif args.command == "encode":
        for flag, value in (("--bits", args.bits), ("--residual-quality", args.residual_quality)):
            if value is not None and not value.strip().lstrip("-").isdigit():
                raise ConfigError(f"{flag} expects one integer for encode, got {value!r}")
        if args.bits:
            overrides["ENCODE_BITS"] = int(args.bits)
        if args.residual_quality:
            overrides["ENCODE_RESIDUAL_QUALITY"] = int(args.residual_quality)
    s.configure(**overrides)
    validate_settings(s)


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        apply_arguments(args, codec_settings)
        return int(args.handler(args, codec_settings))
    except ConfigError as e:
        print(f"octave-codec: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"octave-codec: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (DatasetError, BackendError, OSError) as e:
        print(f"octave-codec: I/O error: {e}", file=sys.stderr)
        if isinstance(e, BackendError) and e.diagnostics:
            print(e.diagnostics, file=sys.stderr)
        return EXIT_IO
    except CodecError as e:
        print(f"octave-codec: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
