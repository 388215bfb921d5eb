"""``ddir train|eval|infer|synth|gradcheck`` command-line entry point.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric (NaN/Inf or a
failed gradient check).  Errors print a single ``ERROR:`` line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, SyntheticConfig, load_manifest, smooth_images, synth_generate
from .imaging import ImageIOError, read_image, write_image
from .model import DdirModel, WiringError, infer_full
from .numerics import NumericError
from .train import LOG_HEADER, evaluate, fit, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class GradcheckFailed(Exception):
    pass


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest_path = cfg.path("data.train_manifest")
    if manifest_path is None:
        raise ConfigError("data.train_manifest is not set")
    manifest = load_manifest(manifest_path, "train", min_lr=cfg["train.patch"])
    if not manifest.records and cfg["train.epochs"] > 0:
        raise DataError(f"{manifest_path}: no training pairs")
    out_dir = Path(args.output) if args.output else cfg.path("io.output_dir")
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    model = DdirModel(cfg.model_config(), seed=cfg["train.seed"])
    deterministic = cfg["train.deterministic"]
    log_path = out_dir / "loss_log.csv"
    save_every = cfg["train.save_every"]
    with log_path.open("w", encoding="utf-8") as log:
        log.write(LOG_HEADER + "\n")

        def on_epoch(entry):
            log.write(entry.csv_row(deterministic) + "\n")
            log.flush()
            if save_every and (entry.epoch + 1) % save_every == 0:
                save_model(ckpt_dir / f"epoch_{entry.epoch + 1:04d}.ddir", model, cfg)

        fit(
            model,
            manifest,
            epochs=cfg["train.epochs"],
            batch=cfg["train.batch"],
            queries=cfg["train.queries"],
            patch=cfg["train.patch"],
            seed=cfg["train.seed"],
            lr=cfg["optim.lr"],
            decay=cfg["optim.decay"],
            decay_every=cfg["optim.decay_every"],
            steps_per_epoch=cfg["train.steps_per_epoch"],
            betas=(cfg["optim.beta1"], cfg["optim.beta2"]),
            eps=cfg["optim.eps"],
            on_epoch=on_epoch,
        )
    final = save_model(out_dir / "final.ddir", model, cfg)
    print(f"wrote {final}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    manifest_path = cfg.path("data.test_manifest")
    if manifest_path is None:
        raise ConfigError("data.test_manifest is not set")
    manifest = load_manifest(manifest_path, "test")
    scales = [args.scale] if args.scale is not None else cfg["eval.scales"]
    mode = cfg["eval.mode"]
    model = None
    if mode == "model":
        if not args.checkpoint:
            raise UsageError("eval.mode=model needs --checkpoint")
        model, _ = load_model(args.checkpoint)
    rows = evaluate(manifest, scales, mode, model, cfg["eval.shave"], cfg["eval.chunk"])
    text = "scale,count,psnr_y\n" + "".join(r.csv_row() + "\n" for r in rows)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    if not args.checkpoint or not args.input or not args.output or args.scale is None:
        raise UsageError("infer needs --checkpoint, --input, --output and --scale")
    if not args.scale > 0:
        raise UsageError(f"scale must be positive, got {args.scale}")
    chunk = _config(args)["eval.chunk"] if args.config else 65536
    model, _ = load_model(args.checkpoint)
    out = infer_full(model, read_image(args.input), args.scale, chunk=chunk)
    write_image(args.output, out)
    print(f"wrote {args.output} ({out.shape[0]}x{out.shape[1]})")
    return EXIT_OK


def synth_config(cfg: RunConfig) -> SyntheticConfig:
    return SyntheticConfig(
        shift=cfg["synth.shift"],
        gain=(cfg["synth.gain_min"], cfg["synth.gain_max"]),
        sigma=(cfg["synth.sigma_min"], cfg["synth.sigma_max"]),
        sigma_grid=cfg["synth.sigma_grid"],
        noise=cfg["synth.noise"],
        seed=cfg["synth.seed"],
        shared_shift=cfg["synth.shared_shift"],
    )


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.output) if args.output else cfg.path("synth.output")
    source = cfg.path("synth.source")
    if source is None:
        images = smooth_images(cfg["synth.count"], cfg["synth.size"], seed=cfg["synth.seed"])
        source = [(f"scene{i:03d}", img) for i, img in enumerate(images)]
    manifest = synth_generate(source, out, synth_config(cfg), cfg["synth.scales"])
    load_manifest(out / "manifest.csv")
    print(f"wrote {len(manifest)} pairs to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import ddir_gradcheck

    cfg = _config(args)
    err = ddir_gradcheck(cfg.model_config(), seed=cfg["train.seed"])
    print(f"max relative error {err:.3e}")
    if err >= 1e-5:
        raise GradcheckFailed(f"gradient check failed: max relative error {err:.3e} >= 1e-5")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddir", description="Dual-level deformable implicit representation for scale-arbitrary SR")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value run configuration")
    p.add_argument("--checkpoint", help="model checkpoint (.ddir)")
    p.add_argument("--scale", type=float, help="upscaling factor")
    p.add_argument("--input", help="input image")
    p.add_argument("--output", help="output path (image, CSV or directory)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, WiringError) as exc:
        code = EXIT_USAGE
        msg = str(exc)
    except (DataError, ImageIOError, CheckpointError, FileNotFoundError, OSError) as exc:
        code = EXIT_DATA
        msg = str(exc)
    except (NumericError, GradcheckFailed, FloatingPointError) as exc:
        code = EXIT_NUMERIC
        msg = str(exc)
    except ValueError as exc:
        code = EXIT_DATA
        msg = str(exc)
    print("ERROR: " + " ".join(msg.split()), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
