"""Command-line surface: train, eval, sr, ablate, selfcheck, make-toy-data.

Runs are driven by a YAML config with a versioned schema. Precedence is
command-line ``--set`` overrides, then the config file, then the preset's
defaults ('paper' is the published schedule, 'desk' a minutes-scale run).
Unknown keys anywhere in the config are hard errors so a misspelled
ablation knob cannot silently fall back to a default.

Exit codes: 0 success, 2 validation failure (bad config, missing paths),
3 runtime failure (training crash, failed selfcheck).
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from pathlib import Path

import yaml

from .data import Dataset, SampleSpec, load_image, save_image, write_toy_dataset
from .encoding import EncodingConfig
from .geometry import CoordFrame
from .metrics import EvalProtocol, psnr
from .models import (
    DecoderConfig,
    EncoderConfig,
    ModelBundle,
    load_checkpoint,
    meta_render,
    render,
)
from .selfcheck import run_selfcheck
from .training import (
    TrainConfig,
    ablate,
    default_ablation_matrix,
    evaluate,
    format_ablation_table,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
CONFIG_DIR_ENV = "IPESR_CONFIG_DIR"
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for any configuration problem; maps to exit code 2."""


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "preset": None,
    "data": {"root": None, "train_split": "train", "val_split": "val"},
    "sample": {"lr_patch": 48, "s_max": 4.0, "pixels_per_patch": 2304, "seed": None},
    "train": {
        "epochs": 1000,
        "iters_per_epoch": 1000,
        "batch_size": 16,
        "lr0": 1e-4,
        "lr_halve_every": 200,
        "loss": "l1",
        "seed": 0,
    },
    "encoder": {"blocks": 4, "channels": 32, "kernel_size": 3},
    "decoder": {
        "hidden_layers": 4,
        "hidden_width": 256,
        "skip_connections": True,
        "encoding": {"variant": "ipe", "bandwidth_L": 10, "include_raw": True},
    },
    "model": {"variant": "liif", "residual": True},
    "eval": {"channel_mode": "rgb", "shave": None, "scales": [2.0, 3.0, 4.0]},
    "val_scales": [4.0],
    "output_dir": "runs/default",
}

PRESET_OVERRIDES: dict = {
    "paper": {},
    "desk": {
        "sample": {"lr_patch": 32, "pixels_per_patch": 256},
        "train": {
            "epochs": 20,
            "iters_per_epoch": 100,
            "batch_size": 8,
            "lr_halve_every": 8,
        },
        "decoder": {"hidden_width": 128},
        "eval": {"scales": [2.0, 4.0]},
    },
}


def _merge(base: dict, override: dict, path: str = "") -> None:
    """Deep-merge ``override`` into ``base``; reject keys absent from base."""
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} expects a mapping")
            _merge(base[key], value, where)
        else:
            base[key] = value


def _resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidate = Path(env_dir) / name
        if candidate.is_file():
            return candidate
    raise ConfigError(f"config file not found: {name}")


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
    key_path, raw = assignment.split("=", 1)
    keys = key_path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key: {key_path}")
        node = node[k]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {key_path}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {key_path} is a section, not a value")
    node[leaf] = yaml.safe_load(raw)


class RunConfig:
    """Typed view of one fully merged and validated config tree."""

    def __init__(self, cfg: dict):
        if cfg["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {cfg['schema_version']!r}; "
                f"expected {SCHEMA_VERSION}"
            )
        try:
            self.data_root = Path(cfg["data"]["root"]) if cfg["data"]["root"] else None
            self.train_split = cfg["data"]["train_split"]
            self.val_split = cfg["data"]["val_split"]
            train_cfg = dict(cfg["train"])
            self.train = TrainConfig(**train_cfg)
            sample_cfg = dict(cfg["sample"])
            if sample_cfg.get("seed") is None:
                sample_cfg["seed"] = self.train.seed
            self.sample = SampleSpec(**sample_cfg)
            self.encoder = EncoderConfig(**cfg["encoder"])
            dec = dict(cfg["decoder"])
            dec["encoding"] = EncodingConfig(**dec["encoding"])
            self.decoder = DecoderConfig(**dec)
            self.variant = cfg["model"]["variant"]
            self.residual = bool(cfg["model"]["residual"])
            self.channel_mode = cfg["eval"]["channel_mode"]
            self.shave = cfg["eval"]["shave"]
            self.eval_scales = [float(s) for s in cfg["eval"]["scales"]]
            self.val_scales = [float(s) for s in cfg["val_scales"]]
            self.output_dir = Path(cfg["output_dir"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.variant not in ("liif", "metasr"):
            raise ConfigError(f"model.variant must be liif or metasr, got {self.variant!r}")
        if self.shave is not None and (not isinstance(self.shave, int) or self.shave < 0):
            raise ConfigError("eval.shave must be null or a non-negative integer")

    def protocol(self) -> EvalProtocol | None:
        """Explicit protocol when shave is pinned; else per-scale defaults."""
        if self.shave is None:
            return None
        return EvalProtocol(channel_mode=self.channel_mode, shave=self.shave)


def load_run_config(
    config: str | None,
    preset: str | None,
    sets,
    seed: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Merge preset defaults, the config file, and CLI overrides, in order."""
    file_cfg: dict = {}
    if config is not None:
        path = _resolve_config_path(config)
        loaded = yaml.safe_load(path.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        file_cfg = loaded

    preset_name = preset or file_cfg.get("preset")
    cfg = copy.deepcopy(DEFAULTS)
    if preset_name is not None:
        if preset_name not in PRESET_OVERRIDES:
            raise ConfigError(
                f"unknown preset {preset_name!r}; choose from {sorted(PRESET_OVERRIDES)}"
            )
        _merge(cfg, copy.deepcopy(PRESET_OVERRIDES[preset_name]))
        cfg["preset"] = preset_name
    _merge(cfg, file_cfg)
    if preset is not None:
        cfg["preset"] = preset  # CLI preset wins over the file's key
    for assignment in sets or []:
        _apply_set(cfg, assignment)
    if seed is not None:
        cfg["train"]["seed"] = seed
        if cfg["sample"]["seed"] is not None:
            cfg["sample"]["seed"] = seed
    if out is not None:
        cfg["output_dir"] = out
    return RunConfig(cfg)


def _scan_required(root: Path | None, split: str, key: str) -> Dataset:
    if root is None:
        raise ConfigError(f"missing required config key: {key}")
    try:
        return Dataset.scan(root, split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_bundle(rc: RunConfig) -> ModelBundle:
    return ModelBundle(
        encoder_config=rc.encoder,
        decoder_config=rc.decoder,
        variant=rc.variant,
        residual=rc.residual,
        seed=rc.train.seed,
    )


def cmd_train(args) -> int:
    rc = load_run_config(args.config, args.preset, args.set, args.seed, args.out)
    train_ds = _scan_required(rc.data_root, rc.train_split, "data.root")
    try:
        val_ds = Dataset.scan(rc.data_root, rc.val_split)
    except ValueError:
        print(f"note: no validation split {rc.val_split!r}; skipping validation")
        val_ds = None
    bundle = _build_bundle(rc)
    bundle, logs = train(
        bundle,
        train_ds,
        rc.train,
        rc.sample,
        val_dataset=val_ds,
        val_scales=rc.val_scales,
        protocol=rc.protocol(),
        out_dir=rc.output_dir,
        resume=args.resume,
    )
    steps = sum(1 for r in logs if r["kind"] == "iter")
    print(f"training complete: {steps} steps this run; outputs in {rc.output_dir}")
    return EXIT_OK


def _parse_scales(text: str) -> list[float]:
    try:
        scales = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --scales value {text!r}") from exc
    if not scales or any(s <= 0 for s in scales):
        raise ConfigError("--scales entries must be positive numbers")
    return scales


def cmd_eval(args) -> int:
    bundle = _load_bundle(args.checkpoint)
    dataset = _scan_required(Path(args.data), args.split, "data root argument")
    scales = _parse_scales(args.scales)
    protocol = (
        EvalProtocol(channel_mode=args.channel_mode, shave=args.shave)
        if args.shave is not None
        else None
    )
    report = evaluate(bundle, dataset, scales, protocol, channel_mode=args.channel_mode)
    header = f"{'scale':>8}  {'model_psnr':>11}  {'model_ssim':>11}  {'bicubic_psnr':>13}  {'bicubic_ssim':>13}"
    print(header)
    for s in report["scales"]:
        m = report["mean"][s]
        print(
            f"{'x%g' % s:>8}  {m['model_psnr']:11.4f}  {m['model_ssim']:11.5f}  "
            f"{m['bicubic_psnr']:13.4f}  {m['bicubic_ssim']:13.5f}"
        )
    if args.out:
        serializable = {
            "scales": report["scales"],
            "mean": {str(s): report["mean"][s] for s in report["scales"]},
            "per_image": {
                img: {str(s): vals for s, vals in by_scale.items()}
                for img, by_scale in report["per_image"].items()
            },
        }
        Path(args.out).write_text(json.dumps(serializable, indent=2, sort_keys=True))
        print(f"wrote {args.out}")
    return EXIT_OK


def _load_bundle(path: str) -> ModelBundle:
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, RuntimeError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    """'WxH' -> (height, width)."""
    try:
        w, h = (int(tok) for tok in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"--size expects WxH, got {text!r}") from exc
    if w < 1 or h < 1:
        raise ConfigError("--size dimensions must be >= 1")
    return h, w


def cmd_sr(args) -> int:
    if (args.scale is None) == (args.size is None):
        raise ConfigError("exactly one of --scale or --size is required")
    bundle = _load_bundle(args.checkpoint)
    try:
        image = load_image(args.input)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read input image {args.input}: {exc}") from exc
    h, w = image.shape[0], image.shape[1]
    if args.scale is not None:
        if args.scale <= 0:
            raise ConfigError("--scale must be positive")
        out_h = max(1, int(math.floor(h * args.scale + 1e-9)))
        out_w = max(1, int(math.floor(w * args.scale + 1e-9)))
    else:
        out_h, out_w = _parse_size(args.size)
    if bundle.variant == "liif":
        sr = render(bundle, image, CoordFrame(out_h, out_w))
    else:
        sr = meta_render(bundle, image, (out_h / h, out_w / w))
    save_image(args.output, sr)
    print(f"wrote {args.output} ({out_w}x{out_h})")
    if (out_h, out_w) == (h, w):
        fit = psnr(sr, image, EvalProtocol(channel_mode="rgb", shave=0))
        print(f"identity-scale PSNR vs input: {fit:.2f} dB")
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = load_run_config(args.config, args.preset, args.set, args.seed, args.out)
    train_ds = _scan_required(rc.data_root, rc.train_split, "data.root")
    val_ds = _scan_required(rc.data_root, rc.val_split, "data.root (validation split)")
    matrix = default_ablation_matrix(rc.decoder)
    if args.entries:
        wanted = [tok.strip() for tok in args.entries.split(",") if tok.strip()]
        by_name = {e.name: e for e in matrix}
        missing = [n for n in wanted if n not in by_name]
        if missing:
            raise ConfigError(
                f"unknown ablation entries {missing}; valid: {sorted(by_name)}"
            )
        matrix = [by_name[n] for n in wanted]
    result = ablate(
        matrix,
        train_ds,
        val_ds,
        rc.encoder,
        rc.train,
        rc.sample,
        scales=rc.eval_scales,
        out_dir=rc.output_dir,
    )
    print(format_ablation_table(result), end="")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    ok = run_selfcheck(sinc_switch_override=args.inject_sinc_switch)
    if not ok:
        print("selfcheck FAILED", file=sys.stderr)
        return EXIT_RUNTIME
    print("selfcheck passed")
    return EXIT_OK


def cmd_make_toy_data(args) -> int:
    write_toy_dataset(
        args.root, n_train=args.n_train, n_val=args.n_val, size=args.size, seed=args.seed
    )
    print(
        f"wrote {args.n_train} train + {args.n_val} val images "
        f"({args.size}x{args.size}) under {args.root}"
    )
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (searched in $%s too)" % CONFIG_DIR_ENV)
    p.add_argument("--preset", choices=sorted(PRESET_OVERRIDES), help="named defaults")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY.PATH=VALUE",
        help="override one config value (repeatable)",
    )
    p.add_argument("--seed", type=int, help="shortcut for train.seed (and sample.seed)")
    p.add_argument("--out", help="shortcut for output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipesr",
        description="Arbitrary-scale super-resolution: train, evaluate, render.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from output_dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM table for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--split", default="val")
    p.add_argument("--scales", default="2,3,4", help="comma-separated scale factors")
    p.add_argument("--channel-mode", choices=("rgb", "y"), default="rgb")
    p.add_argument("--shave", type=int, help="border shave (default: per-scale)")
    p.add_argument("--out", help="write the full report as JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--scale", type=float, help="scale factor (e.g. 2.5)")
    p.add_argument("--size", help="explicit output size WxH (e.g. 100x77)")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_sr)

    p = sub.add_parser("ablate", help="train and compare encoding variants")
    _add_config_flags(p)
    p.add_argument(
        "--entries",
        help="comma-separated subset of the ablation matrix (default: all)",
    )
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("selfcheck", help="run the built-in numeric oracles")
    p.add_argument(
        "--inject-sinc-switch",
        type=float,
        help="fault-injection hook: override the sinc series threshold",
    )
    p.set_defaults(fn=cmd_selfcheck)

    p = sub.add_parser("make-toy-data", help="write a synthetic dataset")
    p.add_argument("--root", required=True)
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-val", type=int, default=3)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_toy_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - boundary: map crashes to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
