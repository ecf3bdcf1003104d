"""Training loop, evaluation tables, and the encoding ablation runner.

The loop realizes the reference schedule: per iteration, sample a batch of
(LR patch, query pixel) pairs, decode only those pixels, take the mean
absolute error against their HR colors, and apply one Adam step
(betas 0.9/0.999, eps 1e-8). The learning rate at epoch e is exactly
lr0 * 2^(-floor(e / halve_every)). Validation runs once per epoch and the
best checkpoint is selected by PSNR at the largest configured scale
(scale 4 when present).

Logs are line-delimited JSON without timestamps so identical (seed,
config) runs produce byte-identical logs. Checkpoints are written per
epoch; resuming from them reproduces the exact parameter trajectory of an
uninterrupted run because data streams are keyed by (seed, epoch, index)
and the optimizer state round-trips losslessly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import Dataset, SampleSpec, bicubic_resize, load_image, sample_batch
from .encoding import EncodingConfig, encode_queries
from .geometry import CoordFrame, ensemble_arrays
from .metrics import EvalProtocol, psnr, ssim
from .models import (
    DecoderConfig,
    EncoderConfig,
    ModelBundle,
    _meta_inputs,
    encode,
    meta_render,
    render,
    save_checkpoint,
    unfold_grid,
)

PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and optimizer settings for one run."""

    epochs: int = 1000
    iters_per_epoch: int = 1000
    batch_size: int = 16
    lr0: float = 1e-4
    lr_halve_every: int = 200
    loss: str = "l1"
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.iters_per_epoch, self.batch_size) < 1:
            raise ValueError("epochs, iters_per_epoch, batch_size must be >= 1")
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if self.lr_halve_every < 1:
            raise ValueError("lr_halve_every must be >= 1")
        if self.loss != "l1":
            raise ValueError("only the 'l1' loss is supported")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "TrainConfig":
        """'paper': the full published schedule. 'desk': minutes-scale run."""
        if name == "paper":
            return cls(1000, 1000, 16, 1e-4, 200, "l1", seed)
        if name == "desk":
            return cls(20, 100, 8, 1e-4, 8, "l1", seed)
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """lr0 halved once per lr_halve_every epochs, stepwise."""
    return config.lr0 * 2.0 ** (-(epoch // config.lr_halve_every))


@dataclass
class TrainState:
    """Progress counters and the best-validation record."""

    epoch: int = 0
    step: int = 0
    best_psnr: float = -math.inf
    best_epoch: int = -1


def _batch_tensors(bundle: ModelBundle, items):
    """Encoder features and unfolded grids for a list of same-size patches."""
    lr_stack = np.stack([item.lr for item in items])
    x = torch.from_numpy(lr_stack).to(bundle.dtype).permute(0, 3, 1, 2)
    feats = bundle.encoder(x).permute(0, 2, 3, 1)
    unfolded = torch.stack([unfold_grid(f) for f in feats])
    return unfolded


def _liif_preds(bundle: ModelBundle, unfolded: torch.Tensor, items) -> torch.Tensor:
    p = items[0].lr.shape[0]
    frame = CoordFrame(p, p)
    per_member = [[] for _ in range(4)]
    weights = [[] for _ in range(4)]
    encodings = [[] for _ in range(4)]
    cfg = bundle.decoder_config.encoding
    for b, item in enumerate(items):
        idx, wts, rel, mrad = ensemble_arrays(
            item.queries.centers, item.queries.radii, frame
        )
        for t in range(4):
            per_member[t].append(unfolded[b, idx[:, t, 0], idx[:, t, 1]])
            weights[t].append(wts[:, t])
            encodings[t].append(encode_queries(rel[:, t], mrad[:, t], cfg))
    out = None
    for t in range(4):
        feats = torch.cat(per_member[t])
        enc = torch.from_numpy(np.concatenate(encodings[t])).to(unfolded.dtype)
        w = torch.from_numpy(np.concatenate(weights[t])).to(unfolded.dtype)
        pred = bundle.decoder(torch.cat([feats, enc], dim=-1)) * w.unsqueeze(-1)
        out = pred if out is None else out + pred
    return out


def _meta_preds(bundle: ModelBundle, unfolded: torch.Tensor, items) -> torch.Tensor:
    cfg = bundle.decoder_config.encoding
    p = items[0].lr.shape[0]
    inputs, feats = [], []
    for b, item in enumerate(items):
        rows = np.asarray(item.rows, dtype=np.float64)
        cols = np.asarray(item.cols, dtype=np.float64)
        s = item.scale
        inputs.append(_meta_inputs(rows, cols, s, cfg))
        src_i = np.clip(np.floor(rows / s).astype(np.int64), 0, p - 1)
        src_j = np.clip(np.floor(cols / s).astype(np.int64), 0, p - 1)
        feats.append(unfolded[b, src_i, src_j])
    inputs_t = torch.from_numpy(np.concatenate(inputs)).to(unfolded.dtype)
    feats_t = torch.cat(feats)
    filters = bundle.decoder(inputs_t).reshape(feats_t.shape[0], 3, feats_t.shape[-1])
    return torch.einsum("nof,nf->no", filters, feats_t)


def training_loss(bundle: ModelBundle, items) -> torch.Tensor:
    """Mean absolute error over the batch's sampled query pixels only."""
    unfolded = _batch_tensors(bundle, items)
    if bundle.variant == "liif":
        preds = _liif_preds(bundle, unfolded, items)
    else:
        preds = _meta_preds(bundle, unfolded, items)
    if bundle.residual:
        res = []
        p = items[0].lr.shape[0]
        for item in items:
            hr_side = int(round(item.scale * p))
            up = bicubic_resize(item.lr, hr_side, hr_side)
            res.append(up[item.rows, item.cols])
        preds = preds + torch.from_numpy(np.concatenate(res)).to(preds.dtype)
    targets = torch.from_numpy(
        np.concatenate([item.queries.targets for item in items])
    ).to(preds.dtype)
    return (preds - targets).abs().mean()


def _render_any(bundle: ModelBundle, lr_image: np.ndarray, out_h: int, out_w: int):
    if bundle.variant == "liif":
        return render(bundle, lr_image, CoordFrame(out_h, out_w))
    s_y = out_h / lr_image.shape[0]
    s_x = out_w / lr_image.shape[1]
    return meta_render(bundle, lr_image, (s_y, s_x))


def evaluate(
    bundle: ModelBundle,
    dataset: Dataset,
    scales,
    protocol: EvalProtocol | None = None,
    channel_mode: str = "rgb",
) -> dict:
    """PSNR/SSIM per scale, with a bicubic-upsampling baseline row.

    Per image and scale s: downscale the image to floor(dim/s) with the
    antialiased resizer, reconstruct at the original size, and score. With
    ``protocol`` unset, each scale uses the benchmark default shave for
    ``channel_mode``.
    """
    scales = [float(s) for s in scales]
    if any(s <= 0 for s in scales):
        raise ValueError("scales must be positive")
    per_image: dict = {}
    for record in dataset.records:
        hr = load_image(record.path)
        h, w = hr.shape[0], hr.shape[1]
        per_image[record.id] = {}
        for s in scales:
            proto = protocol or EvalProtocol.for_scale(channel_mode, s)
            lr_h, lr_w = max(1, int(h / s)), max(1, int(w / s))
            lr_img = bicubic_resize(hr, lr_h, lr_w)
            sr = _render_any(bundle, lr_img, h, w)
            base = bicubic_resize(lr_img, h, w)
            per_image[record.id][s] = {
                "model_psnr": psnr(sr, hr, proto),
                "model_ssim": ssim(sr, hr, proto),
                "bicubic_psnr": psnr(base, hr, proto),
                "bicubic_ssim": ssim(base, hr, proto),
            }
    mean = {
        s: {
            key: float(np.mean([per_image[i][s][key] for i in per_image]))
            for key in next(iter(per_image.values()))[s]
        }
        for s in scales
    }
    return {"scales": scales, "per_image": per_image, "mean": mean}


def _write_log(handle, record: dict) -> None:
    if handle is not None:
        handle.write(json.dumps(record, sort_keys=True) + "\n")
        handle.flush()


def train(
    bundle: ModelBundle,
    dataset: Dataset,
    config: TrainConfig,
    sample_spec: SampleSpec | None = None,
    val_dataset: Dataset | None = None,
    val_scales=(4.0,),
    protocol: EvalProtocol | None = None,
    out_dir=None,
    resume: bool = False,
):
    """Optimize ``bundle`` in place; returns (bundle, list of log records).

    With ``out_dir`` set, writes train_log.jsonl plus per-epoch checkpoints
    (ckpt_last.pt / trainer_last.pt and ckpt_best.pt on improvement).
    ``resume=True`` restarts from out_dir's last checkpoint at the epoch
    boundary, reproducing the uninterrupted trajectory.
    """
    spec = sample_spec or SampleSpec(seed=config.seed)
    spec.validate(dataset)
    optimizer = torch.optim.Adam(
        bundle.parameters(), lr=config.lr0, betas=(0.9, 0.999), eps=1e-8
    )
    state = TrainState()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    if resume:
        if out_dir is None:
            raise ValueError("resume requires out_dir")
        trainer_path = out_dir / "trainer_last.pt"
        payload = torch.load(trainer_path, map_location="cpu", weights_only=True)
        bundle.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        state = TrainState(
            epoch=payload["epoch"],
            step=payload["step"],
            best_psnr=payload["best_psnr"],
            best_epoch=payload["best_epoch"],
        )
    logs: list[dict] = []
    handle = None
    if out_dir is not None:
        handle = open(out_dir / "train_log.jsonl", "a" if resume else "w")
    cache: dict = {}
    try:
        for epoch in range(state.epoch, config.epochs):
            lr = learning_rate(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for it in range(config.iters_per_epoch):
                indices = range(
                    it * config.batch_size, (it + 1) * config.batch_size
                )
                items = sample_batch(dataset, spec, epoch, indices, cache)
                loss = training_loss(bundle, items)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                state.step += 1
                loss_val = float(loss.detach())
                if not math.isfinite(loss_val):
                    if out_dir is not None:
                        _save_trainer(
                            out_dir / "diagnostic_nonfinite.pt",
                            bundle,
                            optimizer,
                            state,
                        )
                    raise RuntimeError(
                        f"non-finite loss {loss_val} at step {state.step}; "
                        "diagnostic snapshot written"
                        if out_dir is not None
                        else f"non-finite loss {loss_val} at step {state.step}"
                    )
                record = {
                    "kind": "iter",
                    "step": state.step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": loss_val,
                }
                logs.append(record)
                _write_log(handle, record)
            state.epoch = epoch + 1
            if val_dataset is not None:
                report = evaluate(bundle, val_dataset, val_scales, protocol)
                select = 4.0 if 4.0 in report["scales"] else max(report["scales"])
                val_psnr = report["mean"][select]["model_psnr"]
                if val_psnr > state.best_psnr:
                    state.best_psnr = val_psnr
                    state.best_epoch = epoch
                    if out_dir is not None:
                        save_checkpoint(bundle, out_dir / "ckpt_best.pt")
                record = {
                    "kind": "epoch",
                    "epoch": epoch,
                    "val": {
                        str(s): report["mean"][s]["model_psnr"]
                        for s in report["scales"]
                    },
                    "best_psnr": state.best_psnr,
                    "best_epoch": state.best_epoch,
                }
                logs.append(record)
                _write_log(handle, record)
            if out_dir is not None:
                save_checkpoint(bundle, out_dir / "ckpt_last.pt")
                _save_trainer(out_dir / "trainer_last.pt", bundle, optimizer, state)
    finally:
        if handle is not None:
            handle.close()
    return bundle, logs


def _save_trainer(path, bundle, optimizer, state: TrainState) -> None:
    torch.save(
        {
            "model_state": bundle.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "epoch": state.epoch,
            "step": state.step,
            "best_psnr": state.best_psnr,
            "best_epoch": state.best_epoch,
        },
        path,
    )


@dataclass(frozen=True)
class AblationEntry:
    """One row of the ablation matrix."""

    name: str
    decoder: DecoderConfig
    variant: str = "liif"
    residual: bool = True


def default_ablation_matrix(base: DecoderConfig | None = None) -> list[AblationEntry]:
    """Encoding sweep mirroring the published comparison's structure:
    integrated encoding at three bandwidths, plain encoding, cell size,
    bare coordinates, and a no-skip control."""
    base = base or DecoderConfig()

    def enc(variant: str, L: int = 10) -> DecoderConfig:
        return replace(base, encoding=EncodingConfig(variant=variant, bandwidth_L=L))

    return [
        AblationEntry("ipe_L4", enc("ipe", 4)),
        AblationEntry("ipe_L10", enc("ipe", 10)),
        AblationEntry("ipe_L16", enc("ipe", 16)),
        AblationEntry("plain_pe_L10", enc("plain_pe", 10)),
        AblationEntry("cell", enc("cell")),
        AblationEntry("none", enc("none")),
        AblationEntry("no_skip", replace(enc("ipe", 10), skip_connections=False)),
    ]


def ablate(
    entries,
    dataset: Dataset,
    val_dataset: Dataset,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    sample_spec: SampleSpec | None = None,
    scales=(2.0, 4.0),
    out_dir=None,
) -> dict:
    """Train every entry with identical seed and data streams, then score.

    Returns {"scales": [...], "rows": {name: {scale: psnr}},
    "baseline": {scale: psnr}} plus per-entry full reports under "reports".
    Values are recorded for inspection, not asserted against.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    rows: dict = {}
    reports: dict = {}
    baseline: dict | None = None
    for entry in entries:
        bundle = ModelBundle(
            encoder_config=encoder_config,
            decoder_config=entry.decoder,
            variant=entry.variant,
            residual=entry.residual,
            seed=train_config.seed,
        )
        run_dir = out_dir / entry.name if out_dir is not None else None
        train(
            bundle,
            dataset,
            train_config,
            sample_spec,
            val_dataset=val_dataset,
            val_scales=(max(scales),),
            out_dir=run_dir,
        )
        report = evaluate(bundle, val_dataset, scales)
        reports[entry.name] = report
        rows[entry.name] = {
            s: report["mean"][s]["model_psnr"] for s in report["scales"]
        }
        if baseline is None:
            baseline = {
                s: report["mean"][s]["bicubic_psnr"] for s in report["scales"]
            }
    result = {
        "scales": [float(s) for s in scales],
        "rows": rows,
        "baseline": baseline,
        "reports": reports,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        slim = {k: v for k, v in result.items() if k != "reports"}
        (out_dir / "ablation.json").write_text(json.dumps(slim, indent=2, sort_keys=True))
        (out_dir / "ablation.txt").write_text(format_ablation_table(result))
    return result


def format_ablation_table(result: dict) -> str:
    """Plain-text variants-by-scales PSNR table."""
    scales = result["scales"]
    name_w = max(len(n) for n in list(result["rows"]) + ["bicubic"]) + 2
    header = "variant".ljust(name_w) + "".join(f"x{s:g} PSNR".rjust(12) for s in scales)
    lines = [header, "-" * len(header)]
    for name, row in result["rows"].items():
        lines.append(
            name.ljust(name_w) + "".join(f"{row[s]:12.4f}" for s in scales)
        )
    if result.get("baseline"):
        lines.append(
            "bicubic".ljust(name_w)
            + "".join(f"{result['baseline'][s]:12.4f}" for s in scales)
        )
    return "\n".join(lines) + "\n"
