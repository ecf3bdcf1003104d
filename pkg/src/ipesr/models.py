"""Differentiable model components and the two rendering variants.

The encoder is a residual conv stack that preserves spatial size (replicate
padding, no normalization): a head conv lifts 3 channels to C, optional
residual blocks (conv-relu-conv plus identity) refine them, and a tail conv
plus a global skip from the head closes the stack. With zero blocks the
encoder is the head conv alone.

The decoder is an MLP over [unfolded 9C feature, query encoding]; with skip
connections enabled, the full input vector is concatenated onto every
hidden layer's input. The local-implicit renderer blends the decoder's
output over the four surrounding latents with bilinear area weights; the
filter-prediction variant instead maps a per-pixel offset code to a 3x(9C)
filter applied at the nearest latent.

Both renderers can add a global bicubic residual of the input (enabled by
default, switchable for ablations) and clamp to [0, 1] only at image
assembly. All parameters initialize uniform in +/- sqrt(1/fan_in) from a
seeded generator, weights and biases alike, so runs are reproducible from
a single integer seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .data import bicubic_resize
from .encoding import EncodingConfig, encode_queries
from .geometry import CoordFrame, ensemble_arrays, render_grid

CHECKPOINT_VERSION = 1
META_KERNEL = 3  # filter variant reads the 3x3 unfolded neighborhood
VARIANTS = ("liif", "metasr")


@dataclass(frozen=True)
class EncoderConfig:
    """Residual feature encoder shape: block count, width, kernel size."""

    blocks: int = 4
    channels: int = 32
    kernel_size: int = 3

    def __post_init__(self):
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")


@dataclass(frozen=True)
class DecoderConfig:
    """Implicit decoder shape and its query encoding."""

    hidden_layers: int = 4
    hidden_width: int = 256
    skip_connections: bool = True
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("hidden_layers and hidden_width must be >= 1")


@dataclass
class LatentGrid:
    """Feature map (H, W, C) tied to its coordinate frame."""

    values: torch.Tensor
    frame: CoordFrame

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("latent values must be (H, W, C)")
        if (self.values.shape[0], self.values.shape[1]) != (
            self.frame.height,
            self.frame.width,
        ):
            raise ValueError("latent spatial dims do not match frame")
        if not torch.isfinite(self.values).all():
            raise ValueError("latent values must be finite")


class ResBlock(nn.Module):
    """conv-relu-conv with identity shortcut, replicate padding."""

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(
            channels, channels, kernel_size, padding=pad, padding_mode="replicate"
        )
        self.conv2 = nn.Conv2d(
            channels, channels, kernel_size, padding=pad, padding_mode="replicate"
        )

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class Encoder(nn.Module):
    """Spatial-size-preserving residual conv encoder."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        pad = config.kernel_size // 2
        self.head = nn.Conv2d(
            3, config.channels, config.kernel_size, padding=pad, padding_mode="replicate"
        )
        self.body = nn.ModuleList(
            ResBlock(config.channels, config.kernel_size) for _ in range(config.blocks)
        )
        self.tail = (
            nn.Conv2d(
                config.channels,
                config.channels,
                config.kernel_size,
                padding=pad,
                padding_mode="replicate",
            )
            if config.blocks > 0
            else None
        )

    def forward(self, x):
        h = self.head(x)
        if self.tail is None:
            return h
        b = h
        for block in self.body:
            b = block(b)
        return h + self.tail(b)


class SkipMLP(nn.Module):
    """ReLU MLP; optionally concatenates the input to every hidden layer."""

    def __init__(
        self,
        in_dim: int,
        hidden_layers: int,
        hidden_width: int,
        out_dim: int,
        skip: bool = True,
    ):
        super().__init__()
        self.in_dim = in_dim
        self.skip = skip
        extra = in_dim if skip else 0
        layers = [nn.Linear(in_dim, hidden_width)]
        layers += [
            nn.Linear(hidden_width + extra, hidden_width)
            for _ in range(hidden_layers - 1)
        ]
        self.hidden = nn.ModuleList(layers)
        self.out = nn.Linear(hidden_width, out_dim)

    def forward(self, x):
        h = torch.relu(self.hidden[0](x))
        for layer in self.hidden[1:]:
            h = torch.relu(layer(torch.cat([h, x], dim=-1) if self.skip else h))
        return self.out(h)


class ModelBundle(nn.Module):
    """Encoder plus decoder under one variant tag, with configs attached.

    variant 'liif' decodes each query against its four surrounding latents;
    variant 'metasr' predicts a per-pixel filter over the 3x3 neighborhood
    of the nearest latent. ``residual`` adds a bicubic upsample of the
    input at assembly.
    """

    def __init__(
        self,
        encoder_config: EncoderConfig | None = None,
        decoder_config: DecoderConfig | None = None,
        variant: str = "liif",
        residual: bool = True,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.encoder_config = encoder_config or EncoderConfig()
        self.decoder_config = decoder_config or DecoderConfig()
        self.variant = variant
        self.residual = residual
        self.encoder = Encoder(self.encoder_config)
        feat_dim = 9 * self.encoder_config.channels
        if variant == "liif":
            in_dim = feat_dim + self.decoder_config.encoding.dim()
            out_dim = 3
        else:
            in_dim = meta_input_dim(self.decoder_config.encoding)
            out_dim = 3 * feat_dim
        self.decoder = SkipMLP(
            in_dim,
            self.decoder_config.hidden_layers,
            self.decoder_config.hidden_width,
            out_dim,
            skip=self.decoder_config.skip_connections,
        )
        self.to(dtype)
        init_parameters(self, seed)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


def init_parameters(module: nn.Module, seed: int) -> None:
    """Uniform +/- sqrt(1/fan_in) init, weights and biases, seeded."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        elif isinstance(m, nn.Linear):
            fan_in = m.in_features
        else:
            continue
        bound = math.sqrt(1.0 / fan_in)
        with torch.no_grad():
            # uniform_ lacks generator support in float64 on some builds,
            # so draw in a fresh tensor and copy.
            for p in (m.weight, m.bias):
                draw = torch.rand(p.shape, generator=gen, dtype=torch.float64)
                p.copy_((draw * 2.0 - 1.0) * bound)


def encode(bundle: ModelBundle, image: np.ndarray) -> LatentGrid:
    """Run the encoder on an (H, W, 3) [0, 1] image; same spatial size out."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    if not np.isfinite(image).all():
        raise ValueError("image values must be finite")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    x = torch.from_numpy(image).to(bundle.dtype).permute(2, 0, 1).unsqueeze(0)
    feats = bundle.encoder(x)[0].permute(1, 2, 0)
    return LatentGrid(values=feats, frame=CoordFrame(image.shape[0], image.shape[1]))


def unfold_grid(values: torch.Tensor) -> torch.Tensor:
    """Concatenate each cell's 3x3 neighborhood: (H, W, C) -> (H, W, 9C).

    Channel blocks follow (k, m) in {-1,0,1}^2 row-major; neighbors outside
    the grid contribute zeros.
    """
    if values.ndim != 3:
        raise ValueError("expected (H, W, C) values")
    h, w, _ = values.shape
    padded = torch.zeros(
        (h + 2, w + 2, values.shape[2]), dtype=values.dtype, device=values.device
    )
    padded[1 : h + 1, 1 : w + 1] = values
    blocks = [
        padded[1 + k : 1 + k + h, 1 + m : 1 + m + w]
        for k in (-1, 0, 1)
        for m in (-1, 0, 1)
    ]
    return torch.cat(blocks, dim=-1)


def decode(
    decoder: SkipMLP, latent_vec: torch.Tensor, encoding_vec: torch.Tensor
) -> torch.Tensor:
    """Decode one (..., 9C) latent with its (..., E) query encoding."""
    if latent_vec.shape[-1] + encoding_vec.shape[-1] != decoder.in_dim:
        raise ValueError(
            f"decoder expects input width {decoder.in_dim}, got "
            f"{latent_vec.shape[-1]} + {encoding_vec.shape[-1]}"
        )
    return decoder(torch.cat([latent_vec, encoding_vec], dim=-1))


def render_queries(
    bundle: ModelBundle,
    unfolded: torch.Tensor,
    frame: CoordFrame,
    centers: np.ndarray,
    radii: np.ndarray,
) -> torch.Tensor:
    """Ensemble-decode (N, 2) queries against an unfolded grid; no residual.

    Returns raw (N, 3) decoder blends; callers add any residual and clamp.
    """
    idx, wts, rel, member_radii = ensemble_arrays(centers, radii, frame)
    cfg = bundle.decoder_config.encoding
    out = None
    for t in range(4):
        feats = unfolded[idx[:, t, 0], idx[:, t, 1]]
        enc = encode_queries(rel[:, t], member_radii[:, t], cfg)
        enc_t = torch.from_numpy(enc).to(unfolded.dtype)
        pred = decode(bundle.decoder, feats, enc_t)
        weight = torch.from_numpy(wts[:, t]).to(unfolded.dtype).unsqueeze(-1)
        out = pred * weight if out is None else out + pred * weight
    return out


def render(bundle: ModelBundle, lr_image: np.ndarray, out_frame: CoordFrame) -> np.ndarray:
    """Render the local-implicit model at every pixel of ``out_frame``."""
    if bundle.variant != "liif":
        raise ValueError("render requires a 'liif' bundle")
    with torch.no_grad():
        grid = encode(bundle, lr_image)
        unfolded = unfold_grid(grid.values)
        batch = render_grid(grid.frame, out_frame)
        preds = render_queries(bundle, unfolded, grid.frame, batch.centers, batch.radii)
    out = preds.double().numpy().reshape(out_frame.height, out_frame.width, 3)
    if bundle.residual:
        out = out + bicubic_resize(lr_image, out_frame.height, out_frame.width)
    return np.clip(out, 0.0, 1.0)


def meta_input_dim(config: EncodingConfig) -> int:
    """Input width of the filter predictor for one encoding choice.

    The bare variant feeds (row offset, col offset, 1/s), three values; the
    others reuse the query encoding of the offset point with radius 1/s.
    """
    return 3 if config.variant == "none" else config.dim()


def meta_input(i: int, j: int, s: float, use_ipe: bool, L: int = 10) -> np.ndarray:
    """Per-pixel offset code for the filter predictor.

    Plain form: (i/s - floor(i/s), j/s - floor(j/s), 1/s). Integrated form:
    the region encoding of that offset point with radius (1/s, 1/s).
    """
    if s <= 0:
        raise ValueError("scale must be positive")
    if i < 0 or j < 0:
        raise ValueError("pixel indices must be non-negative")
    f_i = i / s - math.floor(i / s)
    f_j = j / s - math.floor(j / s)
    if not use_ipe:
        return np.array([f_i, f_j, 1.0 / s])
    cfg = EncodingConfig(variant="ipe", bandwidth_L=L)
    return encode_queries(
        np.array([[f_i, f_j]]), np.array([[1.0 / s, 1.0 / s]]), cfg
    )[0]


def _axis_scales(s) -> tuple[float, float]:
    """Normalize a scalar or (s_y, s_x) pair of positive scale factors."""
    s_y, s_x = (float(s), float(s)) if np.isscalar(s) else (float(s[0]), float(s[1]))
    if s_y <= 0 or s_x <= 0:
        raise ValueError("scale must be positive")
    return s_y, s_x


def _meta_inputs(rows: np.ndarray, cols: np.ndarray, s, config: EncodingConfig) -> np.ndarray:
    """Vectorized offset codes for (N,) output pixel indices.

    Anisotropic scales use per-axis offsets and radii; the bare variant's
    single 1/s slot becomes 2/(s_y + s_x), which reduces to 1/s when
    isotropic.
    """
    s_y, s_x = _axis_scales(s)
    f_i = rows / s_y - np.floor(rows / s_y)
    f_j = cols / s_x - np.floor(cols / s_x)
    if config.variant == "none":
        return np.stack([f_i, f_j, np.full_like(f_i, 2.0 / (s_y + s_x))], axis=-1)
    centers = np.stack([f_i, f_j], axis=-1)
    radii = np.broadcast_to(
        np.array([1.0 / s_y, 1.0 / s_x]), centers.shape
    ).copy()
    return encode_queries(centers, radii, config)


def meta_render_queries(
    bundle: ModelBundle,
    unfolded: torch.Tensor,
    frame: CoordFrame,
    rows: np.ndarray,
    cols: np.ndarray,
    s,
) -> torch.Tensor:
    """Apply predicted filters at the nearest latent of each output pixel."""
    s_y, s_x = _axis_scales(s)
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    src_i = np.clip(np.floor(rows / s_y).astype(np.int64), 0, frame.height - 1)
    src_j = np.clip(np.floor(cols / s_x).astype(np.int64), 0, frame.width - 1)
    inputs = _meta_inputs(rows, cols, s, bundle.decoder_config.encoding)
    inputs_t = torch.from_numpy(inputs).to(unfolded.dtype)
    filters = bundle.decoder(inputs_t).reshape(len(rows), 3, unfolded.shape[-1])
    feats = unfolded[src_i, src_j]
    return torch.einsum("nof,nf->no", filters, feats)


def meta_render(bundle: ModelBundle, lr_image: np.ndarray, s) -> np.ndarray:
    """Filter-prediction rendering at scale s (scalar or per-axis pair)."""
    if bundle.variant != "metasr":
        raise ValueError("meta_render requires a 'metasr' bundle")
    s_y, s_x = _axis_scales(s)
    lr_image = np.asarray(lr_image, dtype=np.float64)
    out_h = int(math.floor(lr_image.shape[0] * s_y + 1e-9))
    out_w = int(math.floor(lr_image.shape[1] * s_x + 1e-9))
    if out_h < 1 or out_w < 1:
        raise ValueError("output frame smaller than 1x1")
    with torch.no_grad():
        grid = encode(bundle, lr_image)
        unfolded = unfold_grid(grid.values)
        rows, cols = np.divmod(np.arange(out_h * out_w), out_w)
        preds = meta_render_queries(bundle, unfolded, grid.frame, rows, cols, s)
    out = preds.double().numpy().reshape(out_h, out_w, 3)
    if bundle.residual:
        out = out + bicubic_resize(lr_image, out_h, out_w)
    return np.clip(out, 0.0, 1.0)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Write a versioned container: configs, variant, and parameters."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "variant": bundle.variant,
        "residual": bundle.residual,
        "encoder_config": asdict(bundle.encoder_config),
        "decoder_config": asdict(bundle.decoder_config),
        "dtype": str(bundle.dtype).removeprefix("torch."),
        "state_dict": bundle.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> ModelBundle:
    """Rebuild a bundle bit-exactly from ``save_checkpoint`` output."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    dec = dict(payload["decoder_config"])
    dec["encoding"] = EncodingConfig(**dec["encoding"])
    bundle = ModelBundle(
        encoder_config=EncoderConfig(**payload["encoder_config"]),
        decoder_config=DecoderConfig(**dec),
        variant=payload["variant"],
        residual=payload["residual"],
        dtype=getattr(torch, payload["dtype"]),
    )
    bundle.load_state_dict(payload["state_dict"])
    return bundle
