"""Scalar reference implementations shared by the test suite.

Everything here recomputes results from definitions with explicit Python
loops and plain numpy arithmetic, independent of the package's vectorized
code paths. Weights are read out of torch modules as numpy arrays; no
torch forward passes are reused.
"""

import math

import numpy as np

from ipesr.geometry import CoordFrame, ensemble_stencil, render_grid
from ipesr.metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW


def loop_resize(img, out_h, out_w, antialias=True):
    """Scalar reference resampler: Keys kernel a=-0.5, normalized taps,
    widened on downscale when antialias is set, replicate edges."""

    def kernel(x):
        x = abs(x)
        if x <= 1.0:
            return 1.5 * x**3 - 2.5 * x**2 + 1.0
        if x < 2.0:
            return -0.5 * x**3 + 2.5 * x**2 - 4.0 * x + 2.0
        return 0.0

    def one_axis(arr, out_n):
        in_n = arr.shape[0]
        scale = out_n / in_n
        kscale = scale if (antialias and scale < 1.0) else 1.0
        width = 4.0 / kscale
        out = np.zeros((out_n,) + arr.shape[1:])
        for o in range(out_n):
            u = (o + 0.5) / scale - 0.5
            left = int(np.floor(u - width / 2.0)) + 1
            taps = []
            for ix in range(left, left + int(np.ceil(width)) + 2):
                taps.append((ix, kscale * kernel(kscale * (u - ix))))
            total = sum(w for _, w in taps)
            for ix, w in taps:
                out[o] += (w / total) * arr[min(max(ix, 0), in_n - 1)]
        return out

    tmp = one_axis(img, out_h)
    tmp = np.moveaxis(one_axis(np.moveaxis(tmp, 1, 0), out_w), 0, 1)
    return np.clip(tmp, 0.0, 1.0)


def loop_psnr(a, b, peak=1.0):
    """PSNR from per-pixel squared error accumulated in a Python loop."""
    total = 0.0
    count = 0
    for x, y in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
        total += (x - y) ** 2
        count += 1
    mse = total / count
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def loop_ssim_plane(a, b, peak=1.0):
    """Valid-mode single-channel SSIM with explicit window loops."""
    half = SSIM_WINDOW // 2
    offsets = np.arange(SSIM_WINDOW) - half
    g1 = np.exp(-(offsets**2) / (2.0 * SSIM_SIGMA**2))
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    h, w = a.shape
    vals = []
    for i in range(half, h - half):
        for j in range(half, w - half):
            pa = a[i - half : i + half + 1, j - half : j + half + 1]
            pb = b[i - half : i + half + 1, j - half : j + half + 1]
            mu_a = float((win * pa).sum())
            mu_b = float((win * pb).sum())
            var_a = float((win * pa * pa).sum()) - mu_a * mu_a
            var_b = float((win * pb * pb).sum()) - mu_b * mu_b
            cov = float((win * pa * pb).sum()) - mu_a * mu_b
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))


def loop_conv(x, weight, bias, replicate=True):
    """Scalar 2D convolution on an (H, W, Cin) array with edge handling."""
    h, w, _ = x.shape
    c_out, c_in, kh, kw = weight.shape
    pad_h, pad_w = kh // 2, kw // 2
    out = np.zeros((h, w, c_out))
    for i in range(h):
        for j in range(w):
            for co in range(c_out):
                acc = bias[co]
                for ci in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            si = i + u - pad_h
                            sj = j + v - pad_w
                            if replicate:
                                si = min(max(si, 0), h - 1)
                                sj = min(max(sj, 0), w - 1)
                                val = x[si, sj, ci]
                            else:
                                val = (
                                    x[si, sj, ci]
                                    if 0 <= si < h and 0 <= sj < w
                                    else 0.0
                                )
                            acc += weight[co, ci, u, v] * val
                out[i, j, co] = acc
    return out


def conv_arrays(conv):
    return (
        conv.weight.detach().double().numpy(),
        conv.bias.detach().double().numpy(),
    )


def loop_encoder(encoder, img):
    """Scalar re-evaluation of head conv, residual blocks, tail, skip."""
    h = loop_conv(img, *conv_arrays(encoder.head))
    if not encoder.body:
        return h
    b = h
    for block in encoder.body:
        t = loop_conv(b, *conv_arrays(block.conv1))
        t = np.maximum(t, 0.0)
        t = loop_conv(t, *conv_arrays(block.conv2))
        b = b + t
    return h + loop_conv(b, *conv_arrays(encoder.tail))


def loop_mlp(decoder, x):
    """Scalar forward pass of a SkipMLP on one (in_dim,) input."""
    x = np.asarray(x, dtype=np.float64)
    h = None
    for t, layer in enumerate(decoder.hidden):
        w = layer.weight.detach().double().numpy()
        b = layer.bias.detach().double().numpy()
        if t == 0:
            inp = x
        elif decoder.skip:
            inp = np.concatenate([h, x])
        else:
            inp = h
        h = np.maximum(w @ inp + b, 0.0)
    w = decoder.out.weight.detach().double().numpy()
    b = decoder.out.bias.detach().double().numpy()
    return w @ h + b


def loop_encoding(center, radius, variant, L, include_raw=True):
    """Inline re-derivation of the query encodings, scalar math only."""
    x, y = center
    rx, ry = radius
    if variant == "none":
        return np.array([x, y])
    if variant == "cell":
        return np.array([x, y, 2.0 * rx, 2.0 * ry])
    vals = [x, y] if include_raw else []
    for c, r in ((x, rx), (y, ry)):
        for k in range(L):
            w = 2.0**k
            if variant == "ipe":
                t = w * r
                damp = math.sin(t) / t if t != 0.0 else 1.0
            else:
                damp = 1.0
            vals.append(math.sin(w * c) * damp)
            vals.append(math.cos(w * c) * damp)
    return np.array(vals)


def loop_unfolded(values, i, j):
    """Scalar 3x3 gather with zero padding: (9C,) at one grid cell."""
    h, w, c = values.shape
    parts = []
    for k in (-1, 0, 1):
        for m in (-1, 0, 1):
            si, sj = i + k, j + m
            if 0 <= si < h and 0 <= sj < w:
                parts.append(values[si, sj])
            else:
                parts.append(np.zeros(c))
    return np.concatenate(parts)


def loop_render(bundle, latent, frame, out_h, out_w):
    """Scalar renderer: stencil, gather, encoding, MLP, blend per query."""
    cfg = bundle.decoder_config.encoding
    batch = render_grid(frame, CoordFrame(out_h, out_w))
    out = np.zeros((len(batch.centers), 3))
    for q, (center, radius) in enumerate(zip(batch.centers, batch.radii)):
        stencil = ensemble_stencil(tuple(center), tuple(radius), frame)
        acc = np.zeros(3)
        for t in range(4):
            i, j = stencil.latent_indices[t]
            feats = loop_unfolded(latent, i, j)
            enc = loop_encoding(
                stencil.relative_coords[t],
                stencil.radii[t],
                cfg.variant,
                cfg.bandwidth_L,
                cfg.include_raw,
            )
            pred = loop_mlp(bundle.decoder, np.concatenate([feats, enc]))
            acc += stencil.weights[t] * pred
        out[q] = acc
    return out.reshape(out_h, out_w, 3)
