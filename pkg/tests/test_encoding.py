"""Encoding tests: stable sinc, point codes, and region codes vs oracles.

The region encoding's contract is that it equals the mean of the point
encoding over the pixel rectangle. That mean is recomputed here by
midpoint quadrature, entirely independently of the closed form under test.
"""

import math

import numpy as np
import pytest

from ipesr.encoding import (
    EncodingConfig,
    EncodingVector,
    PixelRegion,
    cell_code,
    encode_queries,
    ipe,
    plain_pe,
    sinc_array,
    sinc_stable,
)
from ipesr.geometry import CoordFrame, render_grid


def taylor_sinc(t: float, terms: int = 64) -> float:
    """sin(t)/t via its power series; converges fast for |t| <= 2."""
    total = 0.0
    term = 1.0
    for n in range(terms):
        total += term
        term *= -(t * t) / ((2 * n + 2) * (2 * n + 3))
    return total


def quadrature_mean_pe(center, radius, L, points):
    """Midpoint-rule mean of the raw sinusoid code over the rectangle.

    Separable per axis because each component depends on one coordinate.
    Returns the encoded part only, axis-major, octave-minor, (sin, cos).
    """
    out = []
    for axis in range(2):
        c, r = center[axis], radius[axis]
        t = c - r + 2.0 * r * (np.arange(points) + 0.5) / points
        for k in range(L):
            w = 2.0**k
            out.append(np.mean(np.sin(w * t)))
            out.append(np.mean(np.cos(w * t)))
    return np.array(out)


class TestSincStable:
    def test_removable_singularity(self):
        assert sinc_stable(0.0) == 1.0

    def test_zero_at_pi(self):
        assert abs(sinc_stable(math.pi)) < 1e-12

    def test_half_matches_direct_ratio(self):
        assert sinc_stable(0.5) == math.sin(0.5) / 0.5

    def test_half_matches_taylor_series(self):
        assert abs(sinc_stable(0.5) - taylor_sinc(0.5)) < 1e-14

    def test_branches_agree_at_switch(self):
        for t in (9.9e-5, 1.01e-4):
            assert abs(sinc_stable(t) - taylor_sinc(t)) < 1e-15

    def test_range_bound(self):
        rng = np.random.default_rng(0)
        vals = sinc_array(rng.uniform(-50.0, 50.0, size=1000))
        assert vals.min() >= -0.2173
        assert vals.max() <= 1.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            sinc_stable(math.nan)
        with pytest.raises(ValueError):
            sinc_stable(math.inf)
        with pytest.raises(ValueError):
            sinc_array(np.array([0.1, np.inf]))

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(1)
        t = rng.uniform(-5.0, 5.0, size=64)
        t[0] = 0.0
        t[1] = 5e-5
        got = sinc_array(t)
        for i, ti in enumerate(t):
            assert got[i] == sinc_stable(float(ti))


class TestPlainPE:
    def test_origin_L2(self):
        vec = plain_pe((0.0, 0.0), L=2)
        assert np.array_equal(vec.values[:2], [0.0, 0.0])
        assert np.array_equal(vec.values[2:], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_pi_first_axis(self):
        vec = plain_pe((math.pi, 0.0), L=1)
        sin_x, cos_x = vec.values[2], vec.values[3]
        assert abs(sin_x) < 1e-12
        assert abs(cos_x + 1.0) < 1e-12

    def test_scalar_reevaluation(self):
        point = (0.3, -0.2)
        vec = plain_pe(point, L=4)
        expected = [point[0], point[1]]
        for axis in range(2):
            for k in range(4):
                expected.append(math.sin(2**k * point[axis]))
                expected.append(math.cos(2**k * point[axis]))
        assert np.allclose(vec.values, expected, atol=0, rtol=0)

    def test_length_and_config(self):
        vec = plain_pe((0.1, 0.2), L=3)
        assert len(vec.values) == 4 * 3 + 2
        assert vec.config.variant == "plain_pe"

    def test_bad_bandwidth_rejected(self):
        with pytest.raises(ValueError):
            plain_pe((0.0, 0.0), L=0)


class TestIPE:
    def test_origin_center(self):
        vec = ipe(PixelRegion(center=(0.0, 0.0), radius=(0.3, 0.7)), L=1)
        raw_x, raw_y, sin_x, cos_x, sin_y, cos_y = vec.values
        assert raw_x == 0.0 and raw_y == 0.0
        assert sin_x == 0.0 and sin_y == 0.0
        assert cos_x == sinc_stable(0.3)
        assert cos_y == sinc_stable(0.7)

    def test_tiny_radius_limit(self):
        region = PixelRegion(center=(0.3, -0.2), radius=(1e-9, 1e-9))
        got = ipe(region, L=6).values
        ref = plain_pe((0.3, -0.2), L=6).values
        assert np.max(np.abs(got - ref)) < 1e-9

    def test_quadrature_grid_example(self):
        """The mean over the rectangle, on an explicit 1024x1024 2D grid."""
        center, radius, L = (0.3, -0.2), (0.1, 0.05), 4
        got = ipe(PixelRegion(center=center, radius=radius), L=L).values
        n = 1024
        xs = center[0] - radius[0] + 2 * radius[0] * (np.arange(n) + 0.5) / n
        ys = center[1] - radius[1] + 2 * radius[1] * (np.arange(n) + 0.5) / n
        gx, gy = np.meshgrid(xs, ys)
        expected = list(center)
        for coords in (gx, gy):
            for k in range(L):
                w = 2.0**k
                expected.append(np.mean(np.sin(w * coords)))
                expected.append(np.mean(np.cos(w * coords)))
        assert np.max(np.abs(got - np.array(expected))) < 1e-6

    def test_limit_monotone_in_radius(self):
        rng = np.random.default_rng(2)
        center = tuple(rng.uniform(-2.0, 2.0, size=2))
        ref = plain_pe(center, L=8).values
        errs = []
        for k in range(1, 9):
            r = 10.0**-k
            vec = ipe(PixelRegion(center=center, radius=(r, r)), L=8)
            errs.append(np.max(np.abs(vec.values - ref)))
        assert all(a >= b for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-9

    def test_attenuation_monotone_per_octave(self):
        for k in range(6):
            w = 2.0**k
            r = np.linspace(0.0, math.pi / w, 200)
            env = np.abs(sinc_array(w * r))
            assert np.all(np.diff(env) <= 1e-15)

    def test_components_bounded(self):
        # bounded sinusoid times |sinc| <= 1; the raw prefix just passes
        # the center through, so the bound applies to the encoded block
        rng = np.random.default_rng(3)
        centers = rng.uniform(-2.0, 2.0, size=(200, 2))
        radii = rng.uniform(1e-3, 1.0, size=(200, 2))
        vals = encode_queries(centers, radii, EncodingConfig(variant="ipe", bandwidth_L=10))
        assert np.abs(vals[:, 2:]).max() <= 1.0 + 1e-15
        assert np.array_equal(vals[:, :2], centers)

    def test_deterministic(self):
        region = PixelRegion(center=(0.11, 0.22), radius=(0.05, 0.07))
        a = ipe(region, L=5).values
        b = ipe(region, L=5).values
        assert np.array_equal(a, b)

    def test_nonpositive_radius_rejected(self):
        with pytest.raises(ValueError):
            PixelRegion(center=(0.0, 0.0), radius=(0.0, 0.1))
        with pytest.raises(ValueError):
            encode_queries(
                np.zeros((1, 2)), np.array([[0.1, -0.2]]),
                EncodingConfig(variant="ipe", bandwidth_L=2),
            )


class TestEncodeQueries:
    def test_output_widths(self):
        for variant, dim in (("none", 2), ("cell", 4), ("plain_pe", 42), ("ipe", 42)):
            cfg = EncodingConfig(variant=variant, bandwidth_L=10)
            assert cfg.dim() == dim
            out = encode_queries(np.zeros((5, 2)), np.full((5, 2), 0.5), cfg)
            assert out.shape == (5, dim)

    def test_raw_prefix_optional(self):
        cfg = EncodingConfig(variant="ipe", bandwidth_L=3, include_raw=False)
        assert cfg.dim() == 12
        out = encode_queries(np.zeros((2, 2)), np.full((2, 2), 0.5), cfg)
        assert out.shape == (2, 12)
        with_raw = encode_queries(
            np.zeros((2, 2)), np.full((2, 2), 0.5),
            EncodingConfig(variant="ipe", bandwidth_L=3),
        )
        assert np.array_equal(with_raw[:, 2:], out)

    def test_matches_scalar_ops(self):
        rng = np.random.default_rng(4)
        centers = rng.uniform(-1.0, 1.0, size=(8, 2))
        radii = rng.uniform(0.01, 0.9, size=(8, 2))
        batched = encode_queries(centers, radii, EncodingConfig(variant="ipe", bandwidth_L=4))
        for i in range(8):
            single = ipe(PixelRegion(tuple(centers[i]), tuple(radii[i])), L=4)
            assert np.array_equal(batched[i], single.values)

    def test_cell_variant_layout(self):
        out = encode_queries(
            np.array([[0.1, -0.3]]), np.array([[0.25, 0.5]]),
            EncodingConfig(variant="cell"),
        )
        assert np.allclose(out[0], [0.1, -0.3, 0.5, 1.0])

    def test_none_variant_returns_copy(self):
        centers = np.array([[0.1, 0.2]])
        out = encode_queries(centers, np.ones((1, 2)), EncodingConfig(variant="none"))
        out[0, 0] = 99.0
        assert centers[0, 0] == 0.1

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            EncodingConfig(variant="fourier")

    def test_vector_length_invariant(self):
        with pytest.raises(ValueError):
            EncodingVector(values=np.zeros(3), config=EncodingConfig(variant="none"))


class TestCellCode:
    def test_doubling(self):
        assert np.allclose(cell_code((0.5, 0.5)), (1.0, 1.0))

    def test_scale_four(self):
        s = 4.0
        assert np.allclose(cell_code((1 / s, 1 / s)), (0.5, 0.5))

    def test_radius_from_render_grid(self):
        batch = render_grid(CoordFrame(4, 4), CoordFrame(8, 8))
        s = 8 / 4
        assert np.allclose(batch.radii, 1.0 / s)
        assert np.allclose(cell_code(batch.radii[0]), (2 / s, 2 / s))

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            cell_code((0.0, 0.5))


class TestQuadratureProperty:
    def test_random_cases_match_quadrature(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(25):
            center = rng.uniform(-2.0, 2.0, size=2)
            radius = rng.uniform(1e-3, 1.0, size=2)
            L = int(rng.integers(1, 7))
            got = encode_queries(
                center[None, :], radius[None, :],
                EncodingConfig(variant="ipe", bandwidth_L=L),
            )[0][2:]
            ref = quadrature_mean_pe(center, radius, L, points=32768)
            worst = max(worst, float(np.max(np.abs(got - ref))))
        assert worst < 1e-6
