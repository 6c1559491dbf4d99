import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathoquant.errors import DegenerateStains
from pathoquant.imaging import RasterImage
from pathoquant.stains import (StainMatrix, deconvolve, deconvolve_od,
                               normalize_concentration, stain_rgb)


def forward_pixel(stains, c_hema, c_dab):
    """8-bit forward synthesis: I_c = round(255 * 10^-(OD_c))."""
    od = c_hema * stains.hema + c_dab * stains.dab
    return np.clip(np.round(255.0 * np.power(10.0, -od)), 0, 255).astype(np.uint8)


def lstsq_oracle(od_vec, stains):
    """Independent per-pixel least-squares solve, clamped at zero."""
    c, *_ = np.linalg.lstsq(stains.basis(), np.asarray(od_vec, dtype=np.float64), rcond=None)
    return np.maximum(c, 0.0)


class TestStainMatrix:
    def test_defaults_are_unit(self):
        m = StainMatrix()
        assert abs(np.linalg.norm(m.hema) - 1.0) < 1e-9
        assert abs(np.linalg.norm(m.dab) - 1.0) < 1e-9

    def test_parallel_vectors_rejected(self):
        with pytest.raises(DegenerateStains):
            StainMatrix(hema_vector=(1, 0, 0), dab_vector=(1, 1e-9, 0))

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateStains):
            StainMatrix(hema_vector=(0, 0, 0))

    def test_pinv_solves_basis(self):
        m = StainMatrix()
        assert np.allclose(m.pinv() @ m.basis(), np.eye(2), atol=1e-12)


class TestDeconvolve:
    def test_white_pixel_zero(self):
        m = StainMatrix()
        img = RasterImage(np.full((1, 1, 3), 255, dtype=np.uint8))
        c_h, c_d = deconvolve(img, m)
        assert abs(float(c_h[0, 0])) < 0.02
        assert abs(float(c_d[0, 0])) < 0.02

    def test_pure_hema_unit_concentration(self):
        m = StainMatrix()
        pixel = forward_pixel(m, 1.0, 0.0)
        img = RasterImage(pixel.reshape(1, 1, 3))
        c_h, c_d = deconvolve(img, m)
        assert abs(float(c_h[0, 0]) - 1.0) < 0.02
        assert abs(float(c_d[0, 0])) < 0.02

    def test_mixed_concentrations(self):
        m = StainMatrix()
        pixel = forward_pixel(m, 0.5, 0.8)
        img = RasterImage(pixel.reshape(1, 1, 3))
        c_h, c_d = deconvolve(img, m)
        assert abs(float(c_h[0, 0]) - 0.5) < 0.02
        assert abs(float(c_d[0, 0]) - 0.8) < 0.02

    def test_matches_lstsq_oracle_on_od(self):
        m = StainMatrix()
        rng = np.random.default_rng(3)
        pairs = rng.uniform(0.0, 2.0, size=(100, 2))
        od = pairs[:, :1] * m.hema[None, :] + pairs[:, 1:] * m.dab[None, :]
        c_h, c_d = deconvolve_od(od, m)
        for i in range(len(pairs)):
            oracle = lstsq_oracle(od[i], m)
            assert abs(float(c_h[i]) - oracle[0]) < 1e-6
            assert abs(float(c_d[i]) - oracle[1]) < 1e-6
            assert abs(float(c_h[i]) - pairs[i, 0]) < 0.02
            assert abs(float(c_d[i]) - pairs[i, 1]) < 0.02


class TestNormalize:
    def test_all_zero_plane(self):
        out = normalize_concentration(np.zeros((4, 4)))
        assert (out == 0).all()

    def test_percentile_scaling(self):
        plane = np.arange(101, dtype=np.float64).reshape(1, 101)
        out = normalize_concentration(plane, p=99.0)
        assert float(out.max()) == 1.0
        # the mapping divides by p99 of positive values = 99.01
        assert abs(49.5 / np.percentile(np.arange(1, 101), 99) - 0.5) < 0.01
        assert abs(float(out[0, 50]) - 50.0 / 99.01) < 1e-6

    def test_constant_plane_maps_to_one(self):
        out = normalize_concentration(np.full((3, 3), 5.0))
        assert (out == 1.0).all()

    def test_noise_floor_suppresses_crosstalk(self):
        # quantization leak (<0.01) must not be stretched to full scale
        out = normalize_concentration(np.full((3, 3), 0.002))
        assert (out == 0).all()

    def test_bad_percentile(self):
        with pytest.raises(ValueError):
            normalize_concentration(np.ones((2, 2)), p=50.0)

    @given(scale=st.floats(0.05, 10.0))
    @settings(max_examples=30, deadline=None)
    def test_output_range(self, scale):
        rng = np.random.default_rng(17)
        plane = rng.uniform(0.0, scale, size=(16, 16))
        out = normalize_concentration(plane)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestStainRgb:
    def test_known_colors(self):
        m = StainMatrix()
        assert stain_rgb(m, "hematoxylin") == (57, 50, 132)
        assert stain_rgb(m, "dab") == (137, 69, 43)

    def test_zero_concentration_is_white(self):
        m = StainMatrix()
        assert stain_rgb(m, "dab", concentration=0.0) == (255, 255, 255)
