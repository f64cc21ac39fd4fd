"""Density field evaluation, rasterization, binarization and PGM round trips."""

import hypothesis
import numpy as np
import pytest
from hypothesis import strategies as st

from topoforge.density_field import (
    DensityField,
    Rasterizer,
    basis_row_at,
    binarize,
    eval_density,
    rasterize,
    read_pgm,
    write_pgm,
)
from topoforge.splines import open_uniform_knots

from oracles import naive_density


def make_field(coeffs, weights=None, degree=2, rho_min=0.1):
    coeffs = np.asarray(coeffs, dtype=float)
    nu, nv = coeffs.shape
    kv_u = open_uniform_knots(nu, degree)
    kv_v = open_uniform_knots(nv, degree)
    w = np.ones((nu, nv)) if weights is None else weights
    return DensityField(kv_u, kv_v, coeffs, w, rho_min)


class TestEval:
    def test_constant_field(self):
        f = make_field(np.full((5, 5), 0.5))
        for u, v in [(0, 0), (0.3, 0.9), (1, 1)]:
            assert eval_density(f, u, v) == pytest.approx(0.5, abs=1e-14)

    def test_corner_indicator(self):
        c = np.full((4, 4), 0.1)
        c[0, 0] = 1.0
        f = make_field(c, rho_min=0.05)
        assert eval_density(f, 0.0, 0.0) == pytest.approx(1.0, abs=1e-14)

    def test_against_naive_double_sum(self):
        rng = np.random.default_rng(31)
        coeffs = rng.uniform(0.1, 1.0, (6, 5))
        weights = rng.uniform(0.5, 2.0, (6, 5))
        f = make_field(coeffs, weights, degree=2)
        for _ in range(10):
            u, v = rng.uniform(0, 1, 2)
            expected = naive_density(
                f.knots_u.knots, 2, f.knots_v.knots, 2, coeffs, weights, u, v
            )
            assert eval_density(f, u, v) == pytest.approx(expected, rel=1e-12)


class TestRasterize:
    def test_constant_raster(self):
        f = make_field(np.full((5, 5), 0.7))
        r = rasterize(f, (16, 12))
        np.testing.assert_allclose(r.values, 0.7, atol=1e-13)
        assert r.resolution == (16, 12)

    def test_default_resolution_sample_count(self):
        f = make_field(np.full((4, 4), 0.5))
        r = rasterize(f, (200, 200))
        assert r.values.size == 40000

    def test_monotone_along_ramp(self):
        c = np.tile(np.linspace(0.1, 1.0, 7)[:, None], (1, 4))
        f = make_field(c)
        r = rasterize(f, (30, 8))
        assert np.all(np.diff(r.values, axis=0) >= -1e-12)

    def test_linearity_in_coefficients(self):
        rng = np.random.default_rng(4)
        c1 = rng.uniform(0.1, 1.0, (5, 5))
        c2 = rng.uniform(0.1, 1.0, (5, 5))
        alpha = 0.37
        f = make_field(c1)
        rast = Rasterizer(f, (20, 20))
        blend = rast.rasterize(alpha * c1 + (1 - alpha) * c2)
        combo = alpha * rast.rasterize(c1).values + (1 - alpha) * rast.rasterize(c2).values
        np.testing.assert_allclose(blend.values, combo, atol=1e-12)

    def test_domain_mask_carried(self):
        f = make_field(np.full((4, 4), 0.5))
        mask = np.zeros((10, 10), dtype=bool)
        mask[:5] = True
        r = rasterize(f, (10, 10), mask)
        assert np.array_equal(r.domain_mask, mask)


class TestBinarize:
    def test_all_low(self):
        f = make_field(np.full((4, 4), 0.1))
        bits = binarize(rasterize(f, (8, 8)), 0.4)
        assert not bits.bits.any()

    def test_all_high(self):
        f = make_field(np.ones((4, 4)))
        bits = binarize(rasterize(f, (8, 8)), 0.4)
        assert bits.bits.all()

    def test_threshold_value_is_solid(self):
        from topoforge.density_field import RasterField

        r = RasterField(np.full((3, 3), 0.4), np.ones((3, 3), bool))
        assert binarize(r, 0.4).bits.all()

    def test_threshold_range_validated(self):
        f = make_field(np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            binarize(rasterize(f, (8, 8)), 1.5)


class TestBasisRow:
    def test_bernstein_tensor_product(self):
        f = make_field(np.full((3, 3), 0.5))
        iu, iv, block = basis_row_at(f, 0.5, 0.5)
        expected = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])
        assert (iu, iv) == (0, 0)
        np.testing.assert_allclose(block, expected, atol=1e-14)

    @hypothesis.given(st.floats(0, 1), st.floats(0, 1))
    def test_rows_sum_to_one(self, u, v):
        rng = np.random.default_rng(8)
        f = make_field(rng.uniform(0.1, 1, (6, 7)), rng.uniform(0.5, 2, (6, 7)))
        _, _, block = basis_row_at(f, u, v)
        assert block.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(12)
        coeffs = rng.uniform(0.1, 1.0, (5, 5))
        weights = rng.uniform(0.5, 2.0, (5, 5))
        f = make_field(coeffs, weights)
        u, v = 0.43, 0.68
        iu, iv, block = basis_row_at(f, u, v)
        h = 1e-6
        dense = np.zeros((5, 5))
        dense[iu : iu + 3, iv : iv + 3] = block
        for i in range(5):
            for j in range(5):
                cp, cm = coeffs.copy(), coeffs.copy()
                cp[i, j] += h
                cm[i, j] -= h
                fp = make_field(cp, weights)
                fm = make_field(cm, weights)
                fd = (eval_density(fp, u, v) - eval_density(fm, u, v)) / (2 * h)
                assert dense[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestPgm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        values = np.round(rng.uniform(0, 1, (13, 9)) * 255) / 255
        path = tmp_path / "field.pgm"
        write_pgm(path, values)
        back = read_pgm(path)
        np.testing.assert_allclose(back, values, atol=0.5 / 255)

    def test_header_is_p5(self, tmp_path):
        path = tmp_path / "x.pgm"
        write_pgm(path, np.zeros((4, 6)))
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n4 6\n255\n")
        assert len(raw) == len(b"P5\n4 6\n255\n") + 24

    def test_masked_cells_black(self, tmp_path):
        path = tmp_path / "m.pgm"
        mask = np.ones((4, 4), bool)
        mask[0, 0] = False
        write_pgm(path, np.ones((4, 4)), mask)
        back = read_pgm(path)
        assert back[0, 0] == 0.0
        assert back[1:, :].min() == 1.0

    def test_readable_by_reference_reader(self, tmp_path):
        PIL = pytest.importorskip("PIL.Image")
        rng = np.random.default_rng(9)
        values = rng.uniform(0, 1, (11, 7))
        path = tmp_path / "ref.pgm"
        write_pgm(path, values)
        img = np.asarray(PIL.open(path))
        assert img.shape == (7, 11)  # rows = v, columns = u
        np.testing.assert_array_equal(img[::-1, :].T, np.rint(values * 255).astype(np.uint8))
