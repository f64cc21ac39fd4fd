"""Region classification, the two topology objectives and their gradients."""

import math

import numpy as np
import pytest

from topoforge.cubical_ph import PersistencePair
from topoforge.density_field import DensityField, RasterField, Rasterizer
from topoforge.splines import open_uniform_knots
from topoforge.topo_objective import (
    Phase,
    Region,
    classify_regions,
    detect_holes,
    holes_from_pairs,
    one_dim_objective,
    topo_gradient,
    void_phase_pairs,
    zero_dim_objective,
)

RHO_BAR = 0.4


def pair(birth, death, bc=(0, 0), dc=(1, 1)):
    return PersistencePair(birth, death, bc, None if math.isinf(death) else dc)


def raster(vals, mask=None):
    vals = np.asarray(vals, dtype=float)
    m = np.ones(vals.shape, bool) if mask is None else np.asarray(mask, bool)
    return RasterField(vals, m)


class TestClassify:
    def test_region_one(self):
        regions = classify_regions([pair(-0.9, -0.1)], RHO_BAR)
        assert list(regions.values()) == [Region.I]

    def test_region_three(self):
        regions = classify_regions([pair(-0.3, -0.1)], RHO_BAR)
        assert list(regions.values()) == [Region.III]

    def test_region_four(self):
        regions = classify_regions([pair(-0.9, -0.6)], RHO_BAR)
        assert list(regions.values()) == [Region.IV]

    def test_region_two(self):
        regions = classify_regions([pair(-0.5, 0.7)], RHO_BAR)
        assert list(regions.values()) == [Region.II]

    def test_on_the_lines(self):
        # birth exactly at the threshold stays alive (region I: sum <= 0);
        # birth + death = 0 exactly also stays region I
        assert list(classify_regions([pair(-0.4, -0.1)], RHO_BAR).values()) == [Region.I]
        assert list(classify_regions([pair(-0.6, 0.6)], RHO_BAR).values()) == [Region.I]
        assert list(classify_regions([pair(-0.4, 0.5)], RHO_BAR).values()) == [Region.II]

    def test_solid_phase_alive_pairs_are_always_region_one(self):
        # solid filtration values are negative, so birth + death < 0 always:
        # the verbatim diagonal split leaves region II empty in this phase
        rng = np.random.default_rng(2)
        births = -rng.uniform(RHO_BAR, 1.0, 30)
        deaths = np.minimum(-rng.uniform(0.1, RHO_BAR, 30), births + 1.0)
        pairs = [pair(b, max(b, d)) for b, d in zip(births, deaths)]
        assert all(r is Region.I for r in classify_regions(pairs, RHO_BAR).values())

    def test_essential_rejected(self):
        with pytest.raises(ValueError):
            classify_regions([pair(-0.5, math.inf)], RHO_BAR)


def blob_raster(peaks, base=0.1, shape=(12, 12)):
    """Rectangular blobs of given density on a dilute background."""
    vals = np.full(shape, base)
    for (a0, a1, b0, b1), rho in peaks:
        vals[a0:a1, b0:b1] = rho
    return raster(vals)


class TestZeroDim:
    def test_connected_structure_has_zero_value(self):
        r = blob_raster([((2, 10, 2, 10), 0.9)])
        res = zero_dim_objective(r, RHO_BAR)
        assert res.n0 == 1
        assert res.value == 0.0
        assert res.terms == []

    def test_single_extra_blob_region_one(self):
        # blob of peak 0.9 connected to the main mass through a 0.05 gap:
        # pair (-0.9, -0.05) is region I, value is its death -0.05
        vals = np.full((9, 9), 0.05)
        vals[0:3, 0:3] = 0.9
        vals[6:9, 6:9] = 1.0
        res = zero_dim_objective(raster(vals), RHO_BAR)
        assert res.n0 == 2
        assert res.value == pytest.approx(-0.05)
        assert len(res.terms) == 1
        assert res.terms[0].sign == +1 and res.terms[0].phase is Phase.SOLID

    def test_two_extra_blobs_sum_their_deaths(self):
        # two spurious components; both alive pairs are region I (negative
        # filtration values), so the objective sums their death values
        vals = np.full((9, 15), 0.05)
        vals[3:6, 0:3] = 1.0  # main component (eldest by value)
        vals[3:6, 6:9] = 0.95  # pair (-0.95, -0.05)
        vals[3:6, 12:15] = 0.45  # pair (-0.45, -0.05)
        res = zero_dim_objective(raster(vals), RHO_BAR)
        assert res.n0 == 3
        assert res.value == pytest.approx(-0.05 - 0.05)
        assert [t.sign for t in res.terms] == [1, 1]
        assert all(t.phase is Phase.SOLID for t in res.terms)

    def test_value_zero_iff_connected(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            vals = rng.uniform(0.1, 1.0, (10, 10))
            res = zero_dim_objective(raster(vals), RHO_BAR)
            assert (res.value == 0.0) == (res.n0 == 1)


class TestDetectHoles:
    def test_annulus_single_hole(self):
        vals = np.full((10, 10), 0.9)
        vals[4:6, 4:6] = 0.1
        holes = detect_holes(raster(vals), RHO_BAR)
        assert len(holes) == 1
        assert holes[0].area == 4

    def test_void_reaching_edge_is_not_a_hole(self):
        vals = np.full((10, 10), 0.9)
        vals[4:6, 4:10] = 0.1  # channel to the boundary
        assert detect_holes(raster(vals), RHO_BAR) == []

    def test_two_holes_sorted_by_area(self):
        vals = np.full((12, 18), 0.9)
        vals[2:6, 2:5] = 0.1  # 12 cells
        vals[3:8, 8:16] = 0.1  # 40 cells
        holes = detect_holes(raster(vals), RHO_BAR)
        assert [h.area for h in holes] == [12, 40]

    def test_mask_boundary_disqualifies(self):
        vals = np.full((8, 8), 0.9)
        vals[3:5, 3:5] = 0.1
        mask = np.ones((8, 8), bool)
        mask[4, 5] = False  # cut-out next to the void
        assert detect_holes(raster(vals, mask), RHO_BAR) == []
        mask2 = np.ones((8, 8), bool)
        mask2[0, 0] = False  # far away: hole survives
        assert len(detect_holes(raster(vals, mask2), RHO_BAR)) == 1


class TestOneDim:
    def _holes(self, areas):
        vals = np.full((14, 8 * len(areas) + 2), 0.9)
        col = 1
        recs = []
        for k, area in enumerate(areas):
            w = area // 2
            vals[2 : 2 + 2, col : col + w] = 0.1
            col += w + 3
        r = raster(vals)
        return holes_from_pairs(void_phase_pairs(r), r, RHO_BAR), r

    def test_within_budget_is_zero(self):
        holes, _ = self._holes([8, 10])
        res = one_dim_objective(holes, 3, RHO_BAR)
        assert res.value == 0.0 and res.terms == []

    def test_excess_selects_smallest(self):
        holes, _ = self._holes([6, 8, 10, 12, 14])
        assert len(holes) == 5
        res = one_dim_objective(holes, 3, RHO_BAR)
        assert len(res.terms) == 2
        selected_cells = {t.cell for t in res.terms}
        expected = {h.pair.birth_cell for h in holes[:2]}
        assert selected_cells == expected
        assert all(t.phase is Phase.VOID for t in res.terms)

    def test_region_two_hole_value_is_minus_birth(self):
        vals = np.full((10, 10), 0.9)
        vals[4:6, 4:6] = 0.15
        r = raster(vals)
        holes = detect_holes(r, RHO_BAR)
        res = one_dim_objective(holes, 0, RHO_BAR)
        # void pair has positive birth 0.15; positive sum puts it in region II
        assert res.value == pytest.approx(-0.15)
        assert res.terms[0].sign == -1

    def test_essential_hole_uses_birth_term_only(self):
        from topoforge.topo_objective import HoleRecord, TopoGradientTerm

        rec_pair = PersistencePair(0.12, math.inf, (2, 2), None)
        res = one_dim_objective([HoleRecord(rec_pair, 5, 0)], 0, RHO_BAR)
        assert res.value == pytest.approx(-0.12)
        assert res.terms == [TopoGradientTerm((2, 2), -1, Phase.VOID)]


def density_setup(coeffs, resolution=(20, 20)):
    kv = open_uniform_knots(coeffs.shape[0], 2)
    kw = open_uniform_knots(coeffs.shape[1], 2)
    f = DensityField(kv, kw, coeffs, np.ones(coeffs.shape))
    r = Rasterizer(f, resolution).rasterize(coeffs)
    return f, r


def total_topo(coeffs, n1_bar=0, resolution=(20, 20)):
    f, r = density_setup(coeffs, resolution)
    zero = zero_dim_objective(r, RHO_BAR)
    holes = holes_from_pairs(void_phase_pairs(r), r, RHO_BAR)
    one = one_dim_objective(holes, n1_bar, RHO_BAR)
    return zero.value + one.value, zero.terms + one.terms


class TestGradient:
    def test_empty_terms_zero_gradient(self):
        f, _ = density_setup(np.full((5, 5), 0.5))
        g = topo_gradient([], f, (20, 20))
        assert not g.any()

    def test_gradient_locality(self):
        coeffs = np.full((6, 6), 0.5)
        f, _ = density_setup(coeffs)
        from topoforge.topo_objective import TopoGradientTerm

        term = TopoGradientTerm((1, 1), +1, Phase.VOID)
        g = topo_gradient([term], f, (20, 20))
        # support of the cell-center point: only a (p+1) x (q+1) block is hit
        assert np.count_nonzero(g) <= 9
        assert g.sum() == pytest.approx(1.0, abs=1e-12)  # void phase, +1 sign

    def test_solid_phase_flips_sign(self):
        f, _ = density_setup(np.full((6, 6), 0.5))
        from topoforge.topo_objective import TopoGradientTerm

        g_void = topo_gradient([TopoGradientTerm((3, 3), +1, Phase.VOID)], f, (20, 20))
        g_solid = topo_gradient([TopoGradientTerm((3, 3), +1, Phase.SOLID)], f, (20, 20))
        np.testing.assert_allclose(g_solid, -g_void, atol=1e-14)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        checked = 0
        tried = 0
        while checked < 40 and tried < 200:
            tried += 1
            coeffs = rng.uniform(0.1, 1.0, (5, 5))
            value, terms = total_topo(coeffs)
            if not terms:
                continue
            f, _ = density_setup(coeffs)
            grad = topo_gradient(terms, f, (20, 20))
            h = 1e-6
            signature = lambda ts: sorted((t.cell, t.sign, t.phase.value) for t in ts)
            base_sig = signature(terms)
            for i in range(5):
                for j in range(5):
                    cp, cm = coeffs.copy(), coeffs.copy()
                    cp[i, j] += h
                    cm[i, j] -= h
                    vp, tp = total_topo(cp)
                    vm, tm = total_topo(cm)
                    if signature(tp) != base_sig or signature(tm) != base_sig:
                        continue  # criticality switch: gradient not defined here
                    fd = (vp - vm) / (2 * h)
                    assert grad[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-9)
                    checked += 1
        assert checked >= 40

    def test_descent_step_decreases_objective(self):
        # two blobs: one step against the connectivity gradient must lower it
        coeffs = np.full((7, 7), 0.12)
        coeffs[1:3, 1:3] = 1.0
        coeffs[4:6, 4:6] = 0.85
        value, terms = total_topo(coeffs, n1_bar=99, resolution=(24, 24))
        assert value != 0.0
        f, _ = density_setup(coeffs, (24, 24))
        grad = topo_gradient([t for t in terms if t.phase is Phase.SOLID], f, (24, 24))
        stepped = np.clip(coeffs - 0.05 * grad, 0.1, 1.0)
        new_value, _ = total_topo(stepped, n1_bar=99, resolution=(24, 24))
        assert new_value < value
