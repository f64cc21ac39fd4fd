"""Differentiable topology objectives built from persistence pairs.

The solid phase filters -rho (sublevel = dense material, 8-adjacency); the
void phase filters +rho (sublevel = voids, 4-adjacency).  Pairs alive at the
binarization threshold are classified into regions I/II by the diagonal
birth + death <= 0, and the objectives sum region-I deaths minus region-II
births.  Gradients flow through the critical cells: each selected birth or
death value is the filtration value of one raster cell, whose density is a
rational combination of the control coefficients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cubical_ph import (
    BinaryImage,
    ComponentLabels,
    FilteredImage,
    PersistencePair,
    boundary_touching_labels,
    connected_components,
    sublevel_persistence_0d,
)
from .density_field import DensityField, RasterField, basis_row_at, cell_centers


class Region(enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"


class Phase(enum.Enum):
    SOLID = "solid"  # filtration -rho; d(filtration)/d(rho) = -1
    VOID = "void"  # filtration +rho; d(filtration)/d(rho) = +1


@dataclass(frozen=True)
class TopoGradientTerm:
    """One critical-cell contribution: the objective contains sign * f(cell)."""

    cell: tuple[int, int]
    sign: int
    phase: Phase


@dataclass(frozen=True)
class HoleRecord:
    """An enclosed void component: its void-phase pair, area and label."""

    pair: PersistencePair
    area: int
    component_label: int


@dataclass
class ZeroDimResult:
    value: float
    terms: list[TopoGradientTerm]
    n0: int
    pairs: list[PersistencePair]


@dataclass
class OneDimResult:
    value: float
    terms: list[TopoGradientTerm]


def _classify(pair: PersistencePair, threshold: float) -> Region:
    # Pairs exactly on a splitting line stay on the side that keeps them
    # alive (birth = threshold) or selected (birth + death = 0 -> region I).
    if pair.birth > threshold:
        return Region.III
    if pair.death < threshold:
        return Region.IV
    if pair.birth + pair.death <= 0:
        return Region.I
    return Region.II


def classify_regions(pairs, rho_bar: float) -> dict[PersistencePair, Region]:
    """Region of each finite solid-phase pair in the -rho diagram."""
    out = {}
    for pair in pairs:
        if pair.essential:
            raise ValueError("essential pairs have no region; classify finite pairs only")
        out[pair] = _classify(pair, -rho_bar)
    return out


def solid_phase_pairs(raster: RasterField) -> list[PersistencePair]:
    """0-dim persistence of the -rho filtration (8-adjacency)."""
    return sublevel_persistence_0d(FilteredImage(-raster.values, raster.domain_mask), adjacency=8)


def void_phase_pairs(raster: RasterField) -> list[PersistencePair]:
    """0-dim persistence of the +rho filtration (4-adjacency)."""
    return sublevel_persistence_0d(FilteredImage(raster.values, raster.domain_mask), adjacency=4)


def zero_dim_objective(raster: RasterField, rho_bar: float) -> ZeroDimResult:
    """Connectivity objective: clear spurious components of the solid phase.

    N0 counts the essential component plus every finite pair alive at -rho_bar.
    Region-I pairs contribute their death value (push the merge earlier by
    densifying the bridge cell); region-II pairs contribute minus their birth
    value (erode the component's peak).
    """
    pairs = sublevel_persistence_0d(
        FilteredImage(-raster.values, raster.domain_mask), adjacency=8
    )
    value = 0.0
    terms: list[TopoGradientTerm] = []
    alive = 0
    for pair in pairs:
        if pair.essential:
            continue
        region = _classify(pair, -rho_bar)
        if region is Region.I:
            alive += 1
            value += pair.death
            terms.append(TopoGradientTerm(pair.death_cell, +1, Phase.SOLID))
        elif region is Region.II:
            alive += 1
            value -= pair.birth
            terms.append(TopoGradientTerm(pair.birth_cell, -1, Phase.SOLID))
    return ZeroDimResult(value, terms, 1 + alive, pairs)


def holes_from_pairs(
    pairs: list[PersistencePair], raster: RasterField, rho_bar: float
) -> list[HoleRecord]:
    """Filter void-phase pairs down to enclosed holes, sorted by area.

    A pair is a hole when its component in {rho < rho_bar} exists (birth
    below threshold, death at or above it, or essential) and does not reach
    the domain boundary.  Area is the component's cell count; ties sort by
    birth value then birth cell.
    """
    void_bits = BinaryImage(raster.values < rho_bar, raster.domain_mask)
    labels = connected_components(void_bits, adjacency=4)
    touching = boundary_touching_labels(labels, raster.domain_mask)
    areas = np.bincount(labels.labels[labels.labels >= 0], minlength=labels.count)
    holes = []
    for pair in pairs:
        if not (pair.birth < rho_bar and (pair.essential or pair.death >= rho_bar)):
            continue
        label = int(labels.labels[pair.birth_cell])
        if label in touching:
            continue
        holes.append(HoleRecord(pair, int(areas[label]), label))
    holes.sort(key=lambda h: (h.area, h.pair.birth, h.pair.birth_cell))
    return holes


def detect_holes(raster: RasterField, rho_bar: float) -> list[HoleRecord]:
    """Dual-phase hole detection: void persistence plus boundary filtering."""
    return holes_from_pairs(void_phase_pairs(raster), raster, rho_bar)


def one_dim_objective(holes: list[HoleRecord], n1_bar: int, rho_bar: float) -> OneDimResult:
    """Hole-count objective: drive the smallest excess holes out of the diagram.

    With N1 holes and a budget of n1_bar, the N1 - n1_bar smallest-area holes
    are selected.  Their void-phase pairs classify against the threshold
    rho_bar with the same diagonal split; essential pairs act through their
    birth term only, since an infinite death has no critical cell.
    """
    excess = len(holes) - n1_bar
    if excess <= 0:
        return OneDimResult(0.0, [])
    value = 0.0
    terms: list[TopoGradientTerm] = []
    for hole in holes[:excess]:
        pair = hole.pair
        region = Region.II if pair.essential else _classify(pair, rho_bar)
        if region is Region.I:
            value += pair.death
            terms.append(TopoGradientTerm(pair.death_cell, +1, Phase.VOID))
        elif region is Region.II:
            value -= pair.birth
            terms.append(TopoGradientTerm(pair.birth_cell, -1, Phase.VOID))
    return OneDimResult(value, terms)


def topo_gradient(
    terms: list[TopoGradientTerm],
    field_: DensityField,
    resolution: tuple[int, int],
) -> np.ndarray:
    """Exact gradient of a term sum w.r.t. the control coefficients.

    Each term contributes sign * d f / d rho * R_ij at its cell center,
    where the filtration sign is -1 for the solid phase and +1 for the void
    phase.  Terms at shared cells accumulate.
    """
    grad = np.zeros(field_.shape)
    us, vs = cell_centers(resolution)
    for term in terms:
        a, b = term.cell
        iu, iv, block = basis_row_at(field_, float(us[a]), float(vs[b]))
        coeff = term.sign * (-1.0 if term.phase is Phase.SOLID else 1.0)
        grad[iu : iu + block.shape[0], iv : iv + block.shape[1]] += coeff * block
    return grad
