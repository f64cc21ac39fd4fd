"""Cubical sublevel filtrations on raster images and 0-dimensional persistence.

Filtration values live on the top cells (pixels); faces implicitly carry the
minimum of their incident pixels, so the sublevel set at level a is exactly
the closed complex spanned by pixels with value <= a.  Connectivity between
pixels of that complex is through shared vertices, which is why the solid
phase uses 8-adjacency; the complementary void phase uses 4-adjacency, the
standard digital-topology pairing that keeps solid and void consistent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, TextIO

import numpy as np

from .density_field import BinaryImage

_OFFSETS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)),
}


@lru_cache(maxsize=16)
def _neighbor_table(shape: tuple[int, int], adjacency: int) -> list[tuple[int, ...]]:
    """Flat neighbor indices per cell (grid-edge neighbors dropped)."""
    nu, nv = shape
    idx = np.arange(nu * nv).reshape(nu, nv)
    table = np.full((nu, nv, adjacency), -1, dtype=np.int64)
    for k, (da, db) in enumerate(_OFFSETS[adjacency]):
        a0, a1 = max(0, -da), nu - max(0, da)
        b0, b1 = max(0, -db), nv - max(0, db)
        table[a0:a1, b0:b1, k] = idx[a0 + da : a1 + da, b0 + db : b1 + db]
    return [tuple(int(n) for n in row if n >= 0) for row in table.reshape(nu * nv, adjacency)]


@dataclass
class FilteredImage:
    """Filtration values on pixels; masked cells never enter any sublevel set."""

    values: np.ndarray
    domain_mask: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.domain_mask = np.asarray(self.domain_mask, dtype=bool)
        if self.values.shape != self.domain_mask.shape:
            raise ValueError("values and domain_mask must share a shape")


@dataclass(frozen=True, order=True)
class PersistencePair:
    """Birth/death filtration values with their critical cells.

    death is +inf for essential pairs, which have no death cell.  The
    ordering (birth, death, birth_cell) makes pair lists canonical.
    """

    birth: float
    death: float
    birth_cell: tuple[int, int]
    death_cell: tuple[int, int] | None = None
    dim: int = 0

    @property
    def essential(self) -> bool:
        return math.isinf(self.death)


@dataclass
class ComponentLabels:
    """Connected-component labels; -1 marks cells outside the set."""

    labels: np.ndarray
    count: int

    def area(self, label: int) -> int:
        return int(np.count_nonzero(self.labels == label))


def sublevel_persistence_0d(img: FilteredImage, adjacency: int = 8) -> list[PersistencePair]:
    """0-dimensional persistence of the sublevel filtration by union-find.

    Cells enter in increasing (value, cell) order; a cell with no processed
    neighbor births a component at its own value, and a cell joining two
    components kills the younger one there (elder rule, birth ties broken
    toward the lexicographically smaller birth cell surviving).  One
    essential pair remains per component of the full complex.

    Zero-persistence pairs (plateau fragments that merge at their own birth
    level) are diagonal points of the diagram and are dropped, so the pair
    count equals the number of distinct sublevel-set component births.
    """
    if adjacency not in _OFFSETS:
        raise ValueError("adjacency must be 4 or 8")
    nu, nv = img.values.shape
    flat_vals = img.values.ravel()
    idx = np.flatnonzero(img.domain_mask.ravel())
    if idx.size == 0:
        return []
    order = idx[np.lexsort((idx % nv, idx // nv, flat_vals[idx]))].tolist()
    vals = flat_vals.tolist()
    neighbors = _neighbor_table((nu, nv), adjacency)

    parent = [-1] * (nu * nv)  # -1 = not yet in the filtration
    birth_of = {}  # root -> (value, flat birth cell)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    pairs: list[PersistencePair] = []
    for cell in order:
        value = vals[cell]
        roots: list[int] = []
        for nb in neighbors[cell]:
            if parent[nb] >= 0:
                r = find(nb)
                if r not in roots:
                    roots.append(r)
        if not roots:
            parent[cell] = cell
            birth_of[cell] = (value, cell)
            continue
        if len(roots) > 1:
            # flat index order equals lexicographic (a, b) order
            roots.sort(key=birth_of.__getitem__)
            death_cell = divmod(cell, nv)
            elder = roots[0]
            for r in roots[1:]:
                bval, bcell = birth_of.pop(r)
                if value > bval:  # drop diagonal (zero-persistence) pairs
                    pairs.append(PersistencePair(bval, value, divmod(bcell, nv), death_cell))
                parent[r] = elder
            parent[cell] = elder
        else:
            parent[cell] = roots[0]

    for bval, bcell in birth_of.values():
        pairs.append(PersistencePair(bval, math.inf, divmod(bcell, nv), None))
    pairs.sort()
    return pairs


def connected_components(bits: BinaryImage, adjacency: int = 4) -> ComponentLabels:
    """Scanline-ordered BFS labeling of True cells inside the mask."""
    if adjacency not in _OFFSETS:
        raise ValueError("adjacency must be 4 or 8")
    active = bits.bits & bits.domain_mask
    nu, nv = active.shape
    labels = np.full((nu, nv), -1, dtype=np.int64)
    offsets = _OFFSETS[adjacency]
    count = 0
    for a0 in range(nu):
        for b0 in range(nv):
            if not active[a0, b0] or labels[a0, b0] >= 0:
                continue
            labels[a0, b0] = count
            queue = [(a0, b0)]
            head = 0
            while head < len(queue):
                a, b = queue[head]
                head += 1
                for da, db in offsets:
                    na, nb = a + da, b + db
                    if 0 <= na < nu and 0 <= nb < nv and active[na, nb] and labels[na, nb] < 0:
                        labels[na, nb] = count
                        queue.append((na, nb))
            count += 1
    return ComponentLabels(labels, count)


def boundary_touching_labels(labels: ComponentLabels, domain_mask: np.ndarray) -> set[int]:
    """Labels with a cell on the raster edge or 4-adjacent to a masked cell."""
    lab = labels.labels
    touching = set()
    for edge in (lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]):
        touching.update(int(x) for x in np.unique(edge[edge >= 0]))
    mask = np.asarray(domain_mask, dtype=bool)
    if not mask.all():
        for da, db in _OFFSETS[4]:
            shifted = np.roll(~mask, (da, db), axis=(0, 1))
            # roll wraps around; wrapped rows/cols are handled by the edge pass
            if da == 1:
                shifted[0, :] = False
            elif da == -1:
                shifted[-1, :] = False
            if db == 1:
                shifted[:, 0] = False
            elif db == -1:
                shifted[:, -1] = False
            hit = lab[shifted & (lab >= 0)]
            touching.update(int(x) for x in np.unique(hit))
    return touching


def touches_boundary(labels: ComponentLabels, label: int, domain_mask: np.ndarray) -> bool:
    """True when the component meets the raster edge or the mask cut-out."""
    if label < 0 or label >= labels.count:
        raise ValueError(f"unknown component label {label}")
    return label in boundary_touching_labels(labels, domain_mask)


def betti_numbers(bits: BinaryImage) -> tuple[int, int]:
    """(b0, b1) of the solid phase: 8-adjacent solid components and the
    4-adjacent void components that do not reach the domain boundary."""
    solid = connected_components(bits, adjacency=8)
    void = connected_components(BinaryImage(~bits.bits, bits.domain_mask), adjacency=4)
    touching = boundary_touching_labels(void, bits.domain_mask)
    b1 = void.count - len(touching)
    return solid.count, b1


def pairs_to_csv(pairs: Iterable[PersistencePair], out: TextIO) -> None:
    """Write pairs as dim,birth,death,birth_a,birth_b,death_a,death_b rows."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["dim", "birth", "death", "birth_a", "birth_b", "death_a", "death_b"])
    for p in pairs:
        death = "inf" if p.essential else repr(p.death)
        da, db = ("", "") if p.death_cell is None else p.death_cell
        writer.writerow([p.dim, repr(p.birth), death, p.birth_cell[0], p.birth_cell[1], da, db])
