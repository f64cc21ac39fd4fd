#!/usr/bin/env python3
"""Topology report of a saved density snapshot: counts plus both diagrams."""

import argparse

import numpy as np

from topoforge.cubical_ph import pairs_to_csv
from topoforge.density_field import RasterField, read_pgm
from topoforge.topo_objective import (
    detect_holes,
    solid_phase_pairs,
    void_phase_pairs,
    zero_dim_objective,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("image", help="PGM density snapshot")
    parser.add_argument("--threshold", type=float, default=0.4)
    args = parser.parse_args()

    values = read_pgm(args.image)
    raster = RasterField(values, np.ones_like(values, dtype=bool))
    zero = zero_dim_objective(raster, args.threshold)
    holes = detect_holes(raster, args.threshold)
    print(f"N0 = {zero.n0}")
    print(f"N1 = {len(holes)}")
    for k, hole in enumerate(holes):
        print(f"  hole {k}: area={hole.area} birth={hole.pair.birth:.4f} at {hole.pair.birth_cell}")
    print(f"solid-phase pairs: {len(zero.pairs)}, void-phase pairs: {len(void_phase_pairs(raster))}")


if __name__ == "__main__":
    main()
