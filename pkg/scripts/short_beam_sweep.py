#!/usr/bin/env python3
"""Hole-budget sweep on the short beam, printing a compliance table.

By default runs the desk-scale configuration (31x31 cubic net, 100x100
persistence raster, 200 iterations, a couple of minutes per budget).
Pass --full for the full-size 61x61 / 200x200 / 400-iteration setup.
"""

import argparse
import dataclasses
import time
from pathlib import Path

from topoforge.cli_io import ConfigDoc, build_run_config
from topoforge.runner import optimize


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/short_beam_sweep", help="output directory")
    parser.add_argument("--nbar", default="1..5", help="hole budgets, e.g. 1..5")
    parser.add_argument("--full", action="store_true", help="full-size configuration")
    args = parser.parse_args()

    lo, hi = (int(s) for s in args.nbar.split(".."))
    if args.full:
        doc = ConfigDoc(preset="short_beam", mu0=0.8, mu1=0.6).resolved()
    else:
        doc = ConfigDoc(
            preset="short_beam",
            control_u=31,
            control_v=31,
            resolution_u=100,
            resolution_v=100,
            max_iter=200,
            mu0=0.8,
            mu1=0.6,
        ).resolved()

    root = Path(args.out)
    rows = []
    for nbar in range(lo, hi + 1):
        cfg = build_run_config(dataclasses.replace(doc, max_holes=nbar))
        cfg.log_every = 25
        t0 = time.time()
        _, history = optimize(cfg, out_dir=root / f"nbar_{nbar}")
        last = history.records[-1]
        rows.append((nbar, last.compliance, last.n0, last.n1, time.time() - t0))
        print(f"nbar={nbar}: compliance={last.compliance:.4f} N0={last.n0} N1={last.n1}")

    print("\n  nbar  compliance  N0  N1  time(s)")
    for nbar, c, n0, n1, secs in rows:
        print(f"  {nbar:4d}  {c:10.4f}  {n0:2d}  {n1:2d}  {secs:7.1f}")


if __name__ == "__main__":
    main()
