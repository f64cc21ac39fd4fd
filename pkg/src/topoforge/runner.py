"""The optimization loop: compliance + volume constraint + topology control.

Each iteration solves the elasticity problem, measures the topology of the
rasterized density field with the two persistence phases, and, once the
activation iteration is reached and the topology violates its budget, adds
the weighted topology gradients to the filtered compliance gradient before
the MMA update.  When the topology is satisfied but excess material
remains, coefficients supported entirely inside detected holes are frozen
so compliance optimization cleans up the rest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np

from .cubical_ph import connected_components, pairs_to_csv
from .density_field import BinaryImage, DensityField, Rasterizer, binarize, cell_centers, write_pgm
from .iga_mech import (
    BoundaryConditions,
    ElementCache,
    Material,
    assemble,
    compliance_sensitivity,
    sensitivity_filter,
    solve,
    volume_and_sensitivity,
)
from .mma import MmaProblem, MmaState, mma_step
from .splines import NurbsSurface
from .topo_objective import (
    holes_from_pairs,
    one_dim_objective,
    topo_gradient,
    void_phase_pairs,
    zero_dim_objective,
)


class RunnerError(RuntimeError):
    """Raised when the optimization loop hits a non-finite objective."""


@dataclass
class RunConfig:
    """Everything one optimization run needs.

    The built objects (geometry, field, bc) come from a benchmark preset or
    from user code; the scalars mirror the configuration file.
    """

    geometry: NurbsSurface
    field: DensityField
    material: Material
    bc: BoundaryConditions
    volume_fraction: float
    max_holes: int
    rho_bar: float = 0.4
    mu0: float = 0.8
    mu1: float = 0.6
    activation_iter: int = 25
    max_iter: int = 400
    ph_resolution: tuple[int, int] = (200, 200)
    filter_radius: float = 1.5
    move_limit: float = 0.2
    snapshot_every: int = 10
    convergence: str = "fixed"  # "fixed" runs max_iter; "tolerance" may stop early
    param_mask: Callable[[float, float], bool] | None = None
    coeff_active: np.ndarray | None = None  # design-variable mask (L-domain cut-out)
    excess_volume_tol: float = 0.005
    log_every: int = 0  # print a progress line every k iterations (0 = silent)

    def __post_init__(self) -> None:
        if not 0 < self.volume_fraction < 1:
            raise ValueError("volume fraction must lie in (0, 1)")
        if self.max_holes < 0:
            raise ValueError("max_holes must be non-negative")
        if not 0 < self.rho_bar < 1:
            raise ValueError("rho_bar must lie in (0, 1)")
        if self.mu0 < 0 or self.mu1 < 0:
            raise ValueError("topology weights must be non-negative")
        if self.convergence not in ("fixed", "tolerance"):
            raise ValueError("convergence must be 'fixed' or 'tolerance'")


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    volume: float
    n0: int
    n1: int
    c_top0: float
    c_top1: float
    topo_active: bool
    freeze_active: bool
    frozen_count: int


@dataclass
class RunHistory:
    """Append-only per-iteration log plus the termination flags."""

    records: list[IterationRecord] = dc_field(default_factory=list)
    converged: bool = False
    constraints_met: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "compliance", "volume", "N0", "N1", "C_top0", "C_top1"])
            for r in self.records:
                writer.writerow(
                    [
                        r.iteration,
                        repr(r.compliance),
                        repr(r.volume),
                        r.n0,
                        r.n1,
                        repr(r.c_top0),
                        repr(r.c_top1),
                    ]
                )

    def write_topology_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "N0", "N1", "C_top0", "C_top1"])
            for r in self.records:
                writer.writerow([r.iteration, r.n0, r.n1, repr(r.c_top0), repr(r.c_top1)])


def excess_material_exists(
    raster, holes, volume: float, volume_budget: float, n0: int, max_holes: int
) -> bool:
    """Excess-material guard: volume above budget while topology is satisfied.

    Topology control takes precedence: with N0 > 1 or too many holes the
    guard stays off regardless of the volume overshoot.
    """
    del raster  # the predicate is volume-based; holes carry the topology state
    return n0 == 1 and len(holes) <= max_holes and volume > volume_budget + 0.005


def frozen_coefficient_mask(
    field_: DensityField, holes, resolution: tuple[int, int], hole_labels: np.ndarray
) -> np.ndarray:
    """Coefficients whose basis support lies entirely inside detected holes.

    Support of coefficient (i, j) is the knot rectangle
    [xi_i, xi_(i+p+1)] x [eta_j, eta_(j+q+1)]; it is frozen when every raster
    cell whose center falls in that rectangle belongs to a hole component.
    """
    ru, rv = resolution
    hole_cells = np.zeros((ru, rv), dtype=bool)
    for hole in holes:
        hole_cells |= hole_labels == hole.component_label
    if not hole_cells.any():
        return np.zeros(field_.shape, dtype=bool)
    us, vs = cell_centers(resolution)
    p, q = field_.degrees
    ku, kv = field_.knots_u.knots, field_.knots_v.knots
    # prefix sums for O(1) all-inside queries per coefficient
    acc = np.zeros((ru + 1, rv + 1), dtype=np.int64)
    acc[1:, 1:] = np.cumsum(np.cumsum(hole_cells, axis=0), axis=1)
    frozen = np.zeros(field_.shape, dtype=bool)
    nu, nv = field_.shape
    for i in range(nu):
        a0 = int(np.searchsorted(us, ku[i]))
        a1 = int(np.searchsorted(us, ku[i + p + 1]))
        if a1 <= a0:
            continue
        for j in range(nv):
            b0 = int(np.searchsorted(vs, kv[j]))
            b1 = int(np.searchsorted(vs, kv[j + q + 1]))
            if b1 <= b0:
                continue
            count = acc[a1, b1] - acc[a0, b1] - acc[a1, b0] + acc[a0, b0]
            frozen[i, j] = count == (a1 - a0) * (b1 - b0)
    return frozen


def _raster_domain_mask(
    resolution: tuple[int, int], param_mask: Callable[[float, float], bool] | None
) -> np.ndarray:
    ru, rv = resolution
    if param_mask is None:
        return np.ones((ru, rv), dtype=bool)
    us, vs = cell_centers(resolution)
    return np.array([[param_mask(float(u), float(v)) for v in vs] for u in us], dtype=bool)


def optimize(config: RunConfig, out_dir=None) -> tuple[DensityField, RunHistory]:
    """Run the full loop; returns the final field and the iteration history.

    With out_dir set, emits history.csv, topology.csv, density and binary
    PGM snapshots and the two persistence diagrams every snapshot_every
    iterations (plus the final iteration).
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    field_ = DensityField(
        config.field.knots_u,
        config.field.knots_v,
        config.field.coeffs.copy(),
        config.field.weights,
        config.field.rho_min,
    )
    cache = ElementCache(config.geometry, field_, config.param_mask)
    raster_mask = _raster_domain_mask(config.ph_resolution, config.param_mask)
    rasterizer = Rasterizer(field_, config.ph_resolution, raster_mask)

    n = field_.coeffs.size
    x_min_base = np.full(n, field_.rho_min)
    x_max_base = np.ones(n)
    if config.coeff_active is not None:
        inactive = ~config.coeff_active.ravel()
        x_max_base[inactive] = field_.rho_min
        field_.coeffs.ravel()[inactive] = field_.rho_min
    mma_state = MmaState.fresh(n, move_limit=config.move_limit)

    history = RunHistory()
    quiet_streak = 0
    # the objective handed to MMA is normalized by the initial compliance so
    # the volume-constraint penalty dominates regardless of load/modulus units
    obj_scale = None

    for it in range(1, config.max_iter + 1):
        state = assemble(config.geometry, field_, config.material, cache=cache)
        _, compliance = solve(state, config.bc)
        dc = compliance_sensitivity(state, field_)
        volume, dv = volume_and_sensitivity(field_, config.geometry, cache=cache)
        dc_filtered = sensitivity_filter(dc, field_.coeffs, config.filter_radius)

        raster = rasterizer.rasterize(field_.coeffs)
        zero = zero_dim_objective(raster, config.rho_bar)
        void_pairs = void_phase_pairs(raster)
        holes = holes_from_pairs(void_pairs, raster, config.rho_bar)
        one = one_dim_objective(holes, config.max_holes, config.rho_bar)
        n0, n1 = zero.n0, len(holes)

        if obj_scale is None:
            obj_scale = 1.0 / max(abs(compliance), 1e-30)

        active = it >= config.activation_iter and (n0 > 1 or n1 > config.max_holes)
        objective = compliance
        gradient = dc_filtered
        if active:
            objective = compliance + config.mu0 * zero.value + config.mu1 * one.value
            gradient = gradient + config.mu0 * topo_gradient(
                zero.terms, field_, config.ph_resolution
            )
            gradient = gradient + config.mu1 * topo_gradient(
                one.terms, field_, config.ph_resolution
            )

        if not math.isfinite(objective):
            if out is not None:
                dump = out / f"diverged_{it:04d}.pgm"
                write_pgm(dump, raster.values, raster.domain_mask)
                raise RunnerError(f"non-finite objective at iteration {it}; raster dumped to {dump}")
            raise RunnerError(f"non-finite objective at iteration {it}")

        frozen = np.zeros(field_.shape, dtype=bool)
        fire = excess_material_exists(
            raster, holes, volume, config.volume_fraction, n0, config.max_holes
        )
        if fire:
            labels = _hole_label_image(raster, config.rho_bar)
            frozen = frozen_coefficient_mask(field_, holes, config.ph_resolution, labels)

        x = field_.coeffs.ravel().copy()
        x_min = x_min_base.copy()
        x_max = x_max_base.copy()
        grad_flat = gradient.ravel().copy()
        if frozen.any():
            pin = frozen.ravel()
            x_min[pin] = x[pin]
            x_max[pin] = x[pin]
            grad_flat[pin] = 0.0

        problem = MmaProblem(
            x=x,
            x_min=x_min,
            x_max=x_max,
            f0=objective * obj_scale,
            df0=grad_flat * obj_scale,
            g=np.array([volume / config.volume_fraction - 1.0]),
            dg=(dv / config.volume_fraction).ravel()[None, :],
        )
        x_new, mma_state = mma_step(problem, mma_state)
        change = float(np.abs(x_new - x).max())
        field_.coeffs = np.clip(x_new.reshape(field_.shape), field_.rho_min, 1.0)

        history.records.append(
            IterationRecord(
                it,
                compliance,
                volume,
                n0,
                n1,
                zero.value,
                one.value,
                active,
                fire,
                int(frozen.sum()),
            )
        )
        if config.log_every and (it % config.log_every == 0 or it == 1):
            print(
                f"iter {it:4d}  c={compliance:.6g}  V={volume:.4f}  "
                f"N0={n0} N1={n1}  topo={'on' if active else 'off'}"
            )

        if out is not None and (it % config.snapshot_every == 0 or it == config.max_iter):
            _write_snapshots(out, it, raster, zero.pairs, void_pairs, config.rho_bar)

        if config.convergence == "tolerance":
            ok = (
                volume <= config.volume_fraction + 1e-3
                and n0 == 1
                and n1 <= config.max_holes
            )
            quiet_streak = quiet_streak + 1 if (change < 1e-3 and ok) else 0
            if quiet_streak >= 10:
                history.converged = True
                break
    else:
        history.converged = config.convergence == "fixed"

    final_raster = rasterizer.rasterize(field_.coeffs)
    final_zero = zero_dim_objective(final_raster, config.rho_bar)
    final_holes = holes_from_pairs(void_phase_pairs(final_raster), final_raster, config.rho_bar)
    final_volume = volume_and_sensitivity(field_, config.geometry, cache=cache)[0]
    history.constraints_met = (
        final_zero.n0 == 1
        and len(final_holes) <= config.max_holes
        and final_volume <= config.volume_fraction + 1e-3
    )
    if out is not None:
        history.write_csv(out / "history.csv")
        history.write_topology_csv(out / "topology.csv")
        # the post-update final design, distinct from the last in-loop snapshot
        _write_snapshots(
            out,
            "final",
            final_raster,
            final_zero.pairs,
            void_phase_pairs(final_raster),
            config.rho_bar,
        )
    return field_, history


def _hole_label_image(raster, rho_bar: float) -> np.ndarray:
    void_bits = BinaryImage(raster.values < rho_bar, raster.domain_mask)
    return connected_components(void_bits, adjacency=4).labels


def _write_snapshots(out: Path, it, raster, solid_pairs, void_pairs, rho_bar: float) -> None:
    tag = it if isinstance(it, str) else f"{it:04d}"
    write_pgm(out / f"snapshot_{tag}.pgm", raster.values, raster.domain_mask)
    bits = binarize(raster, rho_bar)
    write_pgm(out / f"binary_{tag}.pgm", bits.bits.astype(float), bits.domain_mask)
    with open(out / f"pd_solid_{tag}.csv", "w", newline="") as fh:
        pairs_to_csv(solid_pairs, fh)
    with open(out / f"pd_void_{tag}.csv", "w", newline="") as fh:
        pairs_to_csv(void_pairs, fh)
