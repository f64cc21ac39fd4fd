"""Benchmark presets, TOML configuration files and the topoforge CLI.

Subcommands: `run` (one optimization), `analyze` (one-shot topology report
of a PGM image) and `sweep` (hole-budget sweep emitting a compliance table).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from .cubical_ph import pairs_to_csv
from .density_field import DensityField, RasterField, read_pgm
from .iga_mech import BoundaryConditions, Material
from .runner import RunConfig, optimize
from .splines import (
    KnotVector,
    NurbsSurface,
    greville_abscissae,
    open_uniform_knots,
    quarter_annulus_patch,
    rectangle_patch,
)
from .topo_objective import (
    detect_holes,
    solid_phase_pairs,
    void_phase_pairs,
    zero_dim_objective,
)


class ConfigError(ValueError):
    """Configuration file or CLI argument rejected."""


def _l_beam_mask(u: float, v: float) -> bool:
    """True inside the L-shaped domain: the top-right quadrant is cut out."""
    return not (u > 0.5 and v > 0.5)


@dataclass(frozen=True)
class PresetSpec:
    """Factory defaults of one benchmark problem."""

    name: str
    control_net: tuple[int, int]
    degrees: tuple[int, int]
    load_magnitude: float
    volume_fraction: float


PRESETS = {
    "short_beam": PresetSpec("short_beam", (61, 61), (3, 3), 1e5, 0.5),
    "l_beam": PresetSpec("l_beam", (103, 52), (2, 2), 1e5, 0.5),
    "cantilever": PresetSpec("cantilever", (101, 51), (2, 2), 1e6, 0.4),
    "quarter_annulus": PresetSpec("quarter_annulus", (62, 62), (2, 2), 1e6, 0.4),
}


@dataclass(frozen=True)
class ConfigDoc:
    """Fully resolved scalar configuration; the serializable run description."""

    preset: str
    out_dir: str | None = None
    control_u: int = 0  # 0 means: use the preset default
    control_v: int = 0
    degree_u: int = 0
    degree_v: int = 0
    load_magnitude: float = 0.0
    young_modulus: float = 1.9e11
    poisson_ratio: float = 0.3
    max_holes: int = 3
    mu0: float = 0.8
    mu1: float = 0.6
    rho_bar: float = 0.4
    activation_iter: int = 25
    volume_fraction: float = 0.0
    max_iter: int = 400
    filter_radius: float = 1.5
    rho_min: float = 0.1
    p_simp: float = 3.0
    move_limit: float = 0.2
    convergence: str = "fixed"
    resolution_u: int = 200
    resolution_v: int = 200
    snapshot_every: int = 10

    def resolved(self) -> "ConfigDoc":
        """Fill zero-valued model fields from the preset defaults."""
        preset = PRESETS[self.preset]
        updates = {}
        if self.control_u == 0:
            updates["control_u"] = preset.control_net[0]
        if self.control_v == 0:
            updates["control_v"] = preset.control_net[1]
        if self.degree_u == 0:
            updates["degree_u"] = preset.degrees[0]
        if self.degree_v == 0:
            updates["degree_v"] = preset.degrees[1]
        if self.load_magnitude == 0.0:
            updates["load_magnitude"] = preset.load_magnitude
        if self.volume_fraction == 0.0:
            updates["volume_fraction"] = preset.volume_fraction
        return dataclasses.replace(self, **updates) if updates else self


_SCHEMA = {
    None: {"preset": str, "out_dir": str},
    "model": {
        "control_u": int,
        "control_v": int,
        "degree_u": int,
        "degree_v": int,
        "load_magnitude": float,
        "young_modulus": float,
        "poisson_ratio": float,
    },
    "topology": {
        "max_holes": int,
        "mu0": float,
        "mu1": float,
        "rho_bar": float,
        "activation_iter": int,
    },
    "optimization": {
        "volume_fraction": float,
        "max_iter": int,
        "filter_radius": float,
        "rho_min": float,
        "p_simp": float,
        "move_limit": float,
        "convergence": str,
    },
    "persistence": {"resolution_u": int, "resolution_v": int},
    "output": {"snapshot_every": int},
}


def load_config_doc(path) -> ConfigDoc:
    """Parse and validate a TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err

    fields = {}
    for section, entries in raw.items():
        if isinstance(entries, dict):
            if section not in _SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in entries.items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")
                fields[key] = _coerce(path, section, key, value, _SCHEMA[section][key])
        else:
            if section not in _SCHEMA[None]:
                raise ConfigError(f"{path}: unknown top-level key '{section}'")
            fields[section] = _coerce(path, None, section, entries, _SCHEMA[None][section])

    if "preset" not in fields:
        raise ConfigError(f"{path}: missing required key 'preset'")
    if fields["preset"] not in PRESETS:
        raise ConfigError(
            f"{path}: unknown preset '{fields['preset']}'; choose from {sorted(PRESETS)}"
        )
    doc = ConfigDoc(**fields).resolved()
    _validate_doc(path, doc)
    return doc


def _coerce(path, section, key, value, expected):
    where = f"[{section}] {key}" if section else key
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: {where} must be a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: {where} must be an integer, got {value!r}")
        return int(value)
    if not isinstance(value, expected):
        raise ConfigError(f"{path}: {where} must be {expected.__name__}, got {value!r}")
    return value


def _validate_doc(path, doc: ConfigDoc) -> None:
    checks = [
        (0 < doc.volume_fraction < 1, "volume_fraction must lie in (0, 1)"),
        (doc.max_holes >= 0, "max_holes must be non-negative"),
        (0 < doc.rho_bar < 1, "rho_bar must lie in (0, 1)"),
        (doc.mu0 >= 0 and doc.mu1 >= 0, "topology weights must be non-negative"),
        (doc.max_iter >= 1, "max_iter must be at least 1"),
        (doc.activation_iter >= 1, "activation_iter must be at least 1"),
        (0 < doc.rho_min < 1, "rho_min must lie in (0, 1)"),
        (doc.p_simp >= 1, "p_simp must be at least 1"),
        (0 < doc.move_limit <= 1, "move_limit must lie in (0, 1]"),
        (doc.filter_radius >= 0, "filter_radius must be non-negative"),
        (doc.convergence in ("fixed", "tolerance"), "convergence must be 'fixed' or 'tolerance'"),
        (doc.resolution_u >= 2 and doc.resolution_v >= 2, "persistence resolution must be >= 2"),
        (doc.snapshot_every >= 1, "snapshot_every must be at least 1"),
        (doc.control_u > doc.degree_u and doc.control_v > doc.degree_v,
         "control net must exceed the degrees"),
        (doc.young_modulus > 0, "young_modulus must be positive"),
        (0 <= doc.poisson_ratio < 0.5, "poisson_ratio must lie in [0, 0.5)"),
        (doc.load_magnitude != 0, "load_magnitude must be nonzero"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(f"{path}: {message}")


def serialize_config(doc: ConfigDoc) -> str:
    """Render a fully resolved ConfigDoc back to TOML (round-trip exact)."""
    doc = doc.resolved()

    def fmt(value):
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, str):
            return f'"{value}"'
        return str(value)

    lines = [f'preset = "{doc.preset}"']
    if doc.out_dir is not None:
        lines.append(f'out_dir = "{doc.out_dir}"')
    for section, entries in _SCHEMA.items():
        if section is None:
            continue
        lines.append("")
        lines.append(f"[{section}]")
        for key in entries:
            lines.append(f"{key} = {fmt(getattr(doc, key))}")
    return "\n".join(lines) + "\n"


def build_run_config(doc: ConfigDoc) -> RunConfig:
    """Instantiate geometry, field, boundary conditions per the preset."""
    doc = doc.resolved()
    cu, cv = doc.control_u, doc.control_v
    kv_u = open_uniform_knots(cu, doc.degree_u)
    kv_v = open_uniform_knots(cv, doc.degree_v)
    material = Material(doc.young_modulus, doc.poisson_ratio, doc.p_simp)
    param_mask = None
    coeff_active = None

    if doc.preset == "short_beam":
        geometry = rectangle_patch(2.0, 1.0, kv_u, kv_v)
        fixed = [((0, j), d) for j in range(cv) for d in (0, 1)]
        loads = [((cu - 1, 0), 1, -doc.load_magnitude)]
    elif doc.preset == "cantilever":
        geometry = rectangle_patch(3.0, 1.0, kv_u, kv_v)
        fixed = [((0, j), d) for j in range(cv) for d in (0, 1)]
        loads = [((cu - 1, (cv - 1) // 2), 1, -doc.load_magnitude)]
    elif doc.preset == "l_beam":
        geometry = rectangle_patch(2.0, 1.0, kv_u, kv_v)
        param_mask = _l_beam_mask
        # fix the top edge of the vertical limb: control points whose basis
        # is nonzero on {v = 1, u <= 0.5}
        fixed = [
            ((i, cv - 1), d)
            for i in range(cu)
            if kv_u.knots[i] < 0.5
            for d in (0, 1)
        ]
        gv = greville_abscissae(kv_v)
        j_load = int(np.argmin(np.abs(gv - 0.5)))
        loads = [((cu - 1, j_load), 1, -doc.load_magnitude)]
        gu = greville_abscissae(kv_u)
        coeff_active = ~((gu[:, None] > 0.5) & (gv[None, :] > 0.5))
    elif doc.preset == "quarter_annulus":
        n_segments = len(np.unique(kv_u.knots)) - 1
        geometry = quarter_annulus_patch(5.0, 10.0, n_segments=n_segments)
        fixed = [((0, j), d) for j in range(cv) for d in (0, 1)]
        loads = [((cu - 1, cv - 1), 1, -doc.load_magnitude)]
    else:  # pragma: no cover - guarded by load_config_doc
        raise ConfigError(f"unknown preset '{doc.preset}'")

    coeffs = np.full((cu, cv), doc.volume_fraction)
    coeffs = np.clip(coeffs, doc.rho_min, 1.0)
    field = DensityField(kv_u, kv_v, coeffs, np.ones((cu, cv)), doc.rho_min)
    bc = BoundaryConditions(fixed_dofs=fixed, point_loads=loads)
    return RunConfig(
        geometry=geometry,
        field=field,
        material=material,
        bc=bc,
        volume_fraction=doc.volume_fraction,
        max_holes=doc.max_holes,
        rho_bar=doc.rho_bar,
        mu0=doc.mu0,
        mu1=doc.mu1,
        activation_iter=doc.activation_iter,
        max_iter=doc.max_iter,
        ph_resolution=(doc.resolution_u, doc.resolution_v),
        filter_radius=doc.filter_radius,
        move_limit=doc.move_limit,
        snapshot_every=doc.snapshot_every,
        convergence=doc.convergence,
        param_mask=param_mask,
        coeff_active=coeff_active,
    )


def parse_config(path) -> RunConfig:
    """TOML file to a fully built RunConfig."""
    return build_run_config(load_config_doc(path))


def run_configs_equal(a: RunConfig, b: RunConfig) -> bool:
    """Structural equality over everything a run's outcome depends on."""
    scalars = [
        "volume_fraction",
        "max_holes",
        "rho_bar",
        "mu0",
        "mu1",
        "activation_iter",
        "max_iter",
        "ph_resolution",
        "filter_radius",
        "move_limit",
        "snapshot_every",
        "convergence",
    ]
    if any(getattr(a, s) != getattr(b, s) for s in scalars):
        return False
    if a.material != b.material:
        return False
    if a.bc.fixed_dofs != b.bc.fixed_dofs or a.bc.point_loads != b.bc.point_loads:
        return False
    for attr in ("knots_u", "knots_v"):
        if getattr(a.field, attr) != getattr(b.field, attr):
            return False
    if not np.array_equal(a.field.coeffs, b.field.coeffs):
        return False
    if not np.array_equal(a.field.weights, b.field.weights):
        return False
    if not np.array_equal(a.geometry.control_points, b.geometry.control_points):
        return False
    if not np.array_equal(a.geometry.weights, b.geometry.weights):
        return False
    if (a.coeff_active is None) != (b.coeff_active is None):
        return False
    if a.coeff_active is not None and not np.array_equal(a.coeff_active, b.coeff_active):
        return False
    return True


def _analyze_image(path, threshold: float) -> tuple[int, int, RasterField]:
    values = read_pgm(path)
    raster = RasterField(values, np.ones_like(values, dtype=bool))
    zero = zero_dim_objective(raster, threshold)
    holes = detect_holes(raster, threshold)
    return zero.n0, len(holes), raster


def _cmd_run(args) -> int:
    doc = load_config_doc(args.config)
    if args.out is not None:
        doc = dataclasses.replace(doc, out_dir=args.out)
    if args.max_iter is not None:
        doc = dataclasses.replace(doc, max_iter=args.max_iter)
    if args.snapshot_every is not None:
        doc = dataclasses.replace(doc, snapshot_every=args.snapshot_every)
    _validate_doc(args.config, doc)
    out_dir = doc.out_dir or "topoforge_out"
    config = build_run_config(doc)
    config.log_every = 10
    field, history = optimize(config, out_dir=out_dir)
    last = history.records[-1]
    print(
        f"done: {len(history.records)} iterations, compliance {last.compliance:.6g}, "
        f"V={last.volume:.4f}, N0={last.n0}, N1={last.n1}"
    )
    print(f"topology constraints met: {'yes' if history.constraints_met else 'NO'}")
    print(f"outputs in {out_dir}")
    return 0 if history.constraints_met else 1


def _cmd_analyze(args) -> int:
    n0, n1, raster = _analyze_image(args.image, args.threshold)
    print(f"N0 = {n0}")
    print(f"N1 = {n1}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "pd_solid.csv", "w", newline="") as fh:
            pairs_to_csv(solid_phase_pairs(raster), fh)
        with open(out / "pd_void.csv", "w", newline="") as fh:
            pairs_to_csv(void_phase_pairs(raster), fh)
        print(f"persistence diagrams written to {out}")
    return 0


def _parse_range(spec: str) -> list[int]:
    try:
        if ".." in spec:
            lo, hi = spec.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            return list(range(lo_i, hi_i + 1))
        return [int(spec)]
    except ValueError as err:
        raise ConfigError(f"invalid --nbar range '{spec}'; expected e.g. 1..6") from err


def _cmd_sweep(args) -> int:
    doc = load_config_doc(args.config)
    if args.max_iter is not None:
        doc = dataclasses.replace(doc, max_iter=args.max_iter)
    out_root = Path(args.out or doc.out_dir or "topoforge_sweep")
    out_root.mkdir(parents=True, exist_ok=True)
    nbars = _parse_range(args.nbar)
    rows = []
    for nbar in nbars:
        sub = dataclasses.replace(doc, max_holes=nbar, out_dir=str(out_root / f"nbar_{nbar}"))
        config = build_run_config(sub)
        _, history = optimize(config, out_dir=sub.out_dir)
        last = history.records[-1]
        rows.append((nbar, last.compliance, last.n0, last.n1))
        print(f"nbar={nbar}: compliance={last.compliance:.6g} N0={last.n0} N1={last.n1}")
    table = out_root / "sweep.csv"
    with open(table, "w", newline="") as fh:
        fh.write("nbar,compliance,N0,N1\n")
        for nbar, c, n0, n1 in rows:
            fh.write(f"{nbar},{c!r},{n0},{n1}\n")
    print(f"sweep table written to {table}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="topoforge",
        description="Topology optimization with explicit persistent-homology hole control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one optimization from a config file")
    p_run.add_argument("config", help="TOML configuration file")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_run.add_argument("--max-iter", type=int, help="override the iteration budget")
    p_run.add_argument("--snapshot-every", type=int, help="snapshot interval")
    p_run.add_argument("--seed", type=int, default=0, help="reserved; runs are deterministic")
    p_run.set_defaults(func=_cmd_run)

    p_an = sub.add_parser("analyze", help="topology report of a PGM density image")
    p_an.add_argument("image", help="PGM file (P5)")
    p_an.add_argument("--threshold", type=float, default=0.4, help="binarization threshold")
    p_an.add_argument("--out", help="write persistence diagrams to this directory")
    p_an.set_defaults(func=_cmd_analyze)

    p_sw = sub.add_parser("sweep", help="sweep the hole budget and tabulate compliance")
    p_sw.add_argument("config", help="TOML configuration file")
    p_sw.add_argument("--nbar", required=True, help="hole budgets, e.g. 1..6 or 3")
    p_sw.add_argument("--out", help="output directory root")
    p_sw.add_argument("--max-iter", type=int, help="override the iteration budget")
    p_sw.add_argument("--seed", type=int, default=0, help="reserved; runs are deterministic")
    p_sw.set_defaults(func=_cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as err:
        print(f"topoforge: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
