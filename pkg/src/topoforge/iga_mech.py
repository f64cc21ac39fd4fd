"""Isogeometric plane-stress elasticity with SIMP-penalized density.

Displacements are discretized with the density field's own rational basis;
the geometry mapping comes from a separate NURBS surface evaluated at the
quadrature points, so exact conic geometries stay exact regardless of the
design-field resolution.  Everything that does not depend on the density
coefficients (basis tables, Jacobians, strain-displacement matrices,
scatter indices) is precomputed once in an ElementCache and reused across
optimization iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.ndimage
import scipy.sparse
import scipy.sparse.linalg

from .density_field import DensityField
from .splines import NurbsSurface, SingularGeometryError, basis_matrix

ParamMask = Callable[[float, float], bool]


class SingularSystemError(RuntimeError):
    """Raised when the constrained stiffness system cannot be solved."""


@dataclass(frozen=True)
class Material:
    """Linear elastic solid with SIMP penalization exponent."""

    young_modulus: float
    poisson_ratio: float
    p_simp: float = 3.0

    def __post_init__(self) -> None:
        if self.young_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson's ratio must lie in [0, 0.5)")
        if self.p_simp < 1:
            raise ValueError("SIMP exponent must be at least 1")

    def plane_stress_matrix(self) -> np.ndarray:
        """Unit-modulus plane-stress constitutive matrix (scaled by E*rho^p later)."""
        nu = self.poisson_ratio
        return (1.0 / (1.0 - nu * nu)) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
        )


@dataclass
class BoundaryConditions:
    """Fixed control-point dofs and point loads on control-point dofs.

    fixed_dofs: iterable of ((i, j), direction) with direction 0=x, 1=y.
    point_loads: iterable of ((i, j), direction, magnitude).
    """

    fixed_dofs: list
    point_loads: list

    def __post_init__(self) -> None:
        if not self.fixed_dofs:
            raise ValueError("at least one fixed dof is required (rigid-body modes)")


def _gauss_on_spans(knots: np.ndarray, npts: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss points/weights on every nonempty knot span; returns (u, w, span_id)."""
    uniq = np.unique(knots)
    ref_x, ref_w = np.polynomial.legendre.leggauss(npts)
    us, ws, spans = [], [], []
    for k in range(uniq.size - 1):
        t0, t1 = uniq[k], uniq[k + 1]
        half = 0.5 * (t1 - t0)
        us.append(t0 + half * (ref_x + 1.0))
        ws.append(ref_w * half)
        spans.append(np.full(npts, k))
    return np.concatenate(us), np.concatenate(ws), np.concatenate(spans)


class ElementCache:
    """Density-independent quadrature data shared by all iterations."""

    def __init__(
        self,
        geometry: NurbsSurface,
        field_: DensityField,
        param_mask: ParamMask | None = None,
    ) -> None:
        kv_u, kv_v = field_.knots_u, field_.knots_v
        p, q = kv_u.degree, kv_v.degree
        self.nu_basis, self.nv_basis = kv_u.n_basis, kv_v.n_basis
        self.ndof = 2 * self.nu_basis * self.nv_basis

        uq, wu, span_u = _gauss_on_spans(kv_u.knots, p + 1)
        vq, wv, span_v = _gauss_on_spans(kv_v.knots, q + 1)
        self.uq, self.vq = uq, vq
        nqu, nqv = uq.size, vq.size

        # Displacement/density basis tables (the field's rational basis).
        bu = basis_matrix(kv_u, uq)
        bv = basis_matrix(kv_v, vq)
        dbu = basis_matrix(kv_u, uq, derivative=True)
        dbv = basis_matrix(kv_v, vq, derivative=True)
        self.bu, self.bv = bu, bv
        wf = field_.weights
        self.wq = bu @ wf @ bv.T
        wq_u = dbu @ wf @ bv.T
        wq_v = bu @ wf @ dbv.T

        # Geometry mapping derivatives on the quadrature grid.
        gu = basis_matrix(geometry.knots_u, uq)
        gv = basis_matrix(geometry.knots_v, vq)
        dgu = basis_matrix(geometry.knots_u, uq, derivative=True)
        dgv = basis_matrix(geometry.knots_v, vq, derivative=True)
        wgeo = geometry.weights
        den = gu @ wgeo @ gv.T
        den_u = dgu @ wgeo @ gv.T
        den_v = gu @ wgeo @ dgv.T
        coords = []
        for axis in range(2):
            num = wgeo * geometry.control_points[:, :, axis]
            s = (gu @ num @ gv.T) / den
            s_u = (dgu @ num @ gv.T - s * den_u) / den
            s_v = (gu @ num @ dgv.T - s * den_v) / den
            coords.append((s_u, s_v))
        (xu, xv), (yu, yv) = coords
        det = xu * yv - xv * yu
        if det.min() <= 1e-12:
            raise SingularGeometryError(
                f"geometry Jacobian not positive on the quadrature grid (min {det.min():.3e})"
            )
        self.det_grid = det

        # Elements = span pairs; each owns (p+1)*(q+1) quadrature points.
        n_span_u = span_u.max() + 1
        n_span_v = span_v.max() + 1
        self.n_elem = int(n_span_u * n_span_v)
        nloc = (p + 1) * (q + 1)
        nqp = (p + 1) * (q + 1)
        self.nqp, self.nloc = nqp, nloc

        span_starts_u = _span_first_basis(kv_u)
        span_starts_v = _span_first_basis(kv_v)

        elem_ids = np.arange(self.n_elem)
        eu, ev = np.divmod(elem_ids, n_span_v)
        qa = np.arange(p + 1)
        qb = np.arange(q + 1)
        # quadrature points per element run v-fastest, like the local dofs
        self.qp_iu = eu[:, None] * (p + 1) + np.repeat(qa, q + 1)[None, :]
        self.qp_iv = ev[:, None] * (q + 1) + np.tile(qb, p + 1)[None, :]

        iu0 = span_starts_u[eu]
        iv0 = span_starts_v[ev]
        ii = np.repeat(np.arange(p + 1), q + 1)
        jj = np.tile(np.arange(q + 1), p + 1)
        gidx = (iu0[:, None] + ii[None, :]) * self.nv_basis + (iv0[:, None] + jj[None, :])
        self.edof = np.empty((self.n_elem, 2 * nloc), dtype=np.int64)
        self.edof[:, 0::2] = 2 * gidx
        self.edof[:, 1::2] = 2 * gidx + 1

        self.detjw = (det[self.qp_iu, self.qp_iv]
                      * wu[self.qp_iu] * wv[self.qp_iv])

        if param_mask is None:
            self.element_active = np.ones(self.n_elem, dtype=bool)
        else:
            centers_u = [0.5 * (a + b) for a, b in zip(np.unique(kv_u.knots)[:-1], np.unique(kv_u.knots)[1:])]
            centers_v = [0.5 * (a + b) for a, b in zip(np.unique(kv_v.knots)[:-1], np.unique(kv_v.knots)[1:])]
            self.element_active = np.array(
                [param_mask(centers_u[int(a)], centers_v[int(b)]) for a, b in zip(eu, ev)],
                dtype=bool,
            )

        # Strain-displacement matrices B(e, qp, 3, 2*nloc).
        self.bmat = np.zeros((self.n_elem, nqp, 3, 2 * nloc))
        wq = self.wq
        for e in range(self.n_elem):
            su, sv = int(eu[e]), int(ev[e])
            rows_u = su * (p + 1) + qa
            rows_v = sv * (q + 1) + qb
            cols_u = span_starts_u[su] + np.arange(p + 1)
            cols_v = span_starts_v[sv] + np.arange(q + 1)
            w_loc = wf[np.ix_(cols_u, cols_v)]
            nu_l = bu[np.ix_(rows_u, cols_u)]
            nv_l = bv[np.ix_(rows_v, cols_v)]
            dnu_l = dbu[np.ix_(rows_u, cols_u)]
            dnv_l = dbv[np.ix_(rows_v, cols_v)]
            wg = wq[np.ix_(rows_u, rows_v)]
            wg_u = wq_u[np.ix_(rows_u, rows_v)]
            wg_v = wq_v[np.ix_(rows_u, rows_v)]
            # rational shape functions and parametric derivatives, indexed
            # [qp_u, qp_v, local_u, local_v]
            numer = w_loc[None, None, :, :] * nu_l[:, None, :, None] * nv_l[None, :, None, :]
            r = numer / wg[:, :, None, None]
            dr_du = (
                w_loc[None, None, :, :] * dnu_l[:, None, :, None] * nv_l[None, :, None, :]
                - r * wg_u[:, :, None, None]
            ) / wg[:, :, None, None]
            dr_dv = (
                w_loc[None, None, :, :] * nu_l[:, None, :, None] * dnv_l[None, :, None, :]
                - r * wg_v[:, :, None, None]
            ) / wg[:, :, None, None]
            xu_l = xu[np.ix_(rows_u, rows_v)][:, :, None, None]
            xv_l = xv[np.ix_(rows_u, rows_v)][:, :, None, None]
            yu_l = yu[np.ix_(rows_u, rows_v)][:, :, None, None]
            yv_l = yv[np.ix_(rows_u, rows_v)][:, :, None, None]
            det_l = det[np.ix_(rows_u, rows_v)][:, :, None, None]
            rx = _flatten_qp((yv_l * dr_du - yu_l * dr_dv) / det_l)
            ry = _flatten_qp((-xv_l * dr_du + xu_l * dr_dv) / det_l)
            b_e = np.zeros((nqp, 3, 2 * nloc))
            b_e[:, 0, 0::2] = rx
            b_e[:, 1, 1::2] = ry
            b_e[:, 2, 0::2] = ry
            b_e[:, 2, 1::2] = rx
            self.bmat[e] = b_e

        rows = np.repeat(self.edof, 2 * nloc, axis=1).ravel()
        cols = np.tile(self.edof, (1, 2 * nloc)).ravel()
        self.scatter_rows = rows
        self.scatter_cols = cols
        self._db0 = {}

    def db0(self, material: Material) -> np.ndarray:
        key = material.poisson_ratio
        if key not in self._db0:
            d0 = material.plane_stress_matrix()
            self._db0[key] = np.einsum("ab,eqbj->eqaj", d0, self.bmat)
        return self._db0[key]

    def density_at_qp(self, field_: DensityField) -> np.ndarray:
        """Field values on the (element, qp) layout."""
        grid = (self.bu @ (field_.weights * field_.coeffs) @ self.bv.T) / self.wq
        return grid[self.qp_iu, self.qp_iv]

    def qp_grid_scatter(self, per_elem_qp: np.ndarray) -> np.ndarray:
        """Scatter per-(element, qp) values back onto the quadrature grid."""
        grid = np.zeros(self.wq.shape)
        grid[self.qp_iu, self.qp_iv] = per_elem_qp
        return grid

    def project_to_coeffs(self, qp_grid_values: np.ndarray, field_: DensityField) -> np.ndarray:
        """Sum of value * R_ij over quadrature points, for all (i, j) at once."""
        return field_.weights * (self.bu.T @ (qp_grid_values / self.wq) @ self.bv)


def _flatten_qp(arr4: np.ndarray) -> np.ndarray:
    # (qp_u, qp_v, loc_u, loc_v) -> (qp, loc), both v-fastest
    a, b, c, d = arr4.shape
    return arr4.reshape(a * b, c * d)


def _span_first_basis(kv) -> np.ndarray:
    """First nonzero basis index on each nonempty span, in span order."""
    uniq = np.unique(kv.knots)
    starts = []
    for t0 in uniq[:-1]:
        # span [t0, t1): nonzero bases are span_idx-p .. span_idx where
        # span_idx is the last knot index with knots[idx] <= t0
        span_idx = int(np.searchsorted(kv.knots, t0, side="right")) - 1
        starts.append(span_idx - kv.degree)
    return np.asarray(starts, dtype=np.int64)


@dataclass
class MechanicalState:
    """Assembled system plus the per-iteration quantities needed downstream."""

    stiffness: scipy.sparse.csr_matrix
    material: Material
    element_data: ElementCache
    element_stiffness: np.ndarray = field(repr=False)
    rho_qp: np.ndarray = field(repr=False)
    load: np.ndarray | None = None
    displacement: np.ndarray | None = None
    compliance: float | None = None


def assemble(
    geometry: NurbsSurface,
    field_: DensityField,
    material: Material,
    cache: ElementCache | None = None,
    param_mask: ParamMask | None = None,
) -> MechanicalState:
    """SIMP-penalized stiffness: integrand B^T D B * E * rho^p * |J|.

    Masked-out elements are assembled at rho_min^p and detach from the
    design variables.  Pass a prebuilt cache to skip the quadrature setup.
    """
    if cache is None:
        cache = ElementCache(geometry, field_, param_mask)
    rho = cache.density_at_qp(field_)
    rho = np.where(cache.element_active[:, None], rho, field_.rho_min)
    scale = material.young_modulus * rho**material.p_simp * cache.detjw

    db0 = cache.db0(material)
    nqp3 = cache.nqp * 3
    b_flat = cache.bmat.reshape(cache.n_elem, nqp3, 2 * cache.nloc)
    db_scaled = (db0 * scale[:, :, None, None]).reshape(cache.n_elem, nqp3, 2 * cache.nloc)
    kvals = np.matmul(b_flat.transpose(0, 2, 1), db_scaled)
    kvals = 0.5 * (kvals + kvals.transpose(0, 2, 1))

    k = scipy.sparse.coo_matrix(
        (kvals.ravel(), (cache.scatter_rows, cache.scatter_cols)),
        shape=(cache.ndof, cache.ndof),
    ).tocsr()
    return MechanicalState(k, material, cache, kvals, rho)


def dof_index(cache: ElementCache, cp: tuple[int, int], direction: int) -> int:
    i, j = cp
    if not (0 <= i < cache.nu_basis and 0 <= j < cache.nv_basis):
        raise ValueError(f"control point {cp} outside the {cache.nu_basis}x{cache.nv_basis} net")
    if direction not in (0, 1):
        raise ValueError("direction must be 0 (x) or 1 (y)")
    return 2 * (i * cache.nv_basis + j) + direction


def solve(state: MechanicalState, bc: BoundaryConditions) -> tuple[np.ndarray, float]:
    """Direct solve of the constrained system; returns (U, compliance)."""
    cache = state.element_data
    load = np.zeros(cache.ndof)
    for cp, direction, magnitude in bc.point_loads:
        load[dof_index(cache, cp, direction)] += magnitude
    fixed = sorted({dof_index(cache, cp, d) for cp, d in bc.fixed_dofs})
    free = np.setdiff1d(np.arange(cache.ndof), np.asarray(fixed, dtype=np.int64))

    state.load = load
    u = np.zeros(cache.ndof)
    f_free = load[free]
    if np.any(f_free):
        k_ff = state.stiffness[free][:, free].tocsc()
        try:
            lu = scipy.sparse.linalg.splu(k_ff)
            u_f = lu.solve(f_free)
            residual = k_ff @ u_f - f_free
            norm_f = np.linalg.norm(f_free)
            if np.linalg.norm(residual) > 1e-10 * norm_f:
                u_f = u_f + lu.solve(-residual)
                residual = k_ff @ u_f - f_free
        except RuntimeError as err:
            raise SingularSystemError(
                f"constrained stiffness factorization failed ({err}); "
                "check for unconstrained rigid-body modes"
            ) from err
        if not np.all(np.isfinite(u_f)) or np.linalg.norm(residual) > 1e-10 * norm_f:
            raise SingularSystemError(
                "constrained stiffness system is numerically singular; "
                "check for unconstrained rigid-body modes"
            )
        u[free] = u_f
    state.displacement = u
    state.compliance = float(0.5 * load @ u)
    return u, state.compliance


def compliance_sensitivity(state: MechanicalState, field_: DensityField) -> np.ndarray:
    """d(compliance)/d(coeffs): -(p/2) E rho^(p-1) times the density-stripped
    strain energy density, projected onto the rational basis functions."""
    if state.displacement is None:
        raise ValueError("solve the state before computing sensitivities")
    cache = state.element_data
    mat = state.material
    u_e = state.displacement[cache.edof]
    b_flat = cache.bmat.reshape(cache.n_elem, cache.nqp * 3, 2 * cache.nloc)
    strains = (b_flat @ u_e[:, :, None]).reshape(cache.n_elem, cache.nqp, 3)
    d0 = mat.plane_stress_matrix()
    energy = np.einsum("eqa,ab,eqb->eq", strains, d0, strains)
    factor = (
        -0.5
        * mat.p_simp
        * mat.young_modulus
        * state.rho_qp ** (mat.p_simp - 1.0)
        * energy
        * cache.detjw
    )
    factor = np.where(cache.element_active[:, None], factor, 0.0)
    return cache.project_to_coeffs(cache.qp_grid_scatter(factor), field_)


def volume_and_sensitivity(
    field_: DensityField,
    geometry: NurbsSurface,
    cache: ElementCache | None = None,
    param_mask: ParamMask | None = None,
) -> tuple[float, np.ndarray]:
    """Volume fraction over the active domain and its coefficient gradient."""
    if cache is None:
        cache = ElementCache(geometry, field_, param_mask)
    detjw = np.where(cache.element_active[:, None], cache.detjw, 0.0)
    area = detjw.sum()
    rho = cache.density_at_qp(field_)
    volume = float((rho * detjw).sum() / area)
    grad = cache.project_to_coeffs(cache.qp_grid_scatter(detjw), field_) / area
    return volume, grad


def sensitivity_filter(gradient: np.ndarray, coeffs: np.ndarray, radius: float) -> np.ndarray:
    """Density-weighted local averaging of a gradient over the control grid.

    Weights are max(0, radius - index distance); radius is measured in
    control-grid spacings, so the physical element size cancels.  Radius 0
    is the identity.
    """
    if radius <= 0:
        return gradient.copy()
    reach = int(np.ceil(radius)) - 1 if radius == int(radius) else int(np.floor(radius))
    offs = np.arange(-reach, reach + 1)
    dist = np.hypot(offs[:, None], offs[None, :])
    kernel = np.maximum(0.0, radius - dist)
    num = scipy.ndimage.convolve(coeffs * gradient, kernel, mode="constant", cval=0.0)
    wsum = scipy.ndimage.convolve(np.ones_like(coeffs), kernel, mode="constant", cval=0.0)
    return num / (coeffs * wsum)
