"""B-spline and NURBS primitives: knot vectors, basis evaluation, surfaces.

Everything here is a pure function of immutable inputs.  Basis rows are
returned in sparse form (start index + the p+1 nonzero values) so that
callers can tabulate them once on fixed grids and reuse the tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SingularGeometryError(RuntimeError):
    """Raised when a geometry mapping has a non-positive Jacobian."""


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector of a given degree.

    The first and last ``degree + 1`` knots must coincide, the sequence must
    be non-decreasing and there must be at least one basis function.
    """

    knots: np.ndarray
    degree: int

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1:
            raise ValueError("knots must be a 1-D sequence")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        n = knots.size - p - 1
        if n < 1:
            raise ValueError("need at least one basis function: len(knots) > degree + 1")
        if knots[0] != knots[p] or knots[-1] != knots[n]:
            raise ValueError("knot vector must be open: first/last degree+1 knots equal")

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n_basis])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)


def open_uniform_knots(n_basis: int, degree: int, lo: float = 0.0, hi: float = 1.0) -> KnotVector:
    """Open uniform knot vector with `n_basis` functions on [lo, hi]."""
    if n_basis < degree + 1:
        raise ValueError("n_basis must be at least degree + 1")
    interior = np.linspace(lo, hi, n_basis - degree + 1)[1:-1]
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return KnotVector(knots, degree)


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Greville points: averages of `degree` consecutive interior knots."""
    p = kv.degree
    if p == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    return np.array([kv.knots[i + 1 : i + p + 1].mean() for i in range(kv.n_basis)])


def find_span(kv: KnotVector, xi: float) -> int:
    """Index i with knots[i] <= xi < knots[i+1], closed at the right end."""
    lo, hi = kv.domain
    if not (lo <= xi <= hi):
        raise ValueError(f"parameter {xi} outside knot domain [{lo}, {hi}]")
    span = int(np.searchsorted(kv.knots, xi, side="right")) - 1
    return min(max(span, kv.degree), kv.n_basis - 1)


def _row_in_span(knots: np.ndarray, span: int, xi: float, deg: int) -> np.ndarray:
    # Triangular Cox-de Boor table for the deg+1 functions alive on this span.
    vals = np.zeros(deg + 1)
    vals[0] = 1.0
    left = np.zeros(deg + 1)
    right = np.zeros(deg + 1)
    for j in range(1, deg + 1):
        left[j] = xi - knots[span + 1 - j]
        right[j] = knots[span + j] - xi
        saved = 0.0
        for r in range(j):
            temp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        vals[j] = saved
    return vals


def bspline_basis_row(kv: KnotVector, xi: float) -> tuple[int, np.ndarray]:
    """All nonzero basis values at xi as (first index, degree+1 values)."""
    span = find_span(kv, xi)
    return span - kv.degree, _row_in_span(kv.knots, span, xi, kv.degree)


def bspline_basis_row_derivative(kv: KnotVector, xi: float) -> tuple[int, np.ndarray]:
    """First derivatives of the nonzero basis functions at xi."""
    p = kv.degree
    span = find_span(kv, xi)
    start = span - p
    if p == 0:
        return start, np.zeros(1)
    # Degree p-1 functions alive on the same span are indices span-p+1 .. span.
    low = _row_in_span(kv.knots, span, xi, p - 1)
    knots = kv.knots
    ders = np.zeros(p + 1)
    for k in range(p + 1):
        i = start + k
        acc = 0.0
        den = knots[i + p] - knots[i]
        if den > 0.0 and 1 <= k <= p:
            acc += low[k - 1] / den
        den = knots[i + p + 1] - knots[i + 1]
        if den > 0.0 and k <= p - 1:
            acc -= low[k] / den
        ders[k] = p * acc
    return start, ders


def bspline_basis(kv: KnotVector, i: int, xi: float) -> float:
    """Single basis value N_{i,p}(xi)."""
    if not 0 <= i < kv.n_basis:
        raise IndexError(f"basis index {i} out of range [0, {kv.n_basis})")
    start, vals = bspline_basis_row(kv, xi)
    if start <= i <= start + kv.degree:
        return float(vals[i - start])
    return 0.0


def bspline_basis_derivative(kv: KnotVector, i: int, xi: float) -> float:
    """Single basis derivative dN_{i,p}/dxi; zero for degree 0."""
    if not 0 <= i < kv.n_basis:
        raise IndexError(f"basis index {i} out of range [0, {kv.n_basis})")
    if kv.degree == 0:
        find_span(kv, xi)
        return 0.0
    start, vals = bspline_basis_row_derivative(kv, xi)
    if start <= i <= start + kv.degree:
        return float(vals[i - start])
    return 0.0


def basis_matrix(kv: KnotVector, params: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Dense (len(params), n_basis) table of basis values or derivatives.

    Built once per fixed grid (raster cells, quadrature points); the knot
    vectors never change afterwards, so callers cache the result.
    """
    params = np.asarray(params, dtype=float)
    out = np.zeros((params.size, kv.n_basis))
    row_fn = bspline_basis_row_derivative if derivative else bspline_basis_row
    for k, xi in enumerate(params):
        start, vals = row_fn(kv, float(xi))
        out[k, start : start + kv.degree + 1] = vals
    return out


@dataclass(frozen=True)
class NurbsSurface:
    """Tensor-product NURBS surface with 2-D control points."""

    knots_u: KnotVector
    knots_v: KnotVector
    control_points: np.ndarray = field(repr=False)  # (nu, nv, 2)
    weights: np.ndarray = field(repr=False)  # (nu, nv)

    def __post_init__(self) -> None:
        cp = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        nu, nv = self.knots_u.n_basis, self.knots_v.n_basis
        if cp.shape != (nu, nv, 2):
            raise ValueError(f"control points must have shape {(nu, nv, 2)}, got {cp.shape}")
        if w.shape != (nu, nv):
            raise ValueError(f"weights must have shape {(nu, nv)}, got {w.shape}")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def degrees(self) -> tuple[int, int]:
        return self.knots_u.degree, self.knots_v.degree


def _local_blocks(surf: NurbsSurface, u: float, v: float, derivative: bool = False):
    iu, nu_vals = bspline_basis_row(surf.knots_u, u)
    iv, nv_vals = bspline_basis_row(surf.knots_v, v)
    p, q = surf.degrees
    w = surf.weights[iu : iu + p + 1, iv : iv + q + 1]
    cp = surf.control_points[iu : iu + p + 1, iv : iv + q + 1]
    if not derivative:
        return nu_vals, nv_vals, w, cp
    _, du_vals = bspline_basis_row_derivative(surf.knots_u, u)
    _, dv_vals = bspline_basis_row_derivative(surf.knots_v, v)
    return nu_vals, nv_vals, du_vals, dv_vals, w, cp


def nurbs_eval(surf: NurbsSurface, u: float, v: float) -> np.ndarray:
    """Surface point S(u, v) as a length-2 array."""
    nu_vals, nv_vals, w, cp = _local_blocks(surf, u, v)
    blend = w * np.outer(nu_vals, nv_vals)
    den = blend.sum()
    num = np.tensordot(blend, cp, axes=([0, 1], [0, 1]))
    return num / den


def nurbs_jacobian(surf: NurbsSurface, u: float, v: float) -> np.ndarray:
    """Jacobian d(x,y)/d(u,v) of the surface mapping, 2x2.

    Raises SingularGeometryError when the determinant is not positive.
    """
    nu_vals, nv_vals, du_vals, dv_vals, w, cp = _local_blocks(surf, u, v, derivative=True)
    blend = w * np.outer(nu_vals, nv_vals)
    blend_u = w * np.outer(du_vals, nv_vals)
    blend_v = w * np.outer(nu_vals, dv_vals)
    den = blend.sum()
    s = np.tensordot(blend, cp, axes=([0, 1], [0, 1])) / den
    s_u = (np.tensordot(blend_u, cp, axes=([0, 1], [0, 1])) - s * blend_u.sum()) / den
    s_v = (np.tensordot(blend_v, cp, axes=([0, 1], [0, 1])) - s * blend_v.sum()) / den
    jac = np.column_stack([s_u, s_v])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 1e-12:
        raise SingularGeometryError(f"degenerate geometry mapping at (u={u}, v={v}): det(J)={det}")
    return jac


def rectangle_patch(length: float, height: float, kv_u: KnotVector, kv_v: KnotVector) -> NurbsSurface:
    """Axis-aligned rectangle [0,length]x[0,height] with an affine parameterization.

    Control points sit at scaled Greville abscissae, so the map is exactly
    (u, v) -> (length*u, height*v) by linear precision of the basis.
    """
    gu = greville_abscissae(kv_u) * length
    gv = greville_abscissae(kv_v) * height
    cp = np.stack(np.meshgrid(gu, gv, indexing="ij"), axis=-1)
    return NurbsSurface(kv_u, kv_v, cp, np.ones((kv_u.n_basis, kv_v.n_basis)))


def quarter_annulus_patch(
    r_inner: float,
    r_outer: float,
    n_segments: int = 1,
    radial_points: int = 3,
) -> NurbsSurface:
    """Exact quarter annulus in the second quadrant, swept from the negative
    x-axis (u=0) to the positive y-axis (u=1), inner radius at v=0.

    The angular direction is a chain of rational quadratic arc segments with
    doubled interior knots; the radial direction is a straight degree-2 line.
    Both directions reproduce the circle/segment exactly, so quadrature areas
    converge to pi*(R^2 - r^2)/4 at the quadrature's own rate.
    """
    if n_segments < 1:
        raise ValueError("need at least one arc segment")
    if r_outer <= r_inner or r_inner <= 0:
        raise ValueError("radii must satisfy 0 < r_inner < r_outer")
    thetas = np.pi - 0.5 * np.pi * np.linspace(0.0, 1.0, n_segments + 1)
    half = 0.25 * np.pi / n_segments  # half sweep of one segment
    arc_pts = [np.array([np.cos(thetas[0]), np.sin(thetas[0])])]
    arc_w = [1.0]
    for k in range(n_segments):
        mid = 0.5 * (thetas[k] + thetas[k + 1])
        arc_pts.append(np.array([np.cos(mid), np.sin(mid)]) / np.cos(half))
        arc_pts.append(np.array([np.cos(thetas[k + 1]), np.sin(thetas[k + 1])]))
        arc_w.extend([np.cos(half), 1.0])
    knots_u = np.concatenate(
        [[0.0, 0.0, 0.0]]
        + [[k / n_segments, k / n_segments] for k in range(1, n_segments)]
        + [[1.0, 1.0, 1.0]]
    )
    kv_u = KnotVector(knots_u, 2)
    if radial_points < 3:
        raise ValueError("radial direction needs at least 3 control points for degree 2")
    kv_v = open_uniform_knots(radial_points, 2)
    radii = r_inner + (r_outer - r_inner) * greville_abscissae(kv_v)
    arc = np.asarray(arc_pts)
    cp = arc[:, None, :] * radii[None, :, None]
    weights = np.repeat(np.asarray(arc_w)[:, None], radial_points, axis=1)
    return NurbsSurface(kv_u, kv_v, cp, weights)
