"""NURBS density field: evaluation, rasterization, binarization, PGM export.

The control coefficients of the field are the design variables of the
optimization.  Rasterization samples the field at cell centers of the unit
parameter square; those cells are the top cells of the cubical complexes
used for persistence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .splines import KnotVector, basis_matrix, bspline_basis_row


@dataclass
class DensityField:
    """Rational tensor-product scalar field with design coefficients.

    coeffs and weights are (nu, nv) grids; coefficients live in
    [rho_min, 1] and the evaluated field stays inside the coefficient
    range by the rational partition of unity.
    """

    knots_u: KnotVector
    knots_v: KnotVector
    coeffs: np.ndarray
    weights: np.ndarray
    rho_min: float = 0.1

    def __post_init__(self) -> None:
        self.coeffs = np.array(self.coeffs, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        shape = (self.knots_u.n_basis, self.knots_v.n_basis)
        if self.coeffs.shape != shape:
            raise ValueError(f"coeffs must have shape {shape}, got {self.coeffs.shape}")
        if self.weights.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {self.weights.shape}")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")
        if not 0 < self.rho_min < 1:
            raise ValueError("rho_min must lie in (0, 1)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape

    @property
    def degrees(self) -> tuple[int, int]:
        return self.knots_u.degree, self.knots_v.degree


def eval_density(field_: DensityField, u: float, v: float) -> float:
    """Field value at a single parameter point."""
    iu, nu_vals = bspline_basis_row(field_.knots_u, u)
    iv, nv_vals = bspline_basis_row(field_.knots_v, v)
    p, q = field_.degrees
    w = field_.weights[iu : iu + p + 1, iv : iv + q + 1]
    c = field_.coeffs[iu : iu + p + 1, iv : iv + q + 1]
    blend = w * np.outer(nu_vals, nv_vals)
    return float((blend * c).sum() / blend.sum())


def basis_row_at(field_: DensityField, u: float, v: float) -> tuple[int, int, np.ndarray]:
    """Partial derivatives of the field value w.r.t. its coefficients.

    Returns (iu, iv, block) where block[k, l] = d rho(u,v) / d coeffs[iu+k, iv+l],
    the rational basis value.  All entries outside the block are zero and the
    block sums to one.
    """
    iu, nu_vals = bspline_basis_row(field_.knots_u, u)
    iv, nv_vals = bspline_basis_row(field_.knots_v, v)
    p, q = field_.degrees
    w = field_.weights[iu : iu + p + 1, iv : iv + q + 1]
    blend = w * np.outer(nu_vals, nv_vals)
    return iu, iv, blend / blend.sum()


def cell_centers(resolution: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Parameter coordinates of raster cell centers along u and v."""
    ru, rv = resolution
    return (np.arange(ru) + 0.5) / ru, (np.arange(rv) + 0.5) / rv


@dataclass
class RasterField:
    """Field values sampled at cell centers; values[a, b] for (u_a, v_b).

    Masked-out cells (domain_mask False) are exterior to the design domain
    and never carry a filtration value.
    """

    values: np.ndarray
    domain_mask: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.domain_mask = np.asarray(self.domain_mask, dtype=bool)
        if self.values.shape != self.domain_mask.shape:
            raise ValueError("values and domain_mask must share a shape")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class BinaryImage:
    """Thresholded raster: bits[a, b] is True where the structure is solid."""

    bits: np.ndarray
    domain_mask: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        self.domain_mask = np.asarray(self.domain_mask, dtype=bool)
        if self.bits.shape != self.domain_mask.shape:
            raise ValueError("bits and domain_mask must share a shape")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.bits.shape


class Rasterizer:
    """Caches the basis tables for a fixed raster resolution.

    The knot vectors and weights never change during a run, so the two
    basis matrices and the rational denominator are computed once; each
    call only costs two small matrix products.
    """

    def __init__(
        self,
        field_: DensityField,
        resolution: tuple[int, int],
        domain_mask: np.ndarray | None = None,
    ) -> None:
        ru, rv = resolution
        if ru < 2 or rv < 2:
            raise ValueError("raster resolution must be at least 2 per axis")
        us, vs = cell_centers(resolution)
        self._bu = basis_matrix(field_.knots_u, us)
        self._bv = basis_matrix(field_.knots_v, vs)
        self._weights = field_.weights
        self._den = self._bu @ field_.weights @ self._bv.T
        if domain_mask is None:
            self.domain_mask = np.ones((ru, rv), dtype=bool)
        else:
            self.domain_mask = np.asarray(domain_mask, dtype=bool)
            if self.domain_mask.shape != (ru, rv):
                raise ValueError("domain_mask shape must match the resolution")

    def rasterize(self, coeffs: np.ndarray) -> RasterField:
        values = (self._bu @ (self._weights * coeffs) @ self._bv.T) / self._den
        return RasterField(values, self.domain_mask)


def rasterize(
    field_: DensityField,
    resolution: tuple[int, int],
    domain_mask: np.ndarray | None = None,
) -> RasterField:
    """Sample the field at cell centers ((a+0.5)/Ru, (b+0.5)/Rv)."""
    return Rasterizer(field_, resolution, domain_mask).rasterize(field_.coeffs)


def binarize(raster: RasterField, rho_bar: float) -> BinaryImage:
    """Solid where value >= rho_bar; the threshold itself counts as solid."""
    if not 0 < rho_bar < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return BinaryImage(raster.values >= rho_bar, raster.domain_mask)


def write_pgm(path, values: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write a density raster as binary PGM (P5, maxval 255).

    values[a, b] indexes (u, v); rows of the image run from v = top to
    bottom so the picture matches the physical orientation.  Masked cells
    are written as 0.
    """
    vals = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    gray = np.rint(255.0 * vals).astype(np.uint8)
    if mask is not None:
        gray = np.where(np.asarray(mask, dtype=bool), gray, 0)
    img = gray.T[::-1, :]  # rows = v descending, columns = u
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by write_pgm back to values[a, b] in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM file: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only maxval 255 PGM files are supported")
    pos += 1  # single whitespace after maxval
    img = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    if img.size != width * height:
        raise ValueError("truncated PGM payload")
    img = img.reshape(height, width)
    return img[::-1, :].T.astype(float) / 255.0
