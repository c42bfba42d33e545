"""Independent analytic oracle for smooth test surfaces.

Surfaces are sympy-symbolic charts r(theta, phi); first and second
fundamental forms, curvatures and (optionally) the surface Laplacian of H
are derived symbolically and lambdified, then integrated by tensor-product
Gauss-Legendre quadrature. Nothing here touches the mesh pipeline, so the
two sides can be compared as independent routes to the same quantities.

Sign conventions match the mesh pipeline: interior normal, H = 2/R > 0 on
round spheres.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import QuadratureNotConverged
from .functionals import FunctionalRecord, ISO_SHARP

_THETA, _PHI = sp.symbols("theta phi", real=True)


@dataclass(frozen=True)
class EllipsoidSurface:
    a: float
    b: float
    c: float

    def chart(self):
        st, ct = sp.sin(_THETA), sp.cos(_THETA)
        return sp.Matrix(
            [self.a * st * sp.cos(_PHI), self.b * st * sp.sin(_PHI), self.c * ct]
        )

    def cache_key(self):
        return ("ellipsoid", self.a, self.b, self.c)


@dataclass(frozen=True)
class RadialGraphSurface:
    """Radial graph (1 + amplitude * u) * omega with u a unit-sup-normalized
    combination of real spherical harmonics; mirrors the mesh generator."""

    coeffs: tuple  # sorted ((l, m), c) pairs
    amplitude: float
    sup_norm: float

    @classmethod
    def from_spec(cls, spec):
        from .shapes import harmonic_sup_norm

        coeffs = spec.resolved_coeffs()
        sup = harmonic_sup_norm(coeffs)
        items = tuple(sorted((lm, c) for lm, c in coeffs.items() if c != 0.0))
        return cls(coeffs=items, amplitude=spec.amplitude, sup_norm=sup)

    def chart(self):
        u = sp.Integer(0)
        for (l, m), c in self.coeffs:
            u += sp.Float(c, 30) * _real_sph_harm_expr(l, m)
        rho = 1 + sp.Float(self.amplitude, 30) * u / sp.Float(self.sup_norm, 30)
        st, ct = sp.sin(_THETA), sp.cos(_THETA)
        omega = sp.Matrix([st * sp.cos(_PHI), st * sp.sin(_PHI), ct])
        return rho * omega

    def cache_key(self):
        return ("radial", self.coeffs, self.amplitude, self.sup_norm)


def _real_sph_harm_expr(l, m):
    """Real orthonormal spherical harmonic, Condon-Shortley phase cancelled
    (same convention as the scipy-based mesh generator)."""
    am = abs(m)
    norm = sp.sqrt((2 * l + 1) * sp.factorial(l - am) / (4 * sp.pi * sp.factorial(l + am)))
    # sympy's assoc_legendre carries the (-1)^m phase; cancel it
    plm = (-1) ** am * sp.assoc_legendre(l, am, sp.cos(_THETA))
    if m > 0:
        return sp.sqrt(2) * norm * plm * sp.cos(am * _PHI)
    if m < 0:
        return sp.sqrt(2) * norm * plm * sp.sin(am * _PHI)
    return norm * plm


@lru_cache(maxsize=32)
def _compiled(cache_key, surface, with_laplacian=False):
    """Symbolic fundamental forms -> lambdified evaluators.

    Returns a dict of vectorized callables of (theta, phi): position,
    sqrt_g, H, K, r dot interior normal, and optionally lap_H.
    """
    r = surface.chart()
    r_t = r.diff(_THETA)
    r_p = r.diff(_PHI)
    e = r_t.dot(r_t)
    f = r_t.dot(r_p)
    g = r_p.dot(r_p)
    det = e * g - f**2
    sqrt_g = sp.sqrt(det)
    n_out = r_t.cross(r_p)
    n_int = -n_out / sqrt_g
    ll = r.diff(_THETA, 2).dot(n_int)
    mm = r.diff(_THETA, _PHI).dot(n_int)
    nn = r.diff(_PHI, 2).dot(n_int)
    h = (e * nn - 2 * f * mm + g * ll) / det
    k = (ll * nn - mm**2) / det
    rdotn = r.dot(n_int)

    exprs = {
        "x": r[0], "y": r[1], "z": r[2],
        "sqrt_g": sqrt_g, "H": h, "K": k, "r_dot_nint": rdotn,
    }
    if with_laplacian:
        gup = sp.Matrix([[g, -f], [-f, e]]) / det
        coords = (_THETA, _PHI)
        lap = sp.Integer(0)
        for i in range(2):
            inner = sp.Integer(0)
            for j in range(2):
                inner += gup[i, j] * h.diff(coords[j])
            lap += (sqrt_g * inner).diff(coords[i])
        exprs["lap_H"] = lap / sqrt_g

    return {
        name: sp.lambdify((_THETA, _PHI), expr, modules="numpy", cse=True)
        for name, expr in exprs.items()
    }


def _evaluators(surface, with_laplacian=False):
    return _compiled(surface.cache_key(), surface, with_laplacian)


def _gl_grid(quad_order):
    """Tensor-product Gauss-Legendre nodes/weights on (0, pi) x (0, 2 pi).

    All nodes are interior, so chart pole singularities are never sampled.
    """
    x, w = np.polynomial.legendre.leggauss(quad_order)
    theta = 0.5 * np.pi * (x + 1.0)
    w_theta = 0.5 * np.pi * w
    phi = np.pi * (x + 1.0)
    w_phi = np.pi * w
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ww = np.outer(w_theta, w_phi)
    return tt, pp, ww


def _raw_integrals(surface, quad_order):
    ev = _evaluators(surface)
    tt, pp, ww = _gl_grid(quad_order)
    sqrt_g = ev["sqrt_g"](tt, pp)
    h = ev["H"](tt, pp)
    k = ev["K"](tt, pp)
    pos = np.stack([ev["x"](tt, pp), ev["y"](tt, pp), ev["z"](tt, pp)], axis=-1)
    rdotn = ev["r_dot_nint"](tt, pp)
    dmu = ww * sqrt_g

    vals = {
        "area": np.sum(dmu),
        "int_r_x": np.sum(dmu * pos[..., 0]),
        "int_r_y": np.sum(dmu * pos[..., 1]),
        "int_r_z": np.sum(dmu * pos[..., 2]),
        "int_r_sq": np.sum(dmu * np.einsum("...i,...i->...", pos, pos)),
        "volume": -np.sum(dmu * rdotn) / 3.0,
        "int_h": np.sum(dmu * h),
        "int_h_sq": np.sum(dmu * h**2),
        "int_k": np.sum(dmu * k),
    }
    return {name: float(v) for name, v in vals.items()}


def analytic_functionals(surface, quad_order=64, tol=1e-8):
    """Evaluate every tracked functional on the exact smooth surface.

    Integrates at ``quad_order`` and ``2 * quad_order`` and requires the
    relative change of every integral to be below ``tol``; the finer values
    are returned.
    """
    if quad_order < 32:
        raise ValueError("quad_order must be >= 32")
    coarse = _raw_integrals(surface, quad_order)
    fine = _raw_integrals(surface, 2 * quad_order)
    scale = max(abs(v) for v in fine.values())
    for name, v in fine.items():
        if abs(v - coarse[name]) > tol * max(abs(v), 1e-3 * scale):
            raise QuadratureNotConverged(
                f"integral {name} moved {abs(v - coarse[name]):.3e} when doubling "
                f"quad_order from {quad_order}"
            )
    return _record_from_integrals(surface, fine)


def _record_from_integrals(surface, vals):
    area = vals["area"]
    barycenter = np.array([vals["int_r_x"], vals["int_r_y"], vals["int_r_z"]]) / area
    # parallel-axis identity: Q = avg |r|^2 - |C|^2
    quad_moment = vals["int_r_sq"] / area - float(barycenter @ barycenter)
    volume = vals["volume"]
    htot = vals["int_h"]
    willmore = 0.25 * vals["int_h_sq"]
    tracefree = vals["int_h_sq"] / 2.0 - 2.0 * vals["int_k"]
    deficit = area / volume ** (2.0 / 3.0) - ISO_SHARP if volume > 0 else math.nan
    shape_sq = vals["int_h_sq"] - 2.0 * vals["int_k"]
    dlm = (
        (shape_sq - htot**2 / (2.0 * area)) / tracefree
        if tracefree > 1e-12
        else math.nan
    )
    return FunctionalRecord(
        area=area,
        barycenter=barycenter,
        quad_moment=quad_moment,
        volume=volume,
        total_mean_curvature=htot,
        willmore=willmore,
        tracefree_energy=tracefree,
        iso_deficit=deficit,
        dlm_ratio=dlm,
        sup_tracefree=float(np.max(curvature_grid(surface, 256, 256)["tracefree_sq"])),
        clamped_mass=0.0,
    )


def curvature_grid(surface, n_theta=128, n_phi=128):
    """Pointwise H, K, |A0|^2 and positions on an interior (theta, phi) grid."""
    ev = _evaluators(surface)
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    h = ev["H"](tt, pp)
    k = ev["K"](tt, pp)
    pos = np.stack([ev["x"](tt, pp), ev["y"](tt, pp), ev["z"](tt, pp)], axis=-1)
    return {
        "theta": tt,
        "phi": pp,
        "position": pos,
        "H": h,
        "K": k,
        "tracefree_sq": 0.5 * h**2 - 2.0 * k,
    }


def pointwise_curvatures(surface, theta, phi):
    """H, K at given chart parameters (for vertex-wise mesh comparisons)."""
    ev = _evaluators(surface)
    return ev["H"](theta, phi), ev["K"](theta, phi)


def willmore_operator_sq_integral(surface, quad_order=64):
    """int (lap H + |A0|^2 H)^2 dmu on the exact surface (symbolic lap H)."""
    ev = _evaluators(surface, with_laplacian=True)
    tt, pp, ww = _gl_grid(quad_order)
    sqrt_g = ev["sqrt_g"](tt, pp)
    h = ev["H"](tt, pp)
    k = ev["K"](tt, pp)
    lap_h = ev["lap_H"](tt, pp)
    wop = lap_h + (0.5 * h**2 - 2.0 * k) * h
    return float(np.sum(ww * sqrt_g * wop**2))


def ellipsoid_pointwise_curvatures(a, b, c, points):
    """Exact H, K at points of the ellipsoid via the implicit-surface
    formulas (div of the unit normal); safe at chart poles."""
    p = np.asarray(points, dtype=np.float64)
    inv_sq = np.array([1.0 / a**2, 1.0 / b**2, 1.0 / c**2])
    grad = 2.0 * p * inv_sq
    gn_sq = np.einsum("...i,...i->...", grad, grad)
    gn = np.sqrt(gn_sq)
    hess_diag = 2.0 * inv_sq
    lap = hess_diag.sum()
    quad = np.einsum("...i,i,...i->...", grad, hess_diag, grad)
    h = (lap * gn_sq - quad) / gn**3
    adj = np.array(
        [
            hess_diag[1] * hess_diag[2],
            hess_diag[0] * hess_diag[2],
            hess_diag[0] * hess_diag[1],
        ]
    )
    k = np.einsum("...i,i,...i->...", grad, adj, grad) / gn_sq**2
    return h, k


def sphere_params_of_points(points, scale=(1.0, 1.0, 1.0)):
    """Chart parameters (theta, phi) of points on an ellipsoid diag(scale)."""
    unit = np.asarray(points, dtype=np.float64) / np.asarray(scale)
    unit /= np.linalg.norm(unit, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(unit[..., 2], -1.0, 1.0))
    phi = np.arctan2(unit[..., 1], unit[..., 0])
    return theta, phi
