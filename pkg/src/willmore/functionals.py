"""Scalar and vector functionals tracked along the flow.

All surface integrals use quadrature exact for the piecewise-linear
immersion: face areas and centroids for barycenter, the 3-edge-midpoint
rule (exact for quadratics) for the moment, and the tetrahedral fan for
the signed volume. Curvature integrals are vertex sums against the
mixed-Voronoi area weights.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import NonpositiveVolume, ZeroDenominator

ISO_SHARP = (36.0 * math.pi) ** (1.0 / 3.0)
DLM_EPS = 1e-12


@dataclass(frozen=True)
class FunctionalRecord:
    """One snapshot of every tracked functional.

    ``dlm_ratio`` is NaN when the tracefree energy vanishes (round sphere);
    the standalone operations raise instead.
    """

    area: float
    barycenter: np.ndarray
    quad_moment: float
    volume: float
    total_mean_curvature: float
    willmore: float
    tracefree_energy: float
    iso_deficit: float
    dlm_ratio: float
    sup_tracefree: float
    clamped_mass: float

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value = [float(x) for x in value]
            else:
                value = float(value)
                if math.isnan(value):
                    value = None
            out[f.name] = value
        return out


def measure(mesh, geom):
    """Evaluate all functionals for ``mesh`` with its vertex geometry."""
    p = mesh.vertices[mesh.faces]
    face_areas = mesh.face_areas()
    area = float(face_areas.sum())

    centroids = p.mean(axis=1)
    barycenter = (face_areas[:, None] * centroids).sum(axis=0) / area

    # edge-midpoint rule: exact for the quadratic integrand |f - C|^2
    mids = 0.5 * (p + p[:, [1, 2, 0]]) - barycenter
    mid_sq = np.einsum("fki,fki->fk", mids, mids)
    quad_moment = float((face_areas * mid_sq.mean(axis=1)).sum() / area)

    volume = mesh.signed_volume()

    w_area = geom.area
    total_mean_curvature = float(np.sum(w_area * geom.scalar_h))
    willmore = 0.25 * float(np.sum(w_area * geom.scalar_h**2))
    tracefree_energy = float(np.sum(w_area * geom.tracefree_sq))

    deficit = _deficit(area, volume)
    dlm = _dlm(area, total_mean_curvature, geom, tracefree_energy)

    return FunctionalRecord(
        area=area,
        barycenter=barycenter,
        quad_moment=quad_moment,
        volume=volume,
        total_mean_curvature=total_mean_curvature,
        willmore=willmore,
        tracefree_energy=tracefree_energy,
        iso_deficit=deficit,
        dlm_ratio=dlm,
        sup_tracefree=float(geom.tracefree_sq.max()),
        clamped_mass=geom.clamped_mass,
    )


def _deficit(area, volume):
    if volume <= 0.0:
        return math.nan
    return area / volume ** (2.0 / 3.0) - ISO_SHARP


def _dlm(area, htot, geom, tracefree_energy):
    if tracefree_energy <= DLM_EPS:
        return math.nan
    shape_sq = float(np.sum(geom.area * (geom.scalar_h**2 - 2.0 * geom.gauss_k)))
    numerator = shape_sq - htot**2 / (2.0 * area)
    return numerator / tracefree_energy


def iso_deficit(rec):
    """Isoperimetric deficit A / V^(2/3) - (36 pi)^(1/3); zero only for balls."""
    if rec.volume <= 0.0:
        raise NonpositiveVolume(f"volume {rec.volume:.6g} <= 0")
    return _deficit(rec.area, rec.volume)


def dlm_ratio(rec, geom, mesh):
    """Almost-umbilical ratio: distance of the shape operator from (Hbar/2) Id,
    in squared L2 over the surface, divided by the tracefree energy.

    Computed from integrals of H, H^2 and K alone:
    [int (H^2 - 2K) - (int H)^2 / (2A)] / int |A0|^2.
    """
    if rec.tracefree_energy <= DLM_EPS:
        raise ZeroDenominator(
            f"tracefree energy {rec.tracefree_energy:.3e} <= {DLM_EPS:.0e}"
        )
    return _dlm(rec.area, rec.total_mean_curvature, geom, rec.tracefree_energy)
