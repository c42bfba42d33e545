"""Test-geometry generators: icospheres, harmonic perturbations, ellipsoids,
area normalization and least-squares sphere fitting.

Generators are deterministic: the same spec (including seed) reproduces the
mesh bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LevelTooLarge, SelfIntersectingRadial, SingularFit
from .mesh import TriMesh, build

MAX_LEVEL = 8
SPHERE_AREA = 4.0 * np.pi

# golden-ratio icosahedron, unit circumradius
_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
        (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
        (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
    ],
    dtype=np.float64,
) / math.sqrt(1.0 + _PHI**2)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def icosphere(level):
    """Unit icosphere: icosahedron with ``level`` rounds of 4-to-1 subdivision,
    all vertices projected to the unit sphere. 10 * 4**level + 2 vertices."""
    if level < 0 or level > MAX_LEVEL:
        raise LevelTooLarge(f"subdivision level {level} outside [0, {MAX_LEVEL}]")
    verts = _ICO_VERTS.copy()
    faces = _ICO_FACES.copy()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1)[:, None]
    return build(verts, faces)


def _subdivide(verts, faces):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(edges, axis=1)
    unique_edges, inverse = np.unique(und, axis=0, return_inverse=True)
    midpoints = 0.5 * (verts[unique_edges[:, 0]] + verts[unique_edges[:, 1]])
    mid_idx = len(verts) + np.arange(len(unique_edges))
    m01, m12, m20 = np.split(mid_idx[inverse], 3)
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return np.concatenate([verts, midpoints]), new_faces


def ellipsoid(a, b, c, level):
    """Icosphere vertices mapped by diag(a, b, c)."""
    base = icosphere(level)
    scaled = base.vertices * np.array([a, b, c])
    return build(scaled, base.faces)


def normalize_area(mesh, target=SPHERE_AREA):
    """Uniformly rescale about the area barycenter so total area hits ``target``."""
    areas = mesh.face_areas()
    total = areas.sum()
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    center = (areas[:, None] * centroids).sum(axis=0) / total
    scale = math.sqrt(target / total)
    return mesh.with_vertices(center + scale * (mesh.vertices - center))


# -- spherical-harmonic perturbations -------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """Radial spherical-harmonic perturbation of the unit sphere.

    ``coeffs`` maps (l, m) to a coefficient and, when given, overrides the
    seeded draw. Degrees 0 and 1 are excluded: they only rescale or translate.
    """

    lmax: int = 4
    seed: int = 0
    amplitude: float = 0.05
    level: int = 4
    coeffs: dict = field(default=None)

    def __post_init__(self):
        if self.lmax < 2:
            raise ValueError("lmax must be >= 2")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.coeffs is not None:
            for (l, m) in self.coeffs:
                if l < 2 or abs(m) > l:
                    raise ValueError(f"invalid harmonic index (l={l}, m={m})")

    def resolved_coeffs(self):
        """The (l, m) -> coefficient map actually used (seeded if not explicit)."""
        if self.coeffs is not None:
            return dict(self.coeffs)
        rng = np.random.default_rng(self.seed)
        out = {}
        for l in range(2, self.lmax + 1):
            for m in range(-l, l + 1):
                out[(l, m)] = float(rng.standard_normal())
        return out


def real_sph_harm(l, m, theta, phi):
    """Real orthonormal spherical harmonic of degree l, order m.

    Built from the complex harmonics: sqrt(2) Re / Im parts for m != 0.
    """
    from scipy.special import sph_harm_y

    y = sph_harm_y(l, abs(m), theta, phi)
    if m > 0:
        return math.sqrt(2.0) * (-1.0) ** m * y.real
    if m < 0:
        return math.sqrt(2.0) * (-1.0) ** m * y.imag
    return y.real


def _theta_phi(points):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.linalg.norm(points, axis=1)
    theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    phi = np.arctan2(y, x)
    return theta, phi


def harmonic_field(coeffs, theta, phi):
    """Evaluate sum of real harmonics with the given coefficient map."""
    out = np.zeros_like(theta, dtype=np.float64)
    for (l, m), c in sorted(coeffs.items()):
        if c != 0.0:
            out += c * real_sph_harm(l, m, theta, phi)
    return out


def harmonic_sup_norm(coeffs, n_theta=181, n_phi=360):
    """Sup of |u| on a fixed fine latitude/longitude grid.

    Mesh-independent, so generator and oracle normalize identically.
    """
    theta = np.linspace(0.0, np.pi, n_theta)
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    return float(np.abs(harmonic_field(coeffs, tt, pp)).max())


def perturbed_sphere(spec, normalize=True):
    """Radial graph (1 + eps * u(w)) * w over an icosphere, u normalized to
    sup |u| = 1, then rescaled to area 4 pi.

    Returns (mesh, tracefree_energy). Raises SelfIntersectingRadial when the
    radial factor 1 + eps*u becomes non-positive.
    """
    from .functionals import measure
    from .geometry import vertex_geometry

    base = icosphere(spec.level)
    coeffs = spec.resolved_coeffs()
    sup = harmonic_sup_norm(coeffs)
    if sup == 0.0:
        u = np.zeros(base.n_vertices)
    else:
        theta, phi = _theta_phi(base.vertices)
        u = harmonic_field(coeffs, theta, phi) / sup
    radial = 1.0 + spec.amplitude * u
    if (radial <= 0.0).any():
        raise SelfIntersectingRadial(
            f"radial factor reaches {radial.min():.3g} <= 0 at amplitude "
            f"{spec.amplitude}"
        )
    mesh = base.with_vertices(radial[:, None] * base.vertices)
    if normalize:
        mesh = normalize_area(mesh)
    energy = measure(mesh, vertex_geometry(mesh)).tracefree_energy
    return mesh, energy


# -- sphere fitting --------------------------------------------------------------


@dataclass(frozen=True)
class SphereFit:
    """Least-squares sphere: center, radius, and area-weighted RMS residual."""

    center: np.ndarray
    radius: float
    rms: float


def fit_sphere(mesh, geom, refine_iters=20):
    """Area-weighted least-squares sphere through the mesh vertices."""
    return fit_sphere_points(mesh.vertices, geom.area, refine_iters=refine_iters)


def fit_sphere_points(pts, weights, refine_iters=20):
    """Weighted least-squares sphere through a point set.

    Algebraic seed from the linear system |f|^2 = 2 <x, f> + (R^2 - |x|^2),
    then a few geometric refinement sweeps on sum w (|f - x| - R)^2.
    """
    pts = np.asarray(pts, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    center, radius = _algebraic_fit(pts, w)
    for _ in range(refine_iters):
        d = pts - center
        r = np.linalg.norm(d, axis=1)
        r = np.where(r > 0, r, 1e-300)
        radius = float(np.sum(w * r))
        center_new = np.sum(w[:, None] * pts, axis=0) - radius * np.sum(
            w[:, None] * (d / r[:, None]), axis=0
        )
        if np.linalg.norm(center_new - center) <= 1e-15 * (1.0 + radius):
            center = center_new
            break
        center = center_new
    r = np.linalg.norm(pts - center, axis=1)
    radius = float(np.sum(w * r))
    rms = float(np.sqrt(np.sum(w * (r - radius) ** 2)))
    return SphereFit(center=center, radius=radius, rms=rms)


def _algebraic_fit(pts, w):
    sq = np.einsum("ij,ij->i", pts, pts)
    ones = np.ones(len(pts))
    cols = np.column_stack([2.0 * pts, ones])
    a = cols.T @ (w[:, None] * cols)
    b = cols.T @ (w * sq)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularFit(f"algebraic sphere system is singular (cond={cond:.3e})")
    sol = np.linalg.solve(a, b)
    center = sol[:3]
    rad_sq = sol[3] + center @ center
    if rad_sq <= 0.0:
        raise SingularFit("algebraic fit produced non-positive squared radius")
    return center, math.sqrt(rad_sq)
