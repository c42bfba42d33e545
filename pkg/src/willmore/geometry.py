"""Per-vertex discrete curvature quantities on a triangle mesh.

Conventions, fixed once here and relied on everywhere else:

* vertex normals are unit *interior* normals,
* scalar mean curvature is positive on round spheres (H = 2/R),
* Gauss curvature is the angle defect divided by the mixed-Voronoi vertex
  area, so total curvature telescopes exactly to 4 pi on sphere meshes,
* the squared tracefree second-fundamental-form density is recovered
  pointwise from H and K as  |A0|^2 = H^2/2 - 2K,  clamped at zero; the
  clamped mass is reported so energy identities can be reconciled.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NumericallyDegenerate

COT_LIMIT = 1e12


@dataclass(frozen=True)
class VertexGeometry:
    """Discrete first/second fundamental-form data at vertices.

    Attributes
    ----------
    area : (n,) array
        Mixed-Voronoi vertex area weights; partition the total mesh area.
    mean_curv_vec : (n, 3) array
        Discrete mean curvature vectors (cotangent formula / vertex area).
    normal : (n, 3) array
        Unit interior vertex normals (angle-weighted).
    scalar_h : (n,) array
        Magnitude of the mean curvature vector, signed by its projection
        on the interior normal.
    gauss_k : (n,) array
        Angle defect / vertex area.
    tracefree_sq : (n,) array
        max(H^2/2 - 2K, 0) per vertex.
    clamped_mass : float
        Total area-weighted amount clamped away to keep tracefree_sq >= 0.
    """

    area: np.ndarray
    mean_curv_vec: np.ndarray
    normal: np.ndarray
    scalar_h: np.ndarray
    gauss_k: np.ndarray
    tracefree_sq: np.ndarray
    clamped_mass: float


def _corner_data(mesh):
    """Cotangents, angles and areas per face corner.

    Returns (cot, angle, area, normal_raw) where cot/angle have shape
    (m, 3) indexed by corner, area is (m,) and normal_raw the unnormalized
    outward face normal.
    """
    p = mesh.vertices[mesh.faces]
    # corner k: vectors to the two other vertices
    u = p[:, [1, 2, 0]] - p  # to next
    w = p[:, [2, 0, 1]] - p  # to prev
    dots = np.einsum("fki,fki->fk", u, w)
    crosses = np.cross(u[:, 0], w[:, 0])  # same (up to sign) for all corners
    double_area = np.linalg.norm(crosses, axis=1)
    cot = dots / double_area[:, None]
    angle = np.arctan2(double_area[:, None], dots)
    return cot, angle, 0.5 * double_area, crosses


def mixed_voronoi_areas(mesh, corner=None):
    """Per-corner mixed Voronoi areas, shape (m, 3).

    Circumcentric (Voronoi) cells on non-obtuse triangles; the half/quarter
    fallback on obtuse ones keeps every weight positive and the per-face
    pieces summing exactly to the face area.
    """
    cot, _, area, _ = _corner_data(mesh) if corner is None else corner
    p = mesh.vertices[mesh.faces]
    # squared edge lengths opposite each corner
    e_sq = np.stack(
        [
            np.einsum("fi,fi->f", p[:, 2] - p[:, 1], p[:, 2] - p[:, 1]),
            np.einsum("fi,fi->f", p[:, 0] - p[:, 2], p[:, 0] - p[:, 2]),
            np.einsum("fi,fi->f", p[:, 1] - p[:, 0], p[:, 1] - p[:, 0]),
        ],
        axis=1,
    )
    # Voronoi area at corner k uses the two edges incident to k, each
    # weighted by the cotangent of the angle opposite that edge; e_sq[j] is
    # the edge opposite corner j, so the pairing is index-matched.
    nxt = [1, 2, 0]
    prv = [2, 0, 1]
    vor = 0.125 * (e_sq[:, prv] * cot[:, prv] + e_sq[:, nxt] * cot[:, nxt])
    obtuse_corner = np.argmin(cot, axis=1)
    is_obtuse = cot[np.arange(len(cot)), obtuse_corner] < 0.0
    mixed = vor
    if is_obtuse.any():
        idx = np.nonzero(is_obtuse)[0]
        quarter = 0.25 * area[idx]
        patch = np.repeat(quarter[:, None], 3, axis=1)
        patch[np.arange(len(idx)), obtuse_corner[idx]] = 2.0 * quarter
        mixed = vor.copy()
        mixed[idx] = patch
    return mixed


def vertex_geometry(mesh):
    """Assemble all per-vertex discrete curvature data for ``mesh``."""
    n = mesh.n_vertices
    faces = mesh.faces
    corner = _corner_data(mesh)
    cot, angle, area, normal_raw = corner
    if np.abs(cot).max() > COT_LIMIT:
        f, k = np.unravel_index(np.argmax(np.abs(cot)), cot.shape)
        raise NumericallyDegenerate(
            f"cotangent weight {cot[f, k]:.3e} at face {f} exceeds {COT_LIMIT:.0e}"
        )

    vertex_area = np.zeros(n)
    np.add.at(vertex_area, faces, mixed_voronoi_areas(mesh, corner))

    # integrated mean curvature vector: K_i = 1/2 sum_j (cot a + cot b)(f_j - f_i)
    p = mesh.vertices[faces]
    kvec = np.zeros((n, 3))
    for k, (x, y) in enumerate([(1, 2), (2, 0), (0, 1)]):  # corner k opposite edge (x, y)
        contrib = 0.5 * cot[:, k, None] * (p[:, y] - p[:, x])
        np.add.at(kvec, faces[:, x], contrib)
        np.add.at(kvec, faces[:, y], -contrib)
    mean_curv_vec = kvec / vertex_area[:, None]

    defect = np.full(n, 2.0 * np.pi)
    np.add.at(defect, faces, -angle)
    gauss_k = defect / vertex_area

    # interior normal: angle-weighted average of inward face normals
    normal = np.zeros((n, 3))
    unit_face_normal = normal_raw / np.linalg.norm(normal_raw, axis=1)[:, None]
    for k in range(3):
        np.add.at(normal, faces[:, k], -angle[:, k, None] * unit_face_normal)
    norms = np.linalg.norm(normal, axis=1)
    normal /= np.where(norms > 0, norms, 1.0)[:, None]

    h_mag = np.linalg.norm(mean_curv_vec, axis=1)
    sign = np.where(np.einsum("ij,ij->i", mean_curv_vec, normal) >= 0.0, 1.0, -1.0)
    scalar_h = sign * h_mag

    raw = 0.5 * scalar_h**2 - 2.0 * gauss_k
    tracefree_sq = np.maximum(raw, 0.0)
    clamped_mass = float(np.sum(vertex_area * np.maximum(-raw, 0.0)))

    return VertexGeometry(
        area=vertex_area,
        mean_curv_vec=mean_curv_vec,
        normal=normal,
        scalar_h=scalar_h,
        gauss_k=gauss_k,
        tracefree_sq=tracefree_sq,
        clamped_mass=clamped_mass,
    )


def face_gradients(mesh, scalar_field):
    """Constant per-face gradient of the piecewise-linear interpolant."""
    field = np.asarray(scalar_field, dtype=np.float64)
    if field.shape != (mesh.n_vertices,):
        raise LengthMismatch(
            f"field has shape {field.shape}, expected ({mesh.n_vertices},)"
        )
    p = mesh.vertices[mesh.faces]
    normal_raw = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    double_area = np.linalg.norm(normal_raw, axis=1)
    n_hat = normal_raw / double_area[:, None]
    vals = field[mesh.faces]
    grad = np.zeros((mesh.n_faces, 3))
    for k, (x, y) in enumerate([(1, 2), (2, 0), (0, 1)]):
        # gradient of the hat function of corner k: n x (opposite edge) / 2A
        grad += vals[:, k, None] * np.cross(n_hat, p[:, y] - p[:, x])
    return grad / double_area[:, None]


def pl_gradient_sq_integral(mesh, scalar_field):
    """Dirichlet energy of a vertex field: sum of area x |grad|^2 over faces."""
    grad = face_gradients(mesh, scalar_field)
    areas = mesh.face_areas()
    return float(np.sum(areas * np.einsum("ij,ij->i", grad, grad)))


def sup_tracefree(geom):
    """Pointwise supremum of the tracefree density, max_i |A0|^2_i."""
    return float(geom.tracefree_sq.max())
