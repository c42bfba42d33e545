"""Mesh-quality maintenance between flow steps.

Classic incremental remeshing: split edges above the band, collapse edges
below it (guarded by the link condition and fold-over checks), flip edges
that raise the local minimum angle, then tangential-only smoothing so the
shape, and hence the measured functionals, is disturbed at higher order.

A remesh event that would change the discrete energy by more than 5 %
is reverted; the flow only ever sees hygiene-level modifications.
"""

import numpy as np

from .errors import RemeshFailed
from .geometry import vertex_geometry
from .mesh import TriMesh

ENERGY_JUMP_LIMIT = 0.05
MAX_PASSES = 4


class _EditableMesh:
    """Face-list editor with an undirected-edge -> face-ids map."""

    def __init__(self, mesh):
        self.verts = [v.copy() for v in mesh.vertices]
        self.faces = {i: tuple(f) for i, f in enumerate(mesh.faces.tolist())}
        self.next_face = len(mesh.faces)
        self.edge_faces = {}
        for fid, f in self.faces.items():
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                self.edge_faces.setdefault(_key(a, b), []).append(fid)

    def add_face(self, tri):
        fid = self.next_face
        self.next_face += 1
        self.faces[fid] = tri
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            self.edge_faces.setdefault(_key(a, b), []).append(fid)
        return fid

    def remove_face(self, fid):
        tri = self.faces.pop(fid)
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = _key(a, b)
            lst = self.edge_faces[key]
            lst.remove(fid)
            if not lst:
                del self.edge_faces[key]

    def edge_wings(self, key):
        """(c, d): the vertices opposite an interior edge in its two faces,
        ordered so the faces are (a, b, c) and (b, a, d) for key (a, b)."""
        a, b = key
        fids = self.edge_faces.get(key)
        if fids is None or len(fids) != 2:
            return None
        c = d = None
        for fid in fids:
            tri = self.faces[fid]
            other = next(v for v in tri if v != a and v != b)
            i_a = tri.index(a)
            if tri[(i_a + 1) % 3] == b:
                c = other
            else:
                d = other
        if c is None or d is None:
            return None
        return c, d

    def neighbors(self, v):
        out = set()
        for key, _ in self.edge_faces.items():
            if v in key:
                out.add(key[0] if key[1] == v else key[1])
        return out

    def vertex_rings(self):
        rings = {}
        for (a, b) in self.edge_faces:
            rings.setdefault(a, set()).add(b)
            rings.setdefault(b, set()).add(a)
        return rings

    def to_mesh(self):
        verts = np.asarray(self.verts)
        order = sorted(self.faces)
        faces = np.asarray([self.faces[fid] for fid in order], dtype=np.int64)
        used = np.zeros(len(verts), dtype=bool)
        used[faces.ravel()] = True
        remap = np.cumsum(used) - 1
        return TriMesh(verts[used], remap[faces])


def _key(a, b):
    return (a, b) if a < b else (b, a)


def _tri_min_angle(p0, p1, p2):
    e = [p1 - p0, p2 - p1, p0 - p2]
    angles = []
    for i in range(3):
        u, w = -e[i - 1], e[i]
        cross = np.linalg.norm(np.cross(u, w))
        angles.append(np.arctan2(cross, np.dot(u, w)))
    return min(angles)


def min_face_angle(mesh):
    """Smallest interior angle over all faces (radians)."""
    p = mesh.vertices[mesh.faces]
    u = p[:, [1, 2, 0]] - p
    w = p[:, [2, 0, 1]] - p
    dots = np.einsum("fki,fki->fk", u, w)
    crosses = np.linalg.norm(np.cross(u, w), axis=2)
    return float(np.arctan2(crosses, dots).min())


def _tri_normal(p0, p1, p2):
    return np.cross(p1 - p0, p2 - p0)


def _split_pass(em, hi):
    splits = 0
    long_edges = sorted(
        (
            key
            for key in em.edge_faces
            if np.linalg.norm(np.asarray(em.verts[key[0]]) - em.verts[key[1]]) > hi
        ),
        key=lambda k: -np.linalg.norm(np.asarray(em.verts[k[0]]) - em.verts[k[1]]),
    )
    for key in long_edges:
        wings = em.edge_wings(key)
        if wings is None:
            continue
        if np.linalg.norm(np.asarray(em.verts[key[0]]) - em.verts[key[1]]) <= hi:
            continue
        a, b = key
        c, d = wings
        mid = 0.5 * (np.asarray(em.verts[a]) + em.verts[b])
        m = len(em.verts)
        em.verts.append(mid)
        for fid in list(em.edge_faces[key]):
            em.remove_face(fid)
        em.add_face((a, m, c))
        em.add_face((m, b, c))
        em.add_face((b, m, d))
        em.add_face((m, a, d))
        splits += 1
    return splits


def _collapse_pass(em, lo):
    collapses = 0
    rings = em.vertex_rings()
    dead = set()
    short_edges = sorted(
        (
            key
            for key in em.edge_faces
            if np.linalg.norm(np.asarray(em.verts[key[0]]) - em.verts[key[1]]) < lo
        ),
        key=lambda k: np.linalg.norm(np.asarray(em.verts[k[0]]) - em.verts[k[1]]),
    )
    for key in short_edges:
        a, b = key
        if a in dead or b in dead:
            continue
        wings = em.edge_wings(key)
        if wings is None:
            continue
        c, d = wings
        ring_a, ring_b = rings.get(a, set()), rings.get(b, set())
        if ring_a & ring_b != {c, d}:
            continue  # link condition
        if len(rings.get(c, ())) <= 3 or len(rings.get(d, ())) <= 3:
            continue
        mid = 0.5 * (np.asarray(em.verts[a]) + em.verts[b])
        if not _collapse_is_safe(em, a, b, mid):
            continue
        # retire b, move a to the midpoint, rewrite incident faces
        em.verts[a] = mid
        incident_b = [fid for fid, tri in em.faces.items() if b in tri]
        for fid in incident_b:
            tri = em.faces[fid]
            em.remove_face(fid)
            if a in tri:
                continue  # the two faces of the edge vanish
            em.add_face(tuple(a if v == b else v for v in tri))
        dead.add(b)
        rings = em.vertex_rings()
        collapses += 1
    return collapses


def _collapse_is_safe(em, a, b, mid, min_area_ratio=1e-6):
    """Reject collapses that fold or squash any surviving face."""
    for fid, tri in em.faces.items():
        if a not in tri and b not in tri:
            continue
        if a in tri and b in tri:
            continue
        old = [np.asarray(em.verts[v]) for v in tri]
        new = [mid if v in (a, b) else np.asarray(em.verts[v]) for v in tri]
        n_old = _tri_normal(*old)
        n_new = _tri_normal(*new)
        if np.dot(n_old, n_new) <= 0:
            return False
        if np.linalg.norm(n_new) < min_area_ratio * np.linalg.norm(n_old):
            return False
    return True


def _flip_pass(em):
    flips = 0
    for key in sorted(em.edge_faces):
        wings = em.edge_wings(key)
        if wings is None:
            continue
        a, b = key
        c, d = wings
        if _key(c, d) in em.edge_faces:
            continue
        pa, pb = np.asarray(em.verts[a]), np.asarray(em.verts[b])
        pc, pd = np.asarray(em.verts[c]), np.asarray(em.verts[d])
        before = min(_tri_min_angle(pa, pb, pc), _tri_min_angle(pb, pa, pd))
        after = min(_tri_min_angle(pc, pa, pd), _tri_min_angle(pd, pb, pc))
        if after <= before + 1e-12:
            continue
        # keep the flipped pair on the same side of the surface
        n_ref = _tri_normal(pa, pb, pc) + _tri_normal(pb, pa, pd)
        if (
            np.dot(_tri_normal(pc, pa, pd), n_ref) <= 0
            or np.dot(_tri_normal(pd, pb, pc), n_ref) <= 0
        ):
            continue
        for fid in list(em.edge_faces[key]):
            em.remove_face(fid)
        em.add_face((c, a, d))
        em.add_face((d, b, c))
        flips += 1
    return flips


def tangential_smooth(mesh, weight):
    """Move vertices toward the area-weighted centroid of incident faces,
    projected into the tangent plane (normal displacement is removed)."""
    if weight == 0.0:
        return mesh
    geom = vertex_geometry(mesh)
    areas = mesh.face_areas()
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    n = mesh.n_vertices
    wsum = np.zeros(n)
    csum = np.zeros((n, 3))
    for k in range(3):
        np.add.at(wsum, mesh.faces[:, k], areas)
        np.add.at(csum, mesh.faces[:, k], areas[:, None] * centroids)
    target = csum / wsum[:, None]
    disp = weight * (target - mesh.vertices)
    disp -= np.einsum("ij,ij->i", disp, geom.normal)[:, None] * geom.normal
    return mesh.with_vertices(mesh.vertices + disp)


def remesh(mesh, config):
    """Restore edge lengths to the configured band and improve angles.

    Returns (mesh, report). The report records the operation counts, the
    min-angle change, the relative energy jump, and whether anything
    changed; an event that would move the discrete energy by more than 5 %
    is reverted wholesale.
    """
    from .flow import discrete_energy

    lo_f, hi_f = config.edge_len_band
    target = mesh.mean_edge_length()
    lo, hi = lo_f * target, hi_f * target

    em = _EditableMesh(mesh)
    splits = collapses = flips = 0
    for _ in range(MAX_PASSES):
        n_split = _split_pass(em, hi)
        n_collapse = _collapse_pass(em, lo)
        n_flip = _flip_pass(em)
        splits += n_split
        collapses += n_collapse
        flips += n_flip
        if n_split + n_collapse + n_flip == 0:
            break
    report = {
        "changed": False,
        "splits": splits,
        "collapses": collapses,
        "flips": flips,
        "energy_jump": 0.0,
        "reverted": False,
    }
    if splits + collapses + flips == 0:
        return mesh, report

    try:
        candidate = em.to_mesh()
        candidate = tangential_smooth(candidate, config.tangential_smooth_weight)
    except Exception as exc:
        raise RemeshFailed(f"remeshing produced an invalid mesh: {exc}") from exc

    e_old = discrete_energy(mesh)
    e_new = discrete_energy(candidate)
    jump = abs(e_new - e_old) / e_old
    report["energy_jump"] = jump
    if jump > ENERGY_JUMP_LIMIT:
        report["reverted"] = True
        return mesh, report
    report["changed"] = True
    return candidate, report
