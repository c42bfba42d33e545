"""Topology-validated closed genus-0 triangle meshes with OFF/OBJ file I/O.

A ``TriMesh`` is immutable after construction and guarantees:

* every undirected edge is shared by exactly two faces (closed manifold),
* consistent counterclockwise-from-outside orientation,
* sphere topology (connected, Euler characteristic 2),
* no degenerate faces,
* positive signed volume (outward orientation).

Everything downstream assumes these invariants, so they are enforced here
once and never rechecked.
"""

import os

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateFace,
    InconsistentOrientation,
    IoError,
    NonManifold,
    OpenBoundary,
    ParseError,
    WrongGenus,
)

# Face area must exceed this multiple of (mean edge length)^2; relative so
# meshes validate identically at any scale.
DEGENERACY_FACTOR = 1e-12


class TriMesh:
    """Closed oriented genus-0 triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array_like of float
        Vertex positions.
    faces : (m, 3) array_like of int
        Vertex index triples, counterclockwise as seen from outside.

    Use :func:`build` (or the read functions) rather than instantiating
    directly; the constructor runs the full validation suite.
    """

    __slots__ = ("vertices", "faces", "edges", "_mean_edge")

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise ParseError("vertices must be a non-empty (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] == 0:
            raise ParseError("faces must be a non-empty (m, 3) array")
        if not np.isfinite(v).all():
            raise ParseError("non-finite vertex coordinate")
        if f.min() < 0 or f.max() >= len(v):
            bad = int(np.argmax((f < 0).any(axis=1) | (f >= len(v)).any(axis=1)))
            raise ParseError(f"face {bad} references out-of-range vertex index")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        if repeated.any():
            raise DegenerateFace(f"face {int(np.argmax(repeated))} repeats a vertex")

        self.vertices = v
        self.faces = f
        self.edges = self._validate_topology()
        self._mean_edge = None
        self._validate_geometry()
        v.setflags(write=False)
        f.setflags(write=False)
        self.edges.setflags(write=False)

    # -- validation --------------------------------------------------------

    def _validate_topology(self):
        f = self.faces
        # directed edges, one per face corner
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        edges, first_idx, counts = np.unique(
            und, axis=0, return_index=True, return_counts=True
        )
        if (counts > 2).any():
            e = edges[np.argmax(counts > 2)]
            raise NonManifold(f"edge ({e[0]}, {e[1]}) is shared by more than 2 faces")
        if (counts < 2).any():
            e = edges[np.argmax(counts < 2)]
            raise OpenBoundary(f"edge ({e[0]}, {e[1]}) belongs to only one face")
        # counts == 2 everywhere; orientation is consistent iff no directed
        # edge repeats, i.e. each undirected edge is traversed once per direction
        dir_unique, dir_counts = np.unique(directed, axis=0, return_counts=True)
        if (dir_counts > 1).any():
            e = dir_unique[np.argmax(dir_counts > 1)]
            raise InconsistentOrientation(
                f"directed edge ({e[0]}, {e[1]}) appears in two faces; "
                "the faces sharing it disagree on orientation"
            )
        n_v, n_e, n_f = len(self.vertices), len(edges), len(f)
        chi = n_v - n_e + n_f
        if chi != 2:
            raise WrongGenus(
                f"Euler characteristic V - E + F = {n_v} - {n_e} + {n_f} = {chi}, "
                "expected 2 (sphere)"
            )
        adj = coo_matrix(
            (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_v, n_v)
        )
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise WrongGenus(f"mesh has {n_comp} connected components, expected 1")
        return edges

    def _validate_geometry(self):
        areas = self.face_areas()
        threshold = DEGENERACY_FACTOR * self.mean_edge_length() ** 2
        if (areas <= threshold).any():
            raise DegenerateFace(
                f"face {int(np.argmax(areas <= threshold))} has area below "
                f"{threshold:.3e}"
            )
        if self.signed_volume() <= 0.0:
            raise InconsistentOrientation(
                "signed volume is non-positive; faces are oriented inward"
            )

    # -- basic measures ------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_edges(self):
        return len(self.edges)

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    def corner_vectors(self):
        """Edge vectors (p1 - p0, p2 - p0) per face, shape (m, 3) each."""
        p = self.vertices[self.faces]
        return p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]

    def face_normals_raw(self):
        """Unnormalized outward face normals; |n| = 2 x face area."""
        u, w = self.corner_vectors()
        return np.cross(u, w)

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals_raw(), axis=1)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    def mean_edge_length(self):
        if self._mean_edge is None:
            self._mean_edge = float(self.edge_lengths().mean())
        return self._mean_edge

    def signed_volume(self):
        """Enclosed volume by the tetrahedral fan about the origin.

        Exact for piecewise-linear surfaces and independent of the fan apex
        on closed meshes; positive for outward orientation.
        """
        p = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    def with_vertices(self, vertices):
        """Same connectivity with new positions (revalidates everything)."""
        return TriMesh(vertices, self.faces)

    def __repr__(self):
        return f"TriMesh(V={self.n_vertices}, F={self.n_faces})"


def build(vertices, faces):
    """Construct a validated :class:`TriMesh` from raw arrays."""
    return TriMesh(vertices, faces)


# -- file I/O ------------------------------------------------------------------

def _infer_format(path, format):
    if format is not None:
        fmt = format.upper()
    else:
        fmt = os.path.splitext(str(path))[1].lstrip(".").upper()
    if fmt not in ("OFF", "OBJ"):
        raise ParseError(f"unsupported mesh format {fmt!r} (OFF and OBJ only)")
    return fmt


def read_mesh(path, format=None):
    """Read an OFF or OBJ triangle mesh and validate it.

    ``format`` may be "OFF" or "OBJ"; inferred from the extension if omitted.
    """
    fmt = _infer_format(path, format)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc}") from exc
    if fmt == "OFF":
        vertices, faces = _parse_off(lines)
    else:
        vertices, faces = _parse_obj(lines)
    return build(vertices, faces)


def _content_lines(lines):
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            yield lineno, stripped


def _parse_off(lines):
    it = _content_lines(lines)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError("empty OFF file") from None
    counts_tokens = None
    if header != "OFF":
        # tolerate "OFF V F E" on one line
        if header.startswith("OFF"):
            counts_tokens = (lineno, header[3:].split())
        else:
            raise ParseError("missing OFF header", line=lineno)
    if counts_tokens is None:
        try:
            counts_tokens = next(it)
        except StopIteration:
            raise ParseError("missing OFF count line") from None
        counts_tokens = (counts_tokens[0], counts_tokens[1].split())
    lineno, tokens = counts_tokens
    if len(tokens) != 3:
        raise ParseError("count line must be 'V F E'", line=lineno)
    try:
        n_v, n_f = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ParseError("non-integer vertex/face count", line=lineno) from None

    vertices = np.empty((n_v, 3))
    for i in range(n_v):
        try:
            lineno, line = next(it)
        except StopIteration:
            raise ParseError(f"expected {n_v} vertex lines, got {i}") from None
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("vertex line must have 3 coordinates", line=lineno)
        try:
            vertices[i] = [float(x) for x in parts]
        except ValueError:
            raise ParseError("bad vertex coordinate", line=lineno) from None

    faces = np.empty((n_f, 3), dtype=np.int64)
    for i in range(n_f):
        try:
            lineno, line = next(it)
        except StopIteration:
            raise ParseError(f"expected {n_f} face lines, got {i}") from None
        parts = line.split()
        if not parts or parts[0] != "3" or len(parts) != 4:
            raise ParseError("face line must be '3 i j k' (triangles only)", line=lineno)
        try:
            faces[i] = [int(x) for x in parts[1:]]
        except ValueError:
            raise ParseError("bad face index", line=lineno) from None
    return vertices, faces


def _parse_obj(lines):
    vertices = []
    faces = []
    for lineno, line in _content_lines(lines):
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) != 4:
                raise ParseError("vertex line must be 'v x y z'", line=lineno)
            try:
                vertices.append([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError("bad vertex coordinate", line=lineno) from None
        elif tag == "f":
            if len(parts) != 4:
                raise ParseError("face must have exactly 3 vertices (triangles only)", line=lineno)
            idx = []
            for token in parts[1:]:
                base = token.split("/", 1)[0]
                try:
                    k = int(base)
                except ValueError:
                    raise ParseError("bad face index", line=lineno) from None
                if k == 0:
                    raise ParseError("OBJ indices are 1-based", line=lineno)
                idx.append(k - 1 if k > 0 else len(vertices) + k)
            faces.append(idx)
        # other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    if not vertices or not faces:
        raise ParseError("OBJ file contains no triangle mesh")
    return np.asarray(vertices), np.asarray(faces, dtype=np.int64)


def write_mesh(mesh, path, format=None):
    """Write ``mesh`` as OFF or OBJ.

    Positions are serialized with 17 significant digits, so a read/write
    round trip reproduces coordinates exactly at double precision.
    """
    fmt = _infer_format(path, format)
    out = []
    if fmt == "OFF":
        out.append("OFF")
        out.append(f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}")
        for x, y, z in mesh.vertices:
            out.append(f"{x:.17g} {y:.17g} {z:.17g}")
        for i, j, k in mesh.faces:
            out.append(f"3 {i} {j} {k}")
    else:
        for x, y, z in mesh.vertices:
            out.append(f"v {x:.17g} {y:.17g} {z:.17g}")
        for i, j, k in mesh.faces:
            out.append(f"f {i + 1} {j + 1} {k + 1}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path!r}: {exc}") from exc
