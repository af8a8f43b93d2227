"""Discretized closed manifolds and their finite-element Laplacians.

Curves (d=1) are closed polylines; surfaces (d=2) are closed, edge-manifold
triangle meshes.  Both carry a symmetric positive semidefinite stiffness
matrix and a diagonal (lumped) mass matrix, so that the Laplace-Beltrami
eigenproblem becomes ``stiffness @ f = lam * mass @ f``.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

__all__ = [
    "DiscreteManifold",
    "MeshError",
    "NonManifoldEdge",
    "OpenBoundaryEdge",
    "DegenerateCell",
    "build_manifold",
    "assemble_fem",
    "load_mesh",
    "gen_icosphere",
    "gen_dumbbell",
    "gen_circle",
    "dumbbell_perimeter",
    "MAX_ICOSPHERE_LEVEL",
]

MAX_ICOSPHERE_LEVEL = 7


class MeshError(ValueError):
    """Raised when a mesh cannot represent a closed manifold."""


class NonManifoldEdge(MeshError):
    """An edge is shared by more than two triangles."""

    def __init__(self, edge, count):
        self.edge = tuple(int(v) for v in edge)
        self.count = int(count)
        super().__init__(f"edge {self.edge} is shared by {self.count} triangles")


class OpenBoundaryEdge(MeshError):
    """An edge belongs to a single triangle, so the surface has a boundary."""

    def __init__(self, edge):
        self.edge = tuple(int(v) for v in edge)
        super().__init__(f"edge {self.edge} lies on an open boundary")


class DegenerateCell(MeshError):
    """A cell has zero length or zero area."""

    def __init__(self, index, measure):
        self.index = int(index)
        self.measure = float(measure)
        super().__init__(f"cell {self.index} is degenerate (measure {self.measure:g})")


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    """A closed curve or surface with its assembled FEM matrices.

    Attributes
    ----------
    dim : int
        Intrinsic dimension, 1 or 2.
    vertices : ndarray, shape (n, D)
        Ambient coordinates, D in {2, 3}.
    cells : ndarray
        For ``dim == 1`` the closed vertex cycle, shape (n,); for
        ``dim == 2`` triangle index triples, shape (m, 3).
    stiffness : scipy.sparse.csr_matrix
        Symmetric PSD stiffness matrix with constants in its kernel.
    mass_diag : ndarray, shape (n,)
        Diagonal of the lumped mass matrix.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    stiffness: sparse.csr_matrix
    mass_diag: np.ndarray

    @property
    def ambient_dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def mass(self):
        return sparse.diags(self.mass_diag, format="csr")

    @property
    def total_mass(self):
        return float(math.fsum(self.mass_diag))

    def reindexed(self, perm):
        """Return the same manifold with vertex ``perm[i]`` moved to slot ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return build_manifold(self.vertices[perm], inverse[self.cells], self.dim)


def _edges_1d(cycle):
    return np.column_stack([cycle, np.roll(cycle, -1)])


def _validate(vertices, cells, dim):
    n = vertices.shape[0]
    if dim not in (1, 2):
        raise MeshError(f"unsupported intrinsic dimension {dim}")
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise MeshError("vertices must be an (n, 2) or (n, 3) array")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("vertex coordinates must be finite")
    if cells.size == 0:
        raise MeshError("mesh has no cells")
    if cells.min() < 0 or cells.max() >= n:
        raise MeshError("cell index out of range")
    if dim == 1:
        if cells.ndim != 1:
            raise MeshError("a curve is given as a single vertex cycle")
        if cells.size < 3:
            raise MeshError("a closed curve needs at least 3 vertices")
        if np.unique(cells).size != cells.size:
            raise MeshError("vertex cycle revisits a vertex")
        if cells.size != n:
            raise MeshError("every vertex must lie on the cycle")
        return
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("triangles must be an (m, 3) array")
    if np.bincount(cells.ravel(), minlength=n).min() == 0:
        unused = int(np.flatnonzero(np.bincount(cells.ravel(), minlength=n) == 0)[0])
        raise MeshError(f"vertex {unused} is not referenced by any triangle")
    repeated = (cells[:, 0] == cells[:, 1]) | (cells[:, 1] == cells[:, 2]) | (cells[:, 0] == cells[:, 2])
    if repeated.any():
        raise DegenerateCell(np.flatnonzero(repeated)[0], 0.0)
    edges = np.sort(cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if (counts > 2).any():
        k = int(np.flatnonzero(counts > 2)[0])
        raise NonManifoldEdge(uniq[k], counts[k])
    if (counts < 2).any():
        raise OpenBoundaryEdge(uniq[np.flatnonzero(counts < 2)[0]])


def assemble_fem(vertices, cells, dim):
    """Assemble the linear-FEM stiffness matrix and lumped mass diagonal.

    Parameters
    ----------
    vertices : ndarray, shape (n, D)
    cells : ndarray
        Vertex cycle (``dim == 1``) or triangles (``dim == 2``).
    dim : int

    Returns
    -------
    stiffness : scipy.sparse.csr_matrix
    mass_diag : ndarray
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    n = vertices.shape[0]
    if dim == 1:
        edges = _edges_1d(cells)
        h = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
        bad = np.flatnonzero(~(h > 0.0))
        if bad.size:
            raise DegenerateCell(bad[0], h[bad[0]])
        i, j = edges[:, 0], edges[:, 1]
        off = -1.0 / h
        mass = np.zeros(n)
        np.add.at(mass, i, 0.5 * h)
        np.add.at(mass, j, 0.5 * h)
    elif dim == 2:
        p0, p1, p2 = (vertices[cells[:, k]] for k in range(3))
        e0, e1, e2 = p2 - p1, p0 - p2, p1 - p0  # edge opposite vertex k
        if vertices.shape[1] == 2:
            cross = e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0])
            double_area = np.abs(cross)
        else:
            double_area = np.linalg.norm(np.cross(e2, -e1), axis=1)
        bad = np.flatnonzero(~(double_area > 0.0))
        if bad.size:
            raise DegenerateCell(bad[0], 0.5 * double_area[bad[0]])
        # cot of the angle at vertex k, between the two edges meeting there
        cot0 = -np.einsum("ij,ij->i", e2, e1) / double_area
        cot1 = -np.einsum("ij,ij->i", e0, e2) / double_area
        cot2 = -np.einsum("ij,ij->i", e1, e0) / double_area
        i = np.concatenate([cells[:, 1], cells[:, 2], cells[:, 0]])
        j = np.concatenate([cells[:, 2], cells[:, 0], cells[:, 1]])
        off = -0.5 * np.concatenate([cot0, cot1, cot2])
        mass = np.zeros(n)
        third = double_area / 6.0
        for k in range(3):
            np.add.at(mass, cells[:, k], third)
    else:
        raise MeshError(f"unsupported intrinsic dimension {dim}")

    upper = sparse.coo_matrix((off, (i, j)), shape=(n, n)).tocsr()
    offdiag = (upper + upper.T).tocsr()
    offdiag.sum_duplicates()
    diag = -np.asarray(offdiag.sum(axis=1)).ravel()
    stiffness = (offdiag + sparse.diags(diag)).tocsr()
    stiffness.sort_indices()
    return stiffness, mass


def build_manifold(vertices, cells, dim):
    """Validate connectivity and assemble a :class:`DiscreteManifold`."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    _validate(vertices, cells, dim)
    stiffness, mass = assemble_fem(vertices, cells, dim)
    vertices.setflags(write=False)
    cells.setflags(write=False)
    mass.setflags(write=False)
    return DiscreteManifold(dim=dim, vertices=vertices, cells=cells,
                            stiffness=stiffness, mass_diag=mass)


# ---------------------------------------------------------------------------
# readers

def _data_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _read_off(text):
    lines = _data_lines(text)
    try:
        first = next(lines)
        if not first.upper().startswith("OFF"):
            raise MeshError("missing OFF header")
        rest = first[3:].split()
        counts = rest if rest else next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = [[float(t) for t in next(lines).split()[:3]] for _ in range(nv)]
        faces = []
        for _ in range(nf):
            tok = next(lines).split()
            k = int(tok[0])
            if k != 3:
                raise MeshError(f"only triangles are supported, found a {k}-gon")
            faces.append([int(t) for t in tok[1:4]])
    except StopIteration:
        raise MeshError("unexpected end of OFF file") from None
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed OFF file: {exc}") from None
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)


def _read_ply_ascii(text):
    lines = iter(text.splitlines())
    if next(lines, "").strip() != "ply":
        raise MeshError("missing ply magic line")
    elements = []
    for raw in lines:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise MeshError(f"unsupported PLY format {tok[1]!r}; only ascii is read")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshError("PLY property before any element")
            is_list = tok[1] == "list"
            elements[-1][2].append((tok[-1], is_list))
        elif tok[0] == "end_header":
            break
    else:
        raise MeshError("PLY header is not terminated")

    body = (ln for ln in lines if ln.strip())
    verts, faces = None, None
    try:
        for name, count, props in elements:
            rows = [next(body).split() for _ in range(count)]
            if name == "vertex":
                names = [p[0] for p in props]
                cols = [names.index(c) for c in ("x", "y", "z") if c in names]
                if len(cols) < 2:
                    raise MeshError("PLY vertices need x and y properties")
                verts = np.array([[float(r[c]) for c in cols] for r in rows], dtype=float)
            elif name == "face":
                faces = []
                for r in rows:
                    pos = 0
                    for pname, is_list in props:
                        if is_list:
                            k = int(r[pos])
                            items = r[pos + 1:pos + 1 + k]
                            if pname in ("vertex_indices", "vertex_index"):
                                if k != 3:
                                    raise MeshError(f"only triangles are supported, found a {k}-gon")
                                faces.append([int(t) for t in items])
                            pos += 1 + k
                        else:
                            pos += 1
                faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    except StopIteration:
        raise MeshError("unexpected end of PLY body") from None
    except MeshError:
        raise
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed PLY body: {exc}") from None
    if verts is None or faces is None:
        raise MeshError("PLY file needs vertex and face elements")
    return verts, faces


def _read_polyline_csv(text):
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        try:
            rows.append([float(t) for t in raw.split(",")])
        except ValueError:
            raise MeshError(f"line {lineno}: expected comma-separated floats") from None
    if not rows:
        raise MeshError("empty polyline file")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or widths.pop() not in (2, 3):
        raise MeshError("polyline rows must all have 2 or 3 coordinates")
    verts = np.array(rows, dtype=float)
    return verts, np.arange(len(rows), dtype=np.int64)


_READERS = {
    "off": (_read_off, 2),
    "ply_ascii": (_read_ply_ascii, 2),
    "polyline_csv": (_read_polyline_csv, 1),
}


def load_mesh(path, format=None):
    """Read a closed manifold from disk and assemble its FEM matrices.

    Parameters
    ----------
    path : str or Path
    format : {"off", "ply_ascii", "polyline_csv"}, optional
        Inferred from the extension (.off, .ply, .csv) when omitted.

    Raises
    ------
    MeshError
        On parse failure, open or non-manifold meshes and degenerate cells.
    """
    path = Path(path)
    if format is None:
        format = {".off": "off", ".ply": "ply_ascii", ".csv": "polyline_csv"}.get(path.suffix.lower())
        if format is None:
            raise MeshError(f"cannot infer mesh format from {path.name!r}")
    if format not in _READERS:
        raise MeshError(f"unknown mesh format {format!r}")
    reader, dim = _READERS[format]
    text = path.read_text(encoding="utf-8")
    vertices, cells = reader(text)
    manifold = build_manifold(vertices, cells, dim)
    logger.info("loaded %s: %d vertices, total mass %.6g", path.name,
                manifold.n_vertices, manifold.total_mass)
    return manifold


# ---------------------------------------------------------------------------
# generators

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=float)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def _subdivide(vertices, faces):
    edges = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    mid = vertices[uniq[:, 0]] + vertices[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    ids = (inverse.ravel() + vertices.shape[0]).reshape(-1, 3)
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    ab, bc, ca = ids[:, 0], ids[:, 1], ids[:, 2]
    new_faces = np.concatenate([
        np.column_stack([a, ab, ca]),
        np.column_stack([b, bc, ab]),
        np.column_stack([c, ca, bc]),
        np.column_stack([ab, bc, ca]),
    ])
    return np.vstack([vertices, mid]), new_faces


def gen_icosphere(level, radius=1.0):
    """Subdivided icosahedron with ``10 * 4**level + 2`` vertices on a sphere."""
    level = int(level)
    if not 0 <= level <= MAX_ICOSPHERE_LEVEL:
        raise ValueError(f"icosphere level must be in [0, {MAX_ICOSPHERE_LEVEL}], got {level}")
    if not radius > 0:
        raise ValueError("radius must be positive")
    vertices = _ICO_VERTICES / np.linalg.norm(_ICO_VERTICES, axis=1, keepdims=True)
    faces = _ICO_FACES
    for _ in range(level):
        vertices, faces = _subdivide(vertices, faces)
    vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True) * radius
    return build_manifold(vertices, faces, 2)


def gen_circle(n_vertices, radius=1.0):
    """Regular closed polyline isometric to the circle of the given radius.

    The polygon is scaled so that its perimeter is exactly
    ``2 * pi * radius``; a closed curve is determined intrinsically by its
    length, so this keeps the discrete Laplacian free of a length bias.
    """
    n_vertices = int(n_vertices)
    if n_vertices < 3:
        raise ValueError("a circle needs at least 3 vertices")
    theta = 2.0 * np.pi * np.arange(n_vertices) / n_vertices
    scale = radius * math.pi / (n_vertices * math.sin(math.pi / n_vertices))
    vertices = scale * np.column_stack([np.cos(theta), np.sin(theta)])
    return build_manifold(vertices, np.arange(n_vertices), 1)


def _dumbbell_pieces(lobe_radius, neck_halfwidth, center_offset):
    R, w, c = lobe_radius, neck_halfwidth, center_offset
    if not (0 < w < R < c):
        raise ValueError(f"dumbbell needs 0 < neck_halfwidth < lobe_radius < center_offset, "
                         f"got w={w}, R={R}, c={c}")
    phi = math.asin(w / R)
    a = c - math.sqrt(R * R - w * w)  # neck ends at x = +-a
    arc = R * (2.0 * math.pi - 2.0 * phi)
    segment = 2.0 * a
    return phi, a, arc, segment


def dumbbell_perimeter(lobe_radius=1.0, neck_halfwidth=0.2, center_offset=2.2):
    """Exact length of the two-arc, two-segment dumbbell boundary."""
    _, _, arc, segment = _dumbbell_pieces(lobe_radius, neck_halfwidth, center_offset)
    return 2.0 * arc + 2.0 * segment


def gen_dumbbell(n_vertices=1556, lobe_radius=1.0, neck_halfwidth=0.2, center_offset=2.2):
    """Planar closed curve bounding two disks joined by a straight neck.

    The lobes are radius-``lobe_radius`` disks centred at
    ``(+-center_offset, 0)``; the neck is bounded by the lines
    ``y = +-neck_halfwidth``.  Vertices are placed on the four corners where
    neck meets lobe, and uniformly by arclength within each piece.
    """
    n = int(n_vertices)
    if n < 8 or n % 2:
        raise ValueError(f"dumbbell needs an even vertex count >= 8, got {n}")
    R, w, c = lobe_radius, neck_halfwidth, center_offset
    phi, a, arc, segment = _dumbbell_pieces(R, w, c)
    half = n // 2
    span = 2.0 * math.pi - 2.0 * phi

    def spacing_ratio(k):
        chord = 2.0 * R * math.sin(0.5 * span / k)
        step = segment / (half - k)
        return max(chord, step) / min(chord, step)

    n_arc = min(range(1, half), key=spacing_ratio)
    n_seg = half - n_arc

    t_arc = np.arange(n_arc) / n_arc
    t_seg = np.arange(n_seg) / n_seg
    # right lobe, counter-clockwise through its outer extreme
    th = -math.pi + phi + span * t_arc
    right = np.column_stack([c + R * np.cos(th), R * np.sin(th)])
    top = np.column_stack([a - 2.0 * a * t_seg, np.full(n_seg, w)])
    th = phi + span * t_arc
    left = np.column_stack([-c + R * np.cos(th), R * np.sin(th)])
    bottom = np.column_stack([-a + 2.0 * a * t_seg, np.full(n_seg, -w)])
    vertices = np.vstack([right, top, left, bottom])
    return build_manifold(vertices, np.arange(n), 1)
