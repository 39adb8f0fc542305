"""Triangulated unit-disk geometry and P1 finite-element matrices.

The mesh family is polar and boundary-graded: ``level`` controls both an
interior ring structure (interior mesh size halves per level) and a stack of
geometrically thinning boundary layers that each double the azimuthal
resolution, so the boundary polygon has ``6 * 4**level`` edges with all
boundary vertices exactly on the unit circle.  Level 0 is the regular hexagon
plus its center.

The bulk discretization is P1 Lagrange on triangles; the surface
discretization is P1 on the closed boundary polyline with chord lengths as the
metric (a periodic 1D chain).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from .errors import FormatError, MeshQualityError, RefinementLimitError

DEFAULT_MAX_LEVEL = 8
MAX_LEVEL_ENV = "BSCAHN_MAX_LEVEL"

MESH_HEADER = "bscahn-mesh v1"


@dataclass
class Mesh:
    """Conforming triangulation of a polygonal approximation of the unit disk.

    Attributes
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices per triangle, counter-clockwise.
    surface_vertices : (ns,) int array
        Bulk indices of the boundary loop in counter-clockwise order; surface
        edge ``i`` connects loop entries ``i`` and ``i+1 (mod ns)``.
    level : int
        Refinement level the mesh was built at (-1 for meshes from files).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    surface_vertices: np.ndarray
    level: int = -1

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_surface(self) -> int:
        return self.surface_vertices.shape[0]

    def validate(self) -> None:
        """Check orientation, conformity and boundary-loop invariants.

        Raises
        ------
        MeshQualityError
            On non-positive triangle areas, a non-injective boundary loop, or
            surface edges not owned by exactly one triangle.
        """
        p = self.vertices
        t = self.triangles
        if t.min() < 0 or t.max() >= self.n_vertices:
            raise MeshQualityError("triangle indices out of range")
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 2e-14):
            raise MeshQualityError(
                "degenerate or negatively oriented triangle (min det %.3e)" % det.min()
            )
        loop = self.surface_vertices
        if len(np.unique(loop)) != len(loop):
            raise MeshQualityError("boundary loop revisits a vertex")
        # Count how many triangles own each undirected edge.
        edge_count: dict[tuple[int, int], int] = {}
        for tri in t:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edge_count[key] = edge_count.get(key, 0) + 1
        boundary_edges = {k for k, c in edge_count.items() if c == 1}
        if any(c > 2 for c in edge_count.values()):
            raise MeshQualityError("edge shared by more than two triangles")
        ns = len(loop)
        loop_edges = set()
        for i in range(ns):
            a, b = loop[i], loop[(i + 1) % ns]
            loop_edges.add((min(a, b), max(a, b)))
        if loop_edges != boundary_edges:
            raise MeshQualityError(
                "boundary loop does not match the set of single-owner edges"
            )


def _max_level() -> int:
    raw = os.environ.get(MAX_LEVEL_ENV)
    if raw is None:
        return DEFAULT_MAX_LEVEL
    try:
        return int(raw)
    except ValueError as exc:
        raise RefinementLimitError(f"{MAX_LEVEL_ENV} must be an integer, got {raw!r}") from exc


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the annulus between two concentric vertex rings.

    Both rings are indexed so vertex ``i`` of a ring with ``n`` vertices sits
    at angle ``2*pi*i/n``; the merge walks both rings by angle and emits
    ``len(inner) + len(outer)`` triangles.
    """
    n_in, n_out = len(inner), len(outer)
    tris = []
    i = o = 0
    while i < n_in or o < n_out:
        a_in = 2.0 * np.pi * (i + 1) / n_in if i < n_in else np.inf
        a_out = 2.0 * np.pi * (o + 1) / n_out if o < n_out else np.inf
        if a_out <= a_in:
            tris.append((inner[i % n_in], outer[o % n_out], outer[(o + 1) % n_out]))
            o += 1
        else:
            tris.append((inner[i % n_in], outer[(o % n_out)], inner[(i + 1) % n_in]))
            i += 1
    return tris


def build_disk_mesh(level: int) -> Mesh:
    """Build the graded polar disk mesh at a refinement level.

    Parameters
    ----------
    level : int
        Refinement level >= 0.  The boundary polygon has ``6 * 4**level``
        edges; the interior mesh size halves per level.  Levels beyond the
        configured maximum (default 8, override via ``BSCAHN_MAX_LEVEL``)
        raise :class:`RefinementLimitError`.
    """
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    cap = _max_level()
    if level > cap:
        raise RefinementLimitError(
            f"level {level} exceeds the configured maximum {cap} "
            f"(set {MAX_LEVEL_ENV} to raise it)"
        )
    m = 2**level
    rstar = 1.0 - (m - 1) / m**2

    coords = [(0.0, 0.0)]
    rings: list[np.ndarray] = []

    def add_ring(radius: float, count: int) -> None:
        start = len(coords)
        ang = 2.0 * np.pi * np.arange(count) / count
        for a in ang:
            coords.append((radius * np.cos(a), radius * np.sin(a)))
        rings.append(np.arange(start, start + count))

    # Interior rings: 6j vertices at radius j*rstar/m -> near-unit aspect.
    for j in range(1, m + 1):
        add_ring(j * rstar / m, 6 * j)
    # Boundary layers: thickness 2**-k/m, azimuthal count doubles per layer.
    for k in range(1, level + 1):
        radius = 1.0 if k == level else rstar + (1.0 - 0.5**k) / m
        add_ring(radius, 6 * m * 2**k)

    tris: list[tuple[int, int, int]] = []
    for i in range(6):
        tris.append((0, rings[0][i], rings[0][(i + 1) % 6]))
    for inner, outer in zip(rings[:-1], rings[1:]):
        tris.extend(_zip_rings(inner, outer))

    vertices = np.asarray(coords, dtype=float)
    triangles = np.asarray(tris, dtype=np.int64)
    # Enforce counter-clockwise orientation.
    d1 = vertices[triangles[:, 1]] - vertices[triangles[:, 0]]
    d2 = vertices[triangles[:, 2]] - vertices[triangles[:, 0]]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = det < 0.0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        surface_vertices=rings[-1].copy(),
        level=level,
    )
    mesh.validate()
    return mesh


@dataclass
class FemMatrices:
    """Assembled P1 matrices and cached element data for one mesh.

    ``M_*``/``A_*`` are consistent mass and stiffness matrices (CSR); the
    surface pair lives on the boundary loop in surface-local indexing with
    chord lengths as the 1D metric.  ``tri_K`` caches per-element stiffness
    blocks so mobility-weighted operators can be reassembled cheaply.
    """

    mesh: Mesh
    M_bulk: sps.csr_matrix
    A_bulk: sps.csr_matrix
    M_surf: sps.csr_matrix
    A_surf: sps.csr_matrix
    lumped_bulk: np.ndarray
    lumped_surf: np.ndarray
    tri_areas: np.ndarray
    tri_grads: np.ndarray  # (nt, 3, 2)
    tri_K: np.ndarray  # (nt, 3, 3) element stiffness blocks
    edge_lengths: np.ndarray  # (ns,) chord lengths, edge i = loop (i, i+1)
    area: float  # |Omega|_h
    perimeter: float  # |Gamma|_h
    h_max: float
    lumped_mass: bool = False
    # COO index patterns reused by weighted assembly.
    _bulk_rows: np.ndarray = field(repr=False, default=None)
    _bulk_cols: np.ndarray = field(repr=False, default=None)
    _mass_lu: dict = field(repr=False, default_factory=dict)

    def solve_mass_bulk(self, rhs: np.ndarray) -> np.ndarray:
        """Apply M_bulk^{-1} (factorization cached on first use)."""
        if "bulk" not in self._mass_lu:
            self._mass_lu["bulk"] = spsla.factorized(self.M_bulk.tocsc())
        return self._mass_lu["bulk"](rhs)

    def solve_mass_surf(self, rhs: np.ndarray) -> np.ndarray:
        """Apply M_surf^{-1} (factorization cached on first use)."""
        if "surf" not in self._mass_lu:
            self._mass_lu["surf"] = spsla.factorized(self.M_surf.tocsc())
        return self._mass_lu["surf"](rhs)

    @property
    def n_bulk(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_surf(self) -> int:
        return self.mesh.n_surface

    def weighted_stiffness_bulk(self, tri_weights: np.ndarray) -> sps.csr_matrix:
        """Assemble sum_T w_T * K_T for per-triangle weights ``w_T``."""
        data = (self.tri_K * tri_weights[:, None, None]).ravel()
        n = self.n_bulk
        return sps.coo_matrix((data, (self._bulk_rows, self._bulk_cols)), shape=(n, n)).tocsr()

    def weighted_stiffness_surf(self, edge_weights: np.ndarray) -> sps.csr_matrix:
        """Assemble the periodic 1D stiffness with per-edge weights."""
        ns = self.n_surf
        i = np.arange(ns)
        j = (i + 1) % ns
        w = edge_weights / self.edge_lengths
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        data = np.concatenate([w, w, -w, -w])
        return sps.coo_matrix((data, (rows, cols)), shape=(ns, ns)).tocsr()


def assemble_fem(mesh: Mesh, lumped_mass: bool = False) -> FemMatrices:
    """Assemble P1 mass/stiffness matrices for bulk and surface.

    Parameters
    ----------
    mesh : Mesh
    lumped_mass : bool
        If True the ``M_*`` matrices are the lumped (diagonal) variants;
        the consistent lumped vectors are always available separately.
    """
    p = mesh.vertices
    t = mesh.triangles
    nv, nt = mesh.n_vertices, mesh.n_triangles

    p0, p1, p2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 2e-14):
        raise MeshQualityError("degenerate triangle in assembly (det %.3e)" % det.min())
    areas = 0.5 * det

    grads = np.empty((nt, 3, 2))
    grads[:, 0, 0] = p1[:, 1] - p2[:, 1]
    grads[:, 0, 1] = p2[:, 0] - p1[:, 0]
    grads[:, 1, 0] = p2[:, 1] - p0[:, 1]
    grads[:, 1, 1] = p0[:, 0] - p2[:, 0]
    grads[:, 2, 0] = p0[:, 1] - p1[:, 1]
    grads[:, 2, 1] = p1[:, 0] - p0[:, 0]
    grads /= det[:, None, None]

    tri_K = np.einsum("tad,tbd->tab", grads, grads) * areas[:, None, None]

    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A_bulk = sps.coo_matrix((tri_K.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    m_local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    m_data = (areas[:, None, None] * m_local[None, :, :]).ravel()
    M_bulk_consistent = sps.coo_matrix((m_data, (rows, cols)), shape=(nv, nv)).tocsr()
    lumped_bulk = np.asarray(M_bulk_consistent.sum(axis=1)).ravel()

    loop = mesh.surface_vertices
    ns = len(loop)
    edge_vec = p[loop[(np.arange(ns) + 1) % ns]] - p[loop]
    edge_len = np.hypot(edge_vec[:, 0], edge_vec[:, 1])

    i = np.arange(ns)
    j = (i + 1) % ns
    srows = np.concatenate([i, j, i, j])
    scols = np.concatenate([i, j, j, i])
    inv = 1.0 / edge_len
    A_surf = sps.coo_matrix(
        (np.concatenate([inv, inv, -inv, -inv]), (srows, scols)), shape=(ns, ns)
    ).tocsr()
    M_surf_consistent = sps.coo_matrix(
        (
            np.concatenate([edge_len / 3, edge_len / 3, edge_len / 6, edge_len / 6]),
            (srows, scols),
        ),
        shape=(ns, ns),
    ).tocsr()
    lumped_surf = np.asarray(M_surf_consistent.sum(axis=1)).ravel()

    if lumped_mass:
        M_bulk = sps.diags(lumped_bulk).tocsr()
        M_surf = sps.diags(lumped_surf).tocsr()
    else:
        M_bulk = M_bulk_consistent
        M_surf = M_surf_consistent

    edge_all = np.stack(
        [
            np.hypot(d1[:, 0], d1[:, 1]),
            np.hypot(d2[:, 0], d2[:, 1]),
            np.hypot(d2[:, 0] - d1[:, 0], d2[:, 1] - d1[:, 1]),
        ]
    )

    return FemMatrices(
        mesh=mesh,
        M_bulk=M_bulk,
        A_bulk=A_bulk,
        M_surf=M_surf,
        A_surf=A_surf,
        lumped_bulk=lumped_bulk,
        lumped_surf=lumped_surf,
        tri_areas=areas,
        tri_grads=grads,
        tri_K=tri_K,
        edge_lengths=edge_len,
        area=float(areas.sum()),
        perimeter=float(edge_len.sum()),
        h_max=float(edge_all.max()),
        lumped_mass=lumped_mass,
        _bulk_rows=rows,
        _bulk_cols=cols,
    )


def write_mesh(mesh: Mesh, path: str) -> None:
    """Serialize a mesh to the plain-text format (header ``bscahn-mesh v1``)."""
    with open(path, "w") as f:
        f.write(MESH_HEADER + "\n")
        f.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        f.write(f"{mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
        f.write(f"{mesh.n_surface}\n")
        for s in mesh.surface_vertices:
            f.write(f"{s}\n")


def read_mesh(path: str) -> Mesh:
    """Read a mesh from the plain-text format and validate it."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != MESH_HEADER:
        raise FormatError(f"{path}: missing mesh header {MESH_HEADER!r}")
    pos = 1

    def take(n: int) -> list[str]:
        nonlocal pos
        if pos + n > len(lines):
            raise FormatError(f"{path}: truncated mesh file")
        out = lines[pos : pos + n]
        pos += n
        return out

    try:
        nv = int(take(1)[0])
        verts = np.array([[float(v) for v in ln.split()] for ln in take(nv)])
        nt = int(take(1)[0])
        tris = np.array([[int(v) for v in ln.split()] for ln in take(nt)], dtype=np.int64)
        ns = int(take(1)[0])
        loop = np.array([int(ln) for ln in take(ns)], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed mesh data: {exc}") from exc
    if pos != len(lines):
        raise FormatError(f"{path}: trailing data after mesh")
    if verts.ndim != 2 or verts.shape[1] != 2 or tris.shape[1] != 3:
        raise FormatError(f"{path}: wrong column counts")
    mesh = Mesh(vertices=verts, triangles=tris, surface_vertices=loop, level=-1)
    mesh.validate()
    return mesh
