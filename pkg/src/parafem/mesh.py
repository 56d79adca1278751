"""Quasi-uniform triangulations of 2-D domains: builders, refinement, queries, text I/O."""

import hashlib
import math

import numpy as np

BARY_TOL = 1e-12


class PointOutsideDomain(Exception):
    """Query point is contained in no element of the mesh (beyond tolerance)."""


class MeshFormatError(Exception):
    """A mesh text file does not follow the documented format."""


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_table(triangles):
    """Unique undirected edges and the per-triangle edge map.

    Returns (edges, tri_to_edge, counts) where edges is (ne, 2) with sorted
    vertex pairs, tri_to_edge[t, k] is the edge index of local edge k of
    triangle t in the order (1,2), (0,2), (0,1), and counts[e] is the number
    of triangles sharing edge e.
    """
    raw = np.concatenate([
        triangles[:, [1, 2]],
        triangles[:, [0, 2]],
        triangles[:, [0, 1]],
    ])
    raw = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(
        raw, axis=0, return_inverse=True, return_counts=True)
    tri_to_edge = inverse.reshape(3, -1).T
    return edges, tri_to_edge, counts


class Mesh:
    """Conforming triangle mesh with positively oriented elements.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise after construction
    boundary_edges : (nb, 2) int array, edges owned by exactly one triangle
    h : float, maximum element diameter (analytic sqrt(2)/n for the
        structured square so refinement halves it exactly)
    domain_tag : 'unit_square', 'disk_polygon' or 'imported'
    parent : the mesh this one was obtained from by uniform refinement, or None
    """

    def __init__(self, vertices, triangles, domain_tag="imported", h=None,
                 parent=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")
        if not np.isfinite(vertices).all():
            raise ValueError("vertex coordinates must be finite")
        if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(vertices):
            raise ValueError("triangle vertex index out of range")
        if len(np.unique(triangles)) != len(vertices):
            raise ValueError("mesh has vertices not referenced by any triangle")

        # consistent orientation: flip clockwise triangles, then demand
        # strictly positive signed areas
        areas = _signed_areas(vertices, triangles)
        flip = areas < 0
        if flip.any():
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
            areas = np.abs(areas)
        if (areas <= 0).any():
            bad = int(np.argmin(areas))
            raise ValueError(f"triangle {bad} is degenerate (zero area)")

        edges, tri_to_edge, counts = _edge_table(triangles)
        if counts.max(initial=1) > 2:
            raise ValueError("non-conforming mesh: an edge is shared by >2 triangles")

        self.vertices = vertices
        self.triangles = triangles
        self.domain_tag = domain_tag
        self.parent = parent
        self.edges = edges
        self.tri_to_edge = tri_to_edge
        self.edge_counts = counts
        self.boundary_edges = edges[counts == 1]
        self.areas = areas

        edge_vec = vertices[edges[:, 1]] - vertices[edges[:, 0]]
        self.edge_lengths = np.hypot(edge_vec[:, 0], edge_vec[:, 1])
        self.h = float(h) if h is not None else float(self.edge_lengths.max())
        self._locator = None
        self._cache = {}

        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    def __repr__(self):
        return (f"Mesh({self.domain_tag}, {self.num_vertices} vertices, "
                f"{self.num_triangles} triangles, h={self.h:.4g})")

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def area(self):
        return float(self.areas.sum())

    def diameters(self):
        """Per-triangle diameter (longest edge)."""
        return self.edge_lengths[self.tri_to_edge].max(axis=1)

    def diameter_ratio(self):
        d = self.diameters()
        return float(d.max() / d.min())

    def min_angle(self):
        """Smallest interior angle over all triangles, in degrees."""
        v = self.vertices
        t = self.triangles
        worst = math.pi
        sides = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
        for a, b, c in sides:
            e1 = v[t[:, b]] - v[t[:, a]]
            e2 = v[t[:, c]] - v[t[:, a]]
            cosang = (e1 * e2).sum(axis=1) / (
                np.hypot(e1[:, 0], e1[:, 1]) * np.hypot(e2[:, 0], e2[:, 1]))
            worst = min(worst, float(np.arccos(np.clip(cosang, -1, 1)).min()))
        return math.degrees(worst)

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def refinement_depth_from(self, ancestor):
        """Number of uniform refinements separating this mesh from `ancestor`.

        Returns None if `ancestor` is not in the parent chain.
        """
        depth, m = 0, self
        while m is not None:
            if m is ancestor:
                return depth
            m = m.parent
            depth += 1
        return None

    # -- point location ----------------------------------------------------

    def _build_locator(self):
        nx = max(1, int(math.ceil(1.0 / max(self.h, 1e-12))))
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        tv = self.vertices[self.triangles]
        tlo = ((tv.min(axis=1) - lo) / span * nx).astype(int).clip(0, nx - 1)
        thi = ((tv.max(axis=1) - lo) / span * nx).astype(int).clip(0, nx - 1)
        buckets = {}
        for t in range(self.num_triangles):
            for ix in range(tlo[t, 0], thi[t, 0] + 1):
                for iy in range(tlo[t, 1], thi[t, 1] + 1):
                    buckets.setdefault((ix, iy), []).append(t)
        self._locator = (lo, span, nx, buckets)

    def _candidates(self, p):
        if self._locator is None:
            self._build_locator()
        lo, span, nx, buckets = self._locator
        ix = min(max(int((p[0] - lo[0]) / span[0] * nx), 0), nx - 1)
        iy = min(max(int((p[1] - lo[1]) / span[1] * nx), 0), nx - 1)
        return buckets.get((ix, iy), ())

    def barycentric(self, tri_index, p):
        """Barycentric coordinates of p with respect to triangle tri_index."""
        v = self.vertices[self.triangles[tri_index]]
        d1 = v[1] - v[0]
        d2 = v[2] - v[0]
        det = d1[0] * d2[1] - d1[1] * d2[0]
        r = np.asarray(p, dtype=float) - v[0]
        l1 = (r[0] * d2[1] - r[1] * d2[0]) / det
        l2 = (d1[0] * r[1] - d1[1] * r[0]) / det
        return np.array([1.0 - l1 - l2, l1, l2])


def locate_point(mesh, p, tol=BARY_TOL):
    """Find the element containing p.

    Returns (triangle index, barycentric coordinates). Ties on shared edges
    and vertices are broken by the lowest triangle index. Raises
    PointOutsideDomain when no element contains p within tolerance.
    """
    p = np.asarray(p, dtype=float)
    cands = sorted(mesh._candidates(p))
    for t in cands:
        lam = mesh.barycentric(t, p)
        if lam.min() >= -tol:
            return t, lam
    # fallback sweep covers points that straddle bucket borders
    for t in range(mesh.num_triangles):
        lam = mesh.barycentric(t, p)
        if lam.min() >= -tol:
            return t, lam
    raise PointOutsideDomain(f"point ({p[0]}, {p[1]}) lies outside the mesh")


def build_structured_square(n):
    """Uniform right-triangle mesh of the unit square.

    n subdivisions per side give (n+1)^2 vertices, 2 n^2 triangles and
    h = sqrt(2)/n.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh(vertices, np.array(tris), domain_tag="unit_square",
                h=math.sqrt(2.0) / n)


def build_disk_polygon(rings):
    """Concentric-ring triangulation of the unit disk.

    Ring k carries 6k vertices at radius k/rings; boundary vertices sit
    exactly on the unit circle. The polygon area falls short of pi by O(h^2).
    """
    rings = int(rings)
    if rings < 1:
        raise ValueError("rings must be a positive integer")
    verts = [(0.0, 0.0)]
    ring_start = [0, 1]
    for k in range(1, rings + 1):
        m = 6 * k
        ang = 2.0 * math.pi * np.arange(m) / m
        r = k / rings
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        ring_start.append(len(verts))

    tris = [(0, 1 + j, 1 + (j + 1) % 6) for j in range(6)]
    for k in range(1, rings):
        ni, no = 6 * k, 6 * (k + 1)
        i0, o0 = ring_start[k], ring_start[k + 1]
        for s in range(6):
            inner = [i0 + (s * k + i) % ni for i in range(k + 1)]
            outer = [o0 + (s * (k + 1) + i) % no for i in range(k + 2)]
            for i in range(k + 1):
                tris.append((outer[i], outer[i + 1], inner[i]))
                if i < k:
                    tris.append((outer[i + 1], inner[i + 1], inner[i]))
    return Mesh(np.array(verts), np.array(tris), domain_tag="disk_polygon")


def refine_uniform(mesh):
    """Red refinement: split every triangle into 4 congruent children.

    Children of triangle t occupy slots 4t..4t+3, so the containing parent of
    a child is index // 4. For disk meshes the new boundary midpoints are
    projected back to the unit circle.
    """
    v = mesh.vertices
    t = mesh.triangles
    edges = mesh.edges
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])

    if mesh.domain_tag == "disk_polygon":
        on_boundary = mesh.edge_counts == 1
        norms = np.hypot(mid[on_boundary, 0], mid[on_boundary, 1])
        mid[on_boundary] /= norms[:, None]

    new_vertices = np.vstack([v, mid])
    e = mesh.tri_to_edge + mesh.num_vertices
    m12, m02, m01 = e[:, 0], e[:, 1], e[:, 2]
    children = np.empty((4 * mesh.num_triangles, 3), dtype=np.int64)
    children[0::4] = np.column_stack([t[:, 0], m01, m02])
    children[1::4] = np.column_stack([t[:, 1], m12, m01])
    children[2::4] = np.column_stack([t[:, 2], m02, m12])
    children[3::4] = np.column_stack([m01, m12, m02])

    h = mesh.h / 2.0 if mesh.domain_tag == "unit_square" else None
    return Mesh(new_vertices, children, domain_tag=mesh.domain_tag, h=h,
                parent=mesh)


# -- plain-text exchange format --------------------------------------------

def mesh_text(mesh):
    """Serialize to the `vertices N triangles M` text format."""
    lines = [f"vertices {mesh.num_vertices} triangles {mesh.num_triangles}"]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    return "\n".join(lines) + "\n"


def save_mesh(mesh, path):
    with open(path, "w") as f:
        f.write(mesh_text(mesh))


def parse_mesh_text(text, domain_tag="imported"):
    lines = text.strip().split("\n")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "vertices" or header[2] != "triangles":
        raise MeshFormatError(f"bad header line: {lines[0]!r}")
    nv, nt = int(header[1]), int(header[3])
    if len(lines) != 1 + nv + nt:
        raise MeshFormatError(f"expected {1 + nv + nt} lines, got {len(lines)}")
    vertices = np.array([[float(w) for w in lines[1 + i].split()]
                         for i in range(nv)])
    triangles = np.array([[int(w) for w in lines[1 + nv + i].split()]
                          for i in range(nt)])
    return Mesh(vertices, triangles, domain_tag=domain_tag)


def load_mesh(path, domain_tag="imported"):
    with open(path) as f:
        return parse_mesh_text(f.read(), domain_tag=domain_tag)


def mesh_checksum(mesh):
    """Stable hex digest of the mesh geometry (used in snapshot headers)."""
    return hashlib.sha256(mesh_text(mesh).encode()).hexdigest()[:16]
