"""Lagrange elements on triangles: spaces, basis evaluation, quadrature."""

import math

import numpy as np
import scipy.sparse as sp

from .mesh import locate_point, mesh_checksum


class UnsupportedDegree(Exception):
    """Requested polynomial degree is not available."""


# -- quadrature on the reference triangle -----------------------------------
#
# Points are barycentric triples; weights sum to 1 and are normalized to the
# reference-triangle measure, i.e. integral over a physical element equals
# area * sum(w_i f(p_i)).

def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_RULES = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: (_orbit3(1 / 6), [1 / 3] * 3),
    3: (_orbit6(0.659027622374092, 0.231933368553031), [1 / 6] * 6),
    4: (_orbit3(0.445948490915965) + _orbit3(0.091576213509771),
        [0.223381589678011] * 3 + [0.109951743655322] * 3),
}

# degree-6 rule kept private for quadrature-convergence checks in norms
_RULE6 = (
    _orbit3(0.249286745170910)
    + _orbit3(0.063089014491502)
    + _orbit6(0.310352451033785, 0.053145049844816),
    [0.116786275726379] * 3 + [0.050844906370207] * 3
    + [0.082851075618374] * 6,
)


class QuadratureRule:
    """Symmetric rule on the reference triangle, exact to the stated order."""

    def __init__(self, points, weights, order):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.order = order
        if (self.weights <= 0).any():
            raise ValueError("quadrature weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-13:
            raise ValueError("quadrature weights must sum to 1")
        self._validate()

    def _validate(self):
        # reference triangle (0,0)-(1,0)-(0,1): integral of x^p y^q is
        # p! q! / (p+q+2)!
        x = self.points[:, 1]
        y = self.points[:, 2]
        for p in range(self.order + 1):
            for q in range(self.order + 1 - p):
                exact = (math.factorial(p) * math.factorial(q)
                         / math.factorial(p + q + 2))
                approx = 0.5 * float(self.weights @ (x ** p * y ** q))
                if abs(approx - exact) > 1e-13:
                    raise ValueError(
                        f"rule of order {self.order} missed monomial "
                        f"x^{p} y^{q}: {approx} vs {exact}")


def quadrature(order):
    """Reference-triangle rule exact for polynomials up to `order` (1..4)."""
    if order not in _RULES:
        raise UnsupportedDegree(f"no quadrature rule of order {order}")
    pts, w = _RULES[order]
    return QuadratureRule(pts, w, order)


def _quadrature6():
    pts, w = _RULE6
    return QuadratureRule(pts, w, 6)


# -- reference basis ---------------------------------------------------------

def ref_values(degree, bary):
    """Basis values at barycentric points, shape (npts, nloc)."""
    lam = np.asarray(bary, dtype=float)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    if degree == 1:
        return np.column_stack([l0, l1, l2])
    if degree == 2:
        return np.column_stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1,
        ])
    raise UnsupportedDegree(f"degree {degree} not supported")


_GRAD_LAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def ref_grads(degree, bary):
    """Reference-plane basis gradients at barycentric points, (npts, nloc, 2)."""
    lam = np.asarray(bary, dtype=float)
    npts = lam.shape[0]
    if degree == 1:
        return np.broadcast_to(_GRAD_LAM, (npts, 3, 2)).copy()
    if degree == 2:
        g = np.empty((npts, 6, 2))
        for i in range(3):
            g[:, i, :] = (4 * lam[:, i, None] - 1) * _GRAD_LAM[i]
        pairs = [(1, 2), (0, 2), (0, 1)]
        for k, (a, b) in enumerate(pairs):
            g[:, 3 + k, :] = 4 * (lam[:, a, None] * _GRAD_LAM[b]
                                  + lam[:, b, None] * _GRAD_LAM[a])
        return g
    raise UnsupportedDegree(f"degree {degree} not supported")


# -- spaces and functions ----------------------------------------------------

class FeSpace:
    """Conforming Lagrange space of degree 1 or 2 on a triangle mesh."""

    def __init__(self, mesh, degree):
        if degree not in (1, 2):
            raise UnsupportedDegree("only degrees 1 and 2 are supported")
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            self.cell_dofs = mesh.triangles.copy()
            self.dof_coords = mesh.vertices.copy()
        else:
            edge_dofs = mesh.num_vertices + mesh.tri_to_edge
            self.cell_dofs = np.hstack([mesh.triangles, edge_dofs])
            mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                          + mesh.vertices[mesh.edges[:, 1]])
            self.dof_coords = np.vstack([mesh.vertices, mids])
        self.num_dofs = len(self.dof_coords)
        self.nloc = self.cell_dofs.shape[1]

        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.jacobians = jac                # columns are edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        self.inv_jac = inv                  # d(ref)/d(phys)
        self._cache = {}

    def __repr__(self):
        return f"FeSpace(P{self.degree}, {self.num_dofs} dofs, h={self.mesh.h:.4g})"

    def checksum(self):
        return mesh_checksum(self.mesh)

    def physical_grads(self, tri_indices, bary):
        """Gradients of local basis functions at given elements/points."""
        g_ref = ref_grads(self.degree, bary)            # (m, nloc, 2)
        inv = self.inv_jac[tri_indices]                 # (m, 2, 2)
        # d phi/dx_k = sum_j dphi/dref_j * dref_j/dx_k
        return np.einsum("mlj,mjk->mlk", g_ref, inv)


def build_space(mesh, r):
    """Degree-r Lagrange space; shared dofs identified across elements."""
    return FeSpace(mesh, r)


class FeFunction:
    """Finite element function given by its global coefficient vector."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.num_dofs,):
            raise ValueError("coefficient vector has wrong length")
        if not np.isfinite(coeffs).all():
            raise ValueError("coefficient vector contains non-finite entries")
        self.space = space
        self.coeffs = coeffs

    def eval(self, p):
        t, lam = locate_point(self.space.mesh, p)
        vals = ref_values(self.space.degree, lam[None, :])[0]
        return float(vals @ self.coeffs[self.space.cell_dofs[t]])

    def eval_grad(self, p):
        t, lam = locate_point(self.space.mesh, p)
        g = self.space.physical_grads(np.array([t]), lam[None, :])[0]
        return self.coeffs[self.space.cell_dofs[t]] @ g

    def eval_many(self, points):
        V = eval_matrix(self.space, points)
        return V @ self.coeffs

    def copy(self):
        return FeFunction(self.space, self.coeffs.copy())


def interpolate_nodal(space, g):
    """Nodal interpolant: coeffs[i] = g(dof_coords[i]).

    g may be vectorized over an (n, 2) array of points or accept a single
    point; non-finite values are rejected with the offending dof named.
    """
    try:
        vals = np.asarray(g(space.dof_coords), dtype=float)
        if vals.shape != (space.num_dofs,):
            raise TypeError
    except TypeError:
        vals = np.array([float(g(p)) for p in space.dof_coords])
    if not np.isfinite(vals).all():
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        x, y = space.dof_coords[bad]
        raise ValueError(f"g is not finite at dof {bad} = ({x}, {y})")
    return FeFunction(space, vals)


def constant(space, value=1.0):
    return FeFunction(space, np.full(space.num_dofs, float(value)))


# -- evaluation operators ----------------------------------------------------

def _locate_many(mesh, points):
    tris = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    for i, p in enumerate(points):
        tris[i], bary[i] = locate_point(mesh, p)
    return tris, bary


def eval_matrix(space, points, tris=None, bary=None):
    """Sparse (npts, ndofs) operator of basis values at given points."""
    points = np.asarray(points, dtype=float)
    if tris is None:
        tris, bary = _locate_many(space.mesh, points)
    vals = ref_values(space.degree, bary)
    rows = np.repeat(np.arange(len(points)), space.nloc)
    cols = space.cell_dofs[tris].ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)),
                         shape=(len(points), space.num_dofs))


def grad_matrices(space, points, tris=None, bary=None):
    """Sparse operators (Gx, Gy) of basis x/y-derivatives at given points."""
    points = np.asarray(points, dtype=float)
    if tris is None:
        tris, bary = _locate_many(space.mesh, points)
    g = space.physical_grads(tris, bary)
    rows = np.repeat(np.arange(len(points)), space.nloc)
    cols = space.cell_dofs[tris].ravel()
    shape = (len(points), space.num_dofs)
    Gx = sp.csr_matrix((g[:, :, 0].ravel(), (rows, cols)), shape=shape)
    Gy = sp.csr_matrix((g[:, :, 1].ravel(), (rows, cols)), shape=shape)
    return Gx, Gy


class QuadGrid:
    """All quadrature data of a space for one rule.

    points (P, 2), weights (P,) including element areas, tri_of_point (P,),
    and sparse operators V, Gx, Gy mapping dof vectors to point samples.
    """

    def __init__(self, space, order):
        if order == 6:
            rule = _quadrature6()
        else:
            rule = quadrature(order)
        mesh = space.mesh
        npts = len(rule.points)
        lam = rule.points
        p = mesh.vertices[mesh.triangles]                     # (nt, 3, 2)
        pts = np.einsum("qi,tij->tqj", lam, p).reshape(-1, 2)
        w = np.repeat(mesh.areas, npts) * np.tile(rule.weights, mesh.num_triangles)
        tris = np.repeat(np.arange(mesh.num_triangles), npts)
        bary = np.tile(lam, (mesh.num_triangles, 1))

        self.space = space
        self.rule = rule
        self.points = pts
        self.weights = w
        self.tri_of_point = tris
        self.V = eval_matrix(space, pts, tris, bary)
        self._grads = None

    @property
    def grads(self):
        if self._grads is None:
            mesh = self.space.mesh
            npts = len(self.rule.points)
            bary = np.tile(self.rule.points, (mesh.num_triangles, 1))
            self._grads = grad_matrices(self.space, self.points,
                                        self.tri_of_point, bary)
        return self._grads


def quad_grid(space, order):
    """Cached QuadGrid for (space, order)."""
    key = ("quad_grid", order)
    if key not in space._cache:
        space._cache[key] = QuadGrid(space, order)
    return space._cache[key]


# -- snapshot exchange format ------------------------------------------------

def fefunction_text(f):
    lines = [f"# mesh {mesh_checksum(f.space.mesh)} degree {f.space.degree}"]
    for i, v in enumerate(f.coeffs):
        lines.append(f"{i} {float(v)!r}")
    return "\n".join(lines) + "\n"


def save_fefunction(f, path):
    with open(path, "w") as fh:
        fh.write(fefunction_text(f))


def load_fefunction(space, path):
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "mesh"]:
            raise ValueError("missing snapshot header")
        checksum, degree = header[2], int(header[4])
        if checksum != mesh_checksum(space.mesh) or degree != space.degree:
            raise ValueError("snapshot does not match the given space")
        coeffs = np.empty(space.num_dofs)
        seen = 0
        for line in fh:
            i, v = line.split()
            coeffs[int(i)] = float(v)
            seen += 1
        if seen != space.num_dofs:
            raise ValueError("snapshot has wrong dof count")
    return FeFunction(space, coeffs)
