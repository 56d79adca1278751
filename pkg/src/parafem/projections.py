"""L2 projection, Ritz projection, and element-supported regularized deltas."""

import numpy as np

from .assembly import assemble_load, assemble_div_load, assemble_mass, \
    assemble_stiffness
from .fespace import FeFunction, eval_matrix, quadrature, ref_values
from .linsolve import SpdSolver
from .mesh import locate_point


def mass_solver(space, dense_limit=3000):
    key = ("mass_solver",)
    if key not in space._cache:
        space._cache[key] = SpdSolver(assemble_mass(space), dense_limit)
    return space._cache[key]


def stiffness_solver(space, coeff, quad_order=2, dense_limit=3000):
    key = ("stiffness_solver", quad_order)
    for stored, solver in space._cache.get(key, ()):
        if stored is coeff:
            return solver
    solver = SpdSolver(assemble_stiffness(space, coeff, quad_order),
                       dense_limit)
    space._cache.setdefault(key, []).append((coeff, solver))
    return solver


def l2_project(space, f, quad_order=4):
    """Mass-orthogonal projection onto the space: solves M u = (f, phi)."""
    b = assemble_load(space, f, quad_order)
    return FeFunction(space, mass_solver(space).solve(b))


def ritz_project(space, coeff, w, grad_w, quad_order=2):
    """Energy projection: K u = (a grad w, grad phi) + (c w, phi).

    The load uses the same quadrature order as the stiffness matrix so that
    members of the space are reproduced exactly.
    """
    b = assemble_div_load(
        space,
        lambda pts: np.einsum("nij,nj->ni", coeff.a(pts),
                              np.asarray(grad_w(pts), dtype=float)),
        quad_order)
    b = b + assemble_load(
        space,
        lambda pts: np.asarray(coeff.c(pts), dtype=float)
        * np.asarray(w(pts), dtype=float),
        quad_order)
    return FeFunction(space, stiffness_solver(space, coeff, quad_order).solve(b))


class RegularizedDelta:
    """Point-evaluation representer supported on a single element.

    Pairing any member chi of the space against this function integrates to
    chi(x0) exactly, because chi restricted to the element lies in the local
    polynomial span.
    """

    def __init__(self, space, source, element, local_coeffs):
        self.space = space
        self.source = np.asarray(source, dtype=float)
        self.element = int(element)
        self.local_coeffs = np.asarray(local_coeffs, dtype=float)

    def eval_many(self, points, tol=1e-12):
        """Values at given points (zero outside the supporting element)."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(len(points))
        for i, p in enumerate(points):
            lam = self.space.mesh.barycentric(self.element, p)
            if lam.min() >= -tol:
                vals = ref_values(self.space.degree, lam[None, :])[0]
                out[i] = vals @ self.local_coeffs
        return out

    def linf_norm(self):
        """Max of |delta| over a dense barycentric sample of its element."""
        grid = []
        m = 8
        for i in range(m + 1):
            for j in range(m + 1 - i):
                grid.append((i / m, j / m, (m - i - j) / m))
        vals = ref_values(self.space.degree, np.asarray(grid)) @ self.local_coeffs
        return float(np.abs(vals).max())

    def pair(self, fefunc, quad_order=4):
        """Integral of delta * fefunc over the supporting element."""
        rule = quadrature(quad_order)
        vals_delta = ref_values(self.space.degree, rule.points) @ self.local_coeffs
        local = fefunc.coeffs[self.space.cell_dofs[self.element]]
        vals_f = ref_values(self.space.degree, rule.points) @ local
        area = self.space.mesh.areas[self.element]
        return float(area * (rule.weights @ (vals_delta * vals_f)))

    def load_vector(self):
        """(delta, phi_i) for all global basis functions = point evaluation."""
        e = np.zeros(self.space.num_dofs)
        lam = self.space.mesh.barycentric(self.element, self.source)
        vals = ref_values(self.space.degree, lam[None, :])[0]
        e[self.space.cell_dofs[self.element]] = vals
        return e


def regularized_delta(space, x0):
    """Construct the local dual representer of point evaluation at x0.

    Solves the element Gram system sum_j alpha_j (phi_j, phi_k) = phi_k(x0)
    over the local basis of the element containing x0 (lowest-index tie rule).
    """
    x0 = np.asarray(x0, dtype=float)
    element, lam = locate_point(space.mesh, x0)
    rule = quadrature(4)                      # exact for P1/P2 products
    vals = ref_values(space.degree, rule.points)
    area = space.mesh.areas[element]
    gram = area * (vals.T * rule.weights) @ vals
    rhs = ref_values(space.degree, lam[None, :])[0]
    alpha = np.linalg.solve(gram, rhs)
    return RegularizedDelta(space, x0, element, alpha)


def ph_delta(space, x0):
    """L2 projection of the (regularized) point mass: solves M u = e(x0)."""
    x0 = np.asarray(x0, dtype=float)
    e = eval_matrix(space, x0[None, :]).toarray()[0]
    return FeFunction(space, mass_solver(space).solve(e))
