"""Mass/stiffness/load assembly for variable symmetric coefficients.

The coefficient library carries Lipschitz-but-not-smooth fields whose kink
lines deliberately cross element interiors for odd mesh sizes.
"""

import numpy as np
import scipy.sparse as sp

from .fespace import quad_grid


class EllipticityViolation(Exception):
    """Coefficient field failed its declared bounds at a quadrature point."""


class CoefficientField:
    """Symmetric diffusion tensor a(x), reaction c(x) and certified bounds.

    a maps an (n, 2) point array to (n, 2, 2) symmetric matrices, c maps it
    to (n,) values. lambda1/lambda2 bound the eigenvalues of a, c0 bounds c
    from below, lipschitz_bound is the declared Lipschitz constant of a.
    """

    def __init__(self, name, a, c, lambda1, lambda2, c0, lipschitz_bound):
        self.name = name
        self.a = a
        self.c = c
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.c0 = float(c0)
        self.lipschitz_bound = float(lipschitz_bound)

    def __repr__(self):
        return (f"CoefficientField({self.name}, lambda=[{self.lambda1}, "
                f"{self.lambda2}], c0={self.c0})")

    def a_at(self, p):
        return self.a(np.asarray(p, dtype=float)[None, :])[0]

    def c_at(self, p):
        return float(self.c(np.asarray(p, dtype=float)[None, :])[0])

    def check_at(self, points, tol=1e-10):
        """Verify symmetry and the declared bounds on the given points."""
        points = np.asarray(points, dtype=float)
        A = self.a(points)
        if np.abs(A[:, 0, 1] - A[:, 1, 0]).max() > 1e-14:
            bad = int(np.argmax(np.abs(A[:, 0, 1] - A[:, 1, 0])))
            raise EllipticityViolation(
                f"a is not symmetric at point ({points[bad, 0]}, {points[bad, 1]})")
        mean = 0.5 * (A[:, 0, 0] + A[:, 1, 1])
        rad = np.sqrt((0.5 * (A[:, 0, 0] - A[:, 1, 1])) ** 2 + A[:, 0, 1] ** 2)
        lo, hi = mean - rad, mean + rad
        cvals = np.asarray(self.c(points), dtype=float)
        for cond, label in [(lo < self.lambda1 - tol, "lower ellipticity"),
                            (hi > self.lambda2 + tol, "upper ellipticity"),
                            (cvals < self.c0 - tol, "reaction lower bound")]:
            if cond.any():
                bad = int(np.flatnonzero(cond)[0])
                raise EllipticityViolation(
                    f"{label} violated at quadrature point "
                    f"({points[bad, 0]}, {points[bad, 1]})")
        return lo, hi, cvals


def _isotropic(profile):
    def a(points):
        s = profile(points)
        out = np.zeros((len(points), 2, 2))
        out[:, 0, 0] = s
        out[:, 1, 1] = s
        return out
    return a


def coefficient_library(name):
    """Built-in fields: identity, smooth_aniso, lipschitz_kink, lipschitz_radial."""
    if name == "identity":
        return CoefficientField(
            "identity",
            _isotropic(lambda p: np.ones(len(p))),
            lambda p: np.ones(len(p)),
            lambda1=1.0, lambda2=1.0, c0=1.0, lipschitz_bound=0.0)
    if name == "smooth_aniso":
        def a(points):
            out = np.zeros((len(points), 2, 2))
            out[:, 0, 0] = 1.0 + 0.5 * np.sin(np.pi * points[:, 0]) ** 2
            out[:, 1, 1] = 1.0 + 0.5 * np.cos(np.pi * points[:, 1]) ** 2
            return out
        return CoefficientField(
            "smooth_aniso", a, lambda p: np.ones(len(p)),
            lambda1=1.0, lambda2=1.5, c0=1.0, lipschitz_bound=0.5 * np.pi)
    if name == "lipschitz_kink":
        # kink lines at x1=1/2 and x2=1/2: Lipschitz, not C^1
        return CoefficientField(
            "lipschitz_kink",
            _isotropic(lambda p: 1.0 + 0.5 * np.abs(p[:, 0] - 0.5)),
            lambda p: 1.0 + 0.25 * np.abs(p[:, 1] - 0.5),
            lambda1=1.0, lambda2=1.25, c0=1.0, lipschitz_bound=0.5)
    if name == "lipschitz_radial":
        xc = np.array([0.5, 0.5])

        def profile(points):
            r = np.hypot(points[:, 0] - xc[0], points[:, 1] - xc[1])
            return 1.0 + 0.5 * np.abs(r - 0.25)
        return CoefficientField(
            "lipschitz_radial", _isotropic(profile),
            lambda p: np.ones(len(p)),
            lambda1=1.0, lambda2=2.0, c0=1.0, lipschitz_bound=0.5)
    raise ValueError(f"unknown coefficient field {name!r}")


def _weighted_product(U, w, V):
    """Sparse U^T diag(w) V with explicit symmetrization left to callers."""
    return (U.multiply(w[:, None])).T @ V


def assemble_mass(space):
    """Mass matrix M_ij = integral of phi_i phi_j (exact for P1 and P2)."""
    key = ("mass",)
    if key not in space._cache:
        g = quad_grid(space, 4)
        M = _weighted_product(g.V, g.weights, g.V).tocsr()
        space._cache[key] = (0.5 * (M + M.T)).tocsr()
    return space._cache[key]


def assemble_stiffness(space, coeff, quad_order=2):
    """Operator matrix K_ij = (a grad phi_j, grad phi_i) + (c phi_j, phi_i).

    Order-2 quadrature by default: the built-in coefficients are merely
    Lipschitz, so higher order buys nothing beyond the O(h^2) variational
    crime already accepted.
    """
    # cache holds the coefficient object itself: ids are recycled by the GC
    key = ("stiffness", quad_order)
    for stored, matrix in space._cache.get(key, ()):
        if stored is coeff:
            return matrix
    g = quad_grid(space, quad_order)
    A = coeff.a(g.points)
    coeff.check_at(g.points)
    cvals = np.asarray(coeff.c(g.points), dtype=float)
    w = g.weights
    Gx, Gy = g.grads
    K = (_weighted_product(Gx, w * A[:, 0, 0], Gx)
         + _weighted_product(Gx, w * A[:, 0, 1], Gy)
         + _weighted_product(Gy, w * A[:, 1, 0], Gx)
         + _weighted_product(Gy, w * A[:, 1, 1], Gy)
         + _weighted_product(g.V, w * cvals, g.V)).tocsr()
    K = (0.5 * (K + K.T)).tocsr()
    space._cache.setdefault(key, []).append((coeff, K))
    return K


def _sample(func, points, t=None, what="f"):
    vals = np.asarray(func(points) if t is None else func(points, t),
                      dtype=float)
    if not np.isfinite(vals).all():
        flat = vals.reshape(len(points), -1)
        bad = int(np.flatnonzero(~np.isfinite(flat).all(axis=1))[0])
        raise ValueError(f"{what} is not finite at quadrature point "
                         f"({points[bad, 0]}, {points[bad, 1]})")
    return vals


def assemble_load(space, f, quad_order=2):
    """Load vector b_i = integral of f phi_i with the requested rule."""
    g = quad_grid(space, quad_order)
    vals = _sample(f, g.points, what="f")
    return g.V.T @ (g.weights * vals)


def assemble_div_load(space, gfun, quad_order=2):
    """Flux load b_i = integral of g . grad phi_i (right-hand side pairing)."""
    g = quad_grid(space, quad_order)
    vals = _sample(gfun, g.points, what="g")
    if vals.shape != (len(g.points), 2):
        raise ValueError("g must return an (n, 2) array")
    Gx, Gy = g.grads
    return Gx.T @ (g.weights * vals[:, 0]) + Gy.T @ (g.weights * vals[:, 1])


# -- coordinate text export ---------------------------------------------------

def matrix_text(A):
    A = A.tocoo()
    lines = [f"rows {A.shape[0]} cols {A.shape[1]} nnz {A.nnz}"]
    order = np.lexsort((A.col, A.row))
    for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
        lines.append(f"{r} {c} {float(v)!r}")
    return "\n".join(lines) + "\n"


def save_matrix(A, path):
    with open(path, "w") as f:
        f.write(matrix_text(A))
