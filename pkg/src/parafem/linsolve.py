"""Symmetric positive definite solves with cached factorizations."""

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 3000


class SolverError(Exception):
    """A linear solve failed or missed the residual target."""


class SpdSolver:
    """Factorize once, solve many right-hand sides.

    Dense Cholesky below `dense_limit` dofs, sparse LU above. Every solve is
    verified against a relative-residual ceiling and rejected loudly if the
    factorization went bad.
    """

    def __init__(self, A, dense_limit=DENSE_LIMIT, check_tol=1e-10):
        self.n = A.shape[0]
        self.check_tol = check_tol
        self._A = A.tocsr() if sp.issparse(A) else np.asarray(A)
        try:
            if self.n <= dense_limit:
                dense = self._A.toarray() if sp.issparse(self._A) else self._A
                self._chol = la.cho_factor(dense, lower=True,
                                           check_finite=False)
                self._lu = None
            else:
                self._lu = spla.splu(self._A.tocsc())
                self._chol = None
        except Exception as exc:  # singular / indefinite matrix
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._chol is not None:
            x = la.cho_solve(self._chol, b, check_finite=False)
        else:
            x = self._lu.solve(b)
        r = self._A @ x - b
        bnorm = np.linalg.norm(b, axis=0) if b.ndim > 1 else np.linalg.norm(b)
        rnorm = np.linalg.norm(r, axis=0) if b.ndim > 1 else np.linalg.norm(r)
        bad = rnorm > self.check_tol * np.maximum(bnorm, 1e-300)
        if np.any(np.logical_and(bad, np.atleast_1d(bnorm) > 0)):
            rel = float(np.max(rnorm / np.maximum(bnorm, 1e-300)))
            raise SolverError(f"solve missed residual target: rel={rel:.3e}")
        return x


def spd_solve(A, b, dense_limit=DENSE_LIMIT):
    return SpdSolver(A, dense_limit=dense_limit).solve(b)
