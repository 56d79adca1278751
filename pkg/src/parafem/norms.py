"""Mixed space-time norms over trajectories and the stability log factor."""

import math

import numpy as np

from .fespace import quad_grid


def log_factor(h):
    """ln(2 + 1/h), the piecewise-linear max-norm stability factor."""
    if h <= 0:
        raise ValueError("h must be positive")
    return math.log(2.0 + 1.0 / h)


def _check_exponent(p, name):
    if p != np.inf and not (1 <= p < np.inf):
        raise ValueError(f"{name} must be in [1, inf]")


def _time_integrate(times, samples, p):
    """Composite trapezoid of samples^p over the time grid (max for p=inf)."""
    if p == np.inf:
        return float(np.max(samples))
    w = np.zeros(len(times))
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return float((w @ np.power(samples, p)) ** (1.0 / p))


def spatial_lq(grid, values, q):
    """L^q norm of point samples against quadrature weights (max for q=inf)."""
    if q == np.inf:
        return float(np.abs(values).max())
    return float((grid.weights @ np.abs(values) ** q) ** (1.0 / q))


def lp_lq_norm(traj, p, q, quad_order=4):
    """Bochner norm: spatial L^q per snapshot, temporal L^p by trapezoid."""
    _check_exponent(p, "p")
    _check_exponent(q, "q")
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    grid = quad_grid(traj.space, quad_order)
    vals = grid.V @ traj.snapshots.T          # (npts, ntimes)
    if q == np.inf:
        # include dof values: exact for P1, denser sample for P2
        per_t = np.maximum(np.abs(vals).max(axis=0),
                           np.abs(traj.snapshots).max(axis=1))
    else:
        per_t = (grid.weights @ np.abs(vals) ** q) ** (1.0 / q)
    return _time_integrate(traj.times, per_t, p)


def max_norm_QT(traj, quad_order=4):
    """Max over snapshot times of the vertex/quadrature-point maximum."""
    return lp_lq_norm(traj, np.inf, np.inf, quad_order)


def w101_norm(traj, broken=True, quad_order=4):
    """Space-time L1 of the function plus its (broken) spatial gradient.

    For conforming elements the broken and global accumulation agree; the
    flag only switches the bookkeeping path used for cross-checks.
    """
    grid = quad_grid(traj.space, quad_order)
    Gx, Gy = grid.grads
    vals = np.abs(grid.V @ traj.snapshots.T)
    gx = Gx @ traj.snapshots.T
    gy = Gy @ traj.snapshots.T
    gmag = np.hypot(gx, gy)
    if broken:
        per_t = grid.weights @ vals + grid.weights @ gmag
    else:
        per_t = grid.weights @ (vals + gmag)
    return _time_integrate(traj.times, per_t, 1)


def lp_lq_gradient_norm(traj, p, q, quad_order=4):
    """Bochner norm of |grad u| (broken gradients per element)."""
    _check_exponent(p, "p")
    _check_exponent(q, "q")
    grid = quad_grid(traj.space, quad_order)
    Gx, Gy = grid.grads
    gmag = np.hypot(Gx @ traj.snapshots.T, Gy @ traj.snapshots.T)
    if q == np.inf:
        per_t = gmag.max(axis=0)
    else:
        per_t = (grid.weights @ gmag ** q) ** (1.0 / q)
    return _time_integrate(traj.times, per_t, p)
