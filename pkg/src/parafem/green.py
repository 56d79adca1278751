"""Discrete and reference Green functions with their space-time diagnostics.

A discrete Green record evolves the projected point mass on the working mesh;
a reference record evolves the same initial mass on a refinement and stands in
for the exact flow. Everything downstream (difference functionals, dyadic
annulus sums, truncated-kernel row sums) consumes lazily sampled space-time
fields on the fine quadrature grid so that long trajectories never have to be
materialized pointwise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_mass, assemble_stiffness
from .evolution import Trajectory, homogeneous_trajectory, theta_trajectory
from .fespace import FeFunction, build_space, eval_matrix, grad_matrices, \
    quad_grid, quadrature, ref_values
from .mesh import refine_uniform
from .norms import log_factor
from .projections import mass_solver, ph_delta, regularized_delta


class MeshTooCoarse(Exception):
    """The dyadic decomposition needs C_star * h < 1/4."""


class GridMismatch(Exception):
    """Two records do not share source, time grid, or mesh lineage."""


@dataclass
class GreenRecord:
    """Kernel trajectory tagged with its source point."""
    source: np.ndarray
    trajectory: Trajectory
    role: str  # "discrete" or "reference"

    @property
    def space(self):
        return self.trajectory.space

    @property
    def times(self):
        return self.trajectory.times


def green_times(dt, T=1.0, t_end=None, dt_tail=1.0 / 64.0):
    """Shared recording grid: uniform dt on [0, T], coarser uniform tail.

    The tail past T only matters for infinite-time integrals; all fields
    decay exponentially there.
    """
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-12 * T:
        raise ValueError("T must be a multiple of dt")
    times = dt * np.arange(n + 1)
    if t_end is not None and t_end > T:
        m = int(math.ceil((t_end - T) / dt_tail))
        times = np.concatenate([times, T + dt_tail * np.arange(1, m + 1)])
    return times


def _tail_substeps(times, dt, base, tail):
    """Per-interval substep counts: `base` on the uniform part, `tail` beyond."""
    dts = np.diff(np.asarray(times, dtype=float))
    sub = np.full(len(dts), base, dtype=int)
    sub[dts > 1.5 * dt] = tail
    return sub


def discrete_green(space, coeff, x0, backend, times):
    """Kernel of the discrete flow: homogeneous evolution of ph_delta(x0)."""
    M = assemble_mass(space)
    K = assemble_stiffness(space, coeff)
    u0 = ph_delta(space, x0)
    if backend.kind == "spectral":
        traj = homogeneous_trajectory(backend, M, K, u0, times)
    else:
        snaps = theta_trajectory(M, K, backend.theta, u0.coeffs, times,
                                 _tail_substeps(times, backend.dt, 1, 1))
        traj = Trajectory(space, times, snaps)
    return GreenRecord(np.asarray(x0, dtype=float), traj, "discrete")


def _fine_delta_projection(delta, fine_space, depth):
    """L2 projection of a coarse-element delta onto the refined space."""
    children = np.arange(delta.element * 4 ** depth,
                         (delta.element + 1) * 4 ** depth)
    rule = quadrature(4)
    mesh = fine_space.mesh
    lam = rule.points
    p = mesh.vertices[mesh.triangles[children]]
    pts = np.einsum("qi,tij->tqj", lam, p).reshape(-1, 2)
    w = (np.repeat(mesh.areas[children], len(lam))
         * np.tile(rule.weights, len(children)))
    tris = np.repeat(children, len(lam))
    bary = np.tile(lam, (len(children), 1))
    V = eval_matrix(fine_space, pts, tris, bary)

    cspace = delta.space
    cb = _barycentric_batch(cspace, np.full(len(pts), delta.element), pts)
    dvals = ref_values(cspace.degree, cb) @ delta.local_coeffs
    b = V.T @ (w * dvals)
    return FeFunction(fine_space, mass_solver(fine_space).solve(b))


def reference_green(coarse_space, fine_space, coeff, x0, backend, times,
                    substeps=None):
    """Surrogate for the exact kernel: evolve the coarse delta on a refinement.

    The refined evolution uses dt / rho^2 where rho is the mesh-size ratio,
    realized as `substeps` theta steps between recorded times.
    """
    depth = fine_space.mesh.refinement_depth_from(coarse_space.mesh)
    if depth is None:
        raise GridMismatch("fine space is not a refinement of the coarse space")
    rho = 2 ** depth
    delta = regularized_delta(coarse_space, x0)
    u0 = _fine_delta_projection(delta, fine_space, depth)
    M = assemble_mass(fine_space)
    K = assemble_stiffness(fine_space, coeff)
    if backend.kind == "spectral":
        traj = homogeneous_trajectory(backend, M, K, u0, times)
    else:
        sub = substeps if substeps is not None else \
            _tail_substeps(times, backend.dt, rho ** 2, max(2, rho))
        snaps = theta_trajectory(M, K, backend.theta, u0.coeffs, times, sub)
        traj = Trajectory(fine_space, times, snaps)
    return GreenRecord(np.asarray(x0, dtype=float), traj, "reference")


# -- cross-space sampling ------------------------------------------------------

def _barycentric_batch(space, tris, points):
    p0 = space.mesh.vertices[space.mesh.triangles[tris, 0]]
    l = np.einsum("mjk,mk->mj", space.inv_jac[tris], points - p0)
    return np.column_stack([1.0 - l.sum(axis=1), l])


class CrossGrid:
    """Fine quadrature points with evaluation operators for both spaces.

    Relies on the refinement convention that children of parent t occupy
    slots 4t..4t+3, so locating coarse elements is integer division.
    """

    def __init__(self, coarse_space, fine_space, order=2):
        depth = fine_space.mesh.refinement_depth_from(coarse_space.mesh)
        if depth is None:
            raise GridMismatch("spaces are not related by uniform refinement")
        qg = quad_grid(fine_space, order)
        self.coarse_space = coarse_space
        self.fine_space = fine_space
        self.points = qg.points
        self.weights = qg.weights
        self.V_fine = qg.V
        self.Gx_fine, self.Gy_fine = qg.grads
        ctris = qg.tri_of_point // 4 ** depth
        cbary = _barycentric_batch(coarse_space, ctris, qg.points)
        self.V_coarse = eval_matrix(coarse_space, qg.points, ctris, cbary)
        self.Gx_coarse, self.Gy_coarse = grad_matrices(
            coarse_space, qg.points, ctris, cbary)


def cross_grid(coarse_space, fine_space, order=2):
    key = ("cross_grid", order)
    for stored, grid in fine_space._cache.get(key, ()):
        if stored is coarse_space:
            return grid
    grid = CrossGrid(coarse_space, fine_space, order)
    fine_space._cache.setdefault(key, []).append((coarse_space, grid))
    return grid


class DifferenceSamples:
    """Lazy samples of (discrete - reference) on the fine quadrature grid."""

    def __init__(self, gh, gref, order=2):
        if not np.allclose(gh.source, gref.source):
            raise GridMismatch("records have different source points")
        if len(gh.times) != len(gref.times) or \
                not np.allclose(gh.times, gref.times):
            raise GridMismatch("records have different time grids")
        self.grid = cross_grid(gh.space, gref.space, order)
        self.gh = gh
        self.gref = gref
        self.times = gh.times
        self.points = self.grid.points
        self.weights = self.grid.weights
        self.x0 = gh.source
        self.dist = np.hypot(self.points[:, 0] - self.x0[0],
                             self.points[:, 1] - self.x0[1])

    def values(self, k):
        return (self.grid.V_coarse @ self.gh.trajectory.snapshots[k]
                - self.grid.V_fine @ self.gref.trajectory.snapshots[k])

    def grads(self, k):
        uh = self.gh.trajectory.snapshots[k]
        ur = self.gref.trajectory.snapshots[k]
        return (self.grid.Gx_coarse @ uh - self.grid.Gx_fine @ ur,
                self.grid.Gy_coarse @ uh - self.grid.Gy_fine @ ur)

    def discrete_values(self, k):
        return self.grid.V_coarse @ self.gh.trajectory.snapshots[k]

    def reference_values(self, k):
        return self.grid.V_fine @ self.gref.trajectory.snapshots[k]

    def reference_grads(self, k):
        ur = self.gref.trajectory.snapshots[k]
        return self.grid.Gx_fine @ ur, self.grid.Gy_fine @ ur


class ArraySamples:
    """Explicit space-time samples, mostly for synthetic checks."""

    def __init__(self, times, points, weights, values, grads=None, x0=None):
        self.times = np.asarray(times, dtype=float)
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self._values = np.asarray(values, dtype=float)
        self._grads = grads
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        if self.x0 is not None:
            self.dist = np.hypot(self.points[:, 0] - self.x0[0],
                                 self.points[:, 1] - self.x0[1])

    def values(self, k):
        return self._values[k]

    def grads(self, k):
        if self._grads is None:
            z = np.zeros(len(self.points))
            return z, z
        return self._grads[k][..., 0], self._grads[k][..., 1]


def difference_F(gh, gref, order=2):
    """Sampled difference field between a discrete and a reference record."""
    return DifferenceSamples(gh, gref, order)


# -- time differencing helpers -------------------------------------------------

def _restrict_uniform(times, T):
    """Indices of the leading uniform-in-time block up to T."""
    idx = np.flatnonzero(times <= T + 1e-12)
    if len(idx) < 3:
        raise ValueError("need at least 3 snapshots up to T")
    tt = times[idx]
    dts = np.diff(tt)
    if np.abs(dts - dts[0]).max() > 1e-9 * dts[0]:
        raise ValueError("snapshots up to T must be uniformly spaced")
    return idx, float(dts[0])


def _fd_weights_first(h1, h2):
    return (-h2 / (h1 * (h1 + h2)),
            (h2 - h1) / (h1 * h2),
            h1 / (h2 * (h1 + h2)))


def _fd_weights_second(h1, h2):
    return (2.0 / (h1 * (h1 + h2)),
            -2.0 / (h1 * h2),
            2.0 / (h2 * (h1 + h2)))


def difference_functionals(F, h, T=1.0):
    """Space-time L1 functionals of a sampled difference field.

    Returns the L1 norms of the first time derivative and the t-weighted
    second derivative, the L1(L1)+gradient norm, and the same norm scaled by
    1/(h ln(2+1/h)). Time derivatives are central differences (one-sided at
    the ends); the trapezoid rule weights the half-intervals at the ends.
    """
    idx, dt = _restrict_uniform(F.times, T)
    n = len(idx)
    w = F.weights

    dt_l1 = 0.0
    tdtt_l1 = 0.0
    f_l1 = 0.0
    w101 = 0.0
    f0_l1 = None

    prev = cur = None
    nxt = F.values(idx[0])
    for j in range(n):
        prev, cur = cur, nxt
        nxt = F.values(idx[j + 1]) if j + 1 < n else None
        t = F.times[idx[j]]
        wt = dt if 0 < j < n - 1 else 0.5 * dt

        if j == 0:
            dF = (nxt - cur) / dt
            f0_l1 = float(w @ np.abs(cur))
        elif j == n - 1:
            dF = (cur - prev) / dt
        else:
            dF = (nxt - prev) / (2.0 * dt)
        dt_l1 += wt * float(w @ np.abs(dF))

        if 0 < j < n - 1:
            ddF = (nxt - 2.0 * cur + prev) / dt ** 2
            tdtt_l1 += dt * t * float(w @ np.abs(ddF))

        gx, gy = F.grads(idx[j])
        fl1 = float(w @ np.abs(cur))
        f_l1 += wt * fl1
        w101 += wt * (fl1 + float(w @ np.hypot(gx, gy)))

    return {
        "dtF_L1": dt_l1,
        "t_dttF_L1": tdtt_l1,
        "F_L1": f_l1,
        "F0_L1": f0_l1,
        "W101": w101,
        "scaled_W101": w101 / (h * log_factor(h)),
    }


# -- dyadic decomposition --------------------------------------------------------

@dataclass
class DyadicDecomposition:
    """Parabolic annuli of scales d_j = 2^-j around a source point.

    Points with max(|x-x0|, sqrt(t)) below the innermost scale d_{J_star}
    form the innermost set (code -1); scales in [d_j, 2 d_j) map to annulus
    j for 1 <= j <= J_star; everything farther is the remainder annulus 0.
    """
    x0: np.ndarray
    h: float
    C_star: float
    T: float
    J_star: int = field(init=False)

    def __post_init__(self):
        if self.C_star * self.h >= 0.25:
            raise MeshTooCoarse(
                f"C_star*h = {self.C_star * self.h:.4g} >= 1/4; refine the "
                "mesh or lower C_star")
        self.J_star = int(math.floor(
            math.log2(1.0 / (self.C_star * self.h)) + 1e-12))

    def d(self, j):
        return 2.0 ** (-j)

    @property
    def d_star(self):
        return self.d(self.J_star)

    def mu(self, j):
        return 1.0 / (self.h * log_factor(self.h)) + 1.0 / self.d(j)

    def classify(self, dist, t):
        """Annulus codes (-1 innermost, 0 remainder, 1..J_star proper)."""
        rho = np.maximum(np.asarray(dist, dtype=float), math.sqrt(max(t, 0.0)))
        codes = np.full(rho.shape, -1, dtype=np.int64)
        out = rho > self.d_star
        j = np.ceil(-np.log2(rho[out]) - 1e-12).astype(np.int64)
        codes[out] = np.where(j < 1, 0, np.minimum(j, self.J_star))
        return codes

    def classify_point(self, x, t):
        return int(self.classify(
            np.array([np.hypot(x[0] - self.x0[0], x[1] - self.x0[1])]), t)[0])


def dyadic_decomposition(x0, h, C_star=16.0, T=1.0):
    return DyadicDecomposition(np.asarray(x0, dtype=float), float(h),
                               float(C_star), float(T))


def annulus_weighted_sums(F, decomp, T=None):
    """Per-annulus weighted space-time L2 sums and their scale-weighted total.

    K_j combines the first time derivative, d_j^2 times the second, and
    mu_j times the H1-type norm of the field over annulus j; the total
    weights each annulus by d_j^2 (dimension two) and excludes the innermost
    set, whose K value is still reported.
    """
    T = decomp.T if T is None else T
    idx, dt = _restrict_uniform(F.times, T)
    n = len(idx)
    w = F.weights
    nj = decomp.J_star + 2          # slot 0 = innermost, slot j+1 = annulus j
    S_dt = np.zeros(nj)
    S_dtt = np.zeros(nj)
    S_f1 = np.zeros(nj)
    seen = np.zeros(nj, dtype=bool)

    prev = cur = None
    nxt = F.values(idx[0])
    for j in range(n):
        prev, cur = cur, nxt
        nxt = F.values(idx[j + 1]) if j + 1 < n else None
        t = F.times[idx[j]]
        wt = dt if 0 < j < n - 1 else 0.5 * dt
        codes = decomp.classify(F.dist, t) + 1
        seen[np.unique(codes)] = True

        if j == 0:
            dF = (nxt - cur) / dt
        elif j == n - 1:
            dF = (cur - prev) / dt
        else:
            dF = (nxt - prev) / (2.0 * dt)
        np.add.at(S_dt, codes, wt * w * dF ** 2)

        if 0 < j < n - 1:
            ddF = (nxt - 2.0 * cur + prev) / dt ** 2
            np.add.at(S_dtt, codes, dt * w * ddF ** 2)

        gx, gy = F.grads(idx[j])
        np.add.at(S_f1, codes, wt * w * (cur ** 2 + gx ** 2 + gy ** 2))

    K = np.zeros(nj)
    for slot in range(nj):
        jj = slot - 1
        dj = decomp.d_star if jj < 0 else decomp.d(jj)
        mu = decomp.mu(decomp.J_star) if jj < 0 else decomp.mu(jj)
        K[slot] = (math.sqrt(S_dt[slot]) + dj ** 2 * math.sqrt(S_dtt[slot])
                   + mu * math.sqrt(S_f1[slot]))
    total = sum(decomp.d(jj) ** 2 * K[jj + 1]
                for jj in range(0, decomp.J_star + 1))
    return {
        "K_inner": K[0],
        "K_j": {jj: K[jj + 1] for jj in range(0, decomp.J_star + 1)},
        "weighted_total": total,
        "empty_annuli": [jj for jj in range(0, decomp.J_star + 1)
                         if not seen[jj + 1]],
    }


# -- truncated kernel and row sums ----------------------------------------------

def smoothstep(rho):
    """Cubic ramp: 0 below 1/2, 1 above 1, C^1 in between."""
    rho = np.asarray(rho, dtype=float)
    s = np.clip((rho - 0.5) * 2.0, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass
class TruncatedKernel:
    """Space-time cutoff vanishing inside the parabolic ball of radius eps/2."""
    epsilon: float

    def chi(self, dist, t):
        arg = (np.asarray(dist, dtype=float) ** 4 + t ** 2) / self.epsilon ** 4
        return smoothstep(arg)


class TruncatedSamples:
    """Reference kernel multiplied by the space-time cutoff."""

    def __init__(self, gref, epsilon, order=2):
        self.gref = gref
        self.kernel = TruncatedKernel(float(epsilon))
        qg = quad_grid(gref.space, order)
        self.times = gref.times
        self.points = qg.points
        self.weights = qg.weights
        self.V = qg.V
        self.x0 = gref.source
        self.dist = np.hypot(self.points[:, 0] - self.x0[0],
                             self.points[:, 1] - self.x0[1])

    def values(self, k):
        raw = self.V @ self.gref.trajectory.snapshots[k]
        return raw * self.kernel.chi(self.dist, self.times[k])

    def raw_values(self, k):
        return self.V @ self.gref.trajectory.snapshots[k]


def truncated_green(gref, epsilon, order=2):
    return TruncatedSamples(gref, epsilon, order)


def _tail_rate(times, gvals, fit_from, fallback_rate):
    """Exponential decay rate fitted on log(g) for t >= fit_from."""
    mask = (times >= fit_from) & (gvals > 0)
    if mask.sum() < 3:
        return fallback_rate
    t = times[mask]
    y = np.log(gvals[mask])
    slope = np.polyfit(t, y, 1)[0]
    rate = -slope
    if not np.isfinite(rate) or rate <= 0:
        return fallback_rate
    return rate


def schur_row(gh, gref, epsilon, tail_fit_from=2.0, fallback_rate=1.0):
    """Row sum of the kernel |d/dt (discrete - truncated reference)|.

    Integrates over the record's full time grid (nonuniform differences) and
    adds an analytic exponential tail beyond the last time.
    """
    F = DifferenceSamples(gh, gref)
    grid = F.grid
    kernel = TruncatedKernel(float(epsilon))
    times = F.times
    n = len(times)
    w = F.weights

    def sample(k):
        h_vals = grid.V_coarse @ gh.trajectory.snapshots[k]
        r_vals = grid.V_fine @ gref.trajectory.snapshots[k]
        return h_vals - r_vals * kernel.chi(F.dist, times[k])

    per_time = np.empty(n)
    prev = cur = None
    nxt = sample(0)
    for k in range(n):
        prev, cur = cur, nxt
        nxt = sample(k + 1) if k + 1 < n else None
        if k == 0:
            d = (nxt - cur) / (times[1] - times[0])
        elif k == n - 1:
            d = (cur - prev) / (times[-1] - times[-2])
        else:
            h1 = times[k] - times[k - 1]
            h2 = times[k + 1] - times[k]
            a, b, c = _fd_weights_first(h1, h2)
            d = a * prev + b * cur + c * nxt
        per_time[k] = w @ np.abs(d)

    wt = np.zeros(n)
    dts = np.diff(times)
    wt[:-1] += 0.5 * dts
    wt[1:] += 0.5 * dts
    integral = float(wt @ per_time)
    rate = _tail_rate(times, per_time, tail_fit_from, fallback_rate)
    tail = per_time[-1] / rate
    return integral + tail, rate


def schur_rowsums(space, coeff, sources, backend, times, epsilon, rho_ref=4,
                  tail_fit_from=2.0):
    """Kernel row sums for a set of sources, one reference pair per source."""
    if len(sources) < 1:
        raise ValueError("need at least one source")
    times = np.asarray(times, dtype=float)
    if times[-1] <= 1.0:
        raise ValueError("time grid must reach past T=1 for the tail")
    depth = int(round(math.log2(rho_ref)))
    if 2 ** depth != rho_ref:
        raise ValueError("rho_ref must be a power of 2")
    fine_space = space
    for _ in range(depth):
        fine_space = build_space(refine_uniform(fine_space.mesh), space.degree)
    out = []
    for x0 in sources:
        gh = discrete_green(space, coeff, x0, backend, times)
        gref = reference_green(space, fine_space, coeff, x0, backend, times)
        row, _ = schur_row(gh, gref, epsilon, tail_fit_from,
                           fallback_rate=coeff.c0 if coeff.c0 > 0 else 1.0)
        out.append(row)
    return np.array(out)


# -- persistence ------------------------------------------------------------------

def save_green_record(record, directory, backend=None, thin=1):
    """Trajectory layout plus a source annotation file."""
    import json
    import os

    from .evolution import save_trajectory
    save_trajectory(record.trajectory, directory, backend=backend, thin=thin)
    with open(os.path.join(directory, "source.json"), "w") as f:
        json.dump({"x0": [float(record.source[0]), float(record.source[1])],
                   "role": record.role}, f)


def load_green_record(space, directory):
    import json
    import os

    from .evolution import load_trajectory
    traj = load_trajectory(space, directory)
    with open(os.path.join(directory, "source.json")) as f:
        meta = json.load(f)
    return GreenRecord(np.asarray(meta["x0"], dtype=float), traj, meta["role"])


# -- reported diagnostics ---------------------------------------------------------

def gaussian_envelope(record, C, min_scale, floor_rel=1e-12, order=2):
    """Sup of |G| (sqrt(t)+r)^2 exp(r^2 / (C t)) outside the near field.

    Samples below floor_rel of the per-time maximum are ignored: far-field
    finite element values sit at rounding level and the exponential weight
    would amplify pure noise.
    """
    qg = quad_grid(record.space, order)
    x0 = record.source
    dist = np.hypot(qg.points[:, 0] - x0[0], qg.points[:, 1] - x0[1])
    best = -np.inf
    for k, t in enumerate(record.times):
        if t <= 0:
            continue
        vals = np.abs(qg.V @ record.trajectory.snapshots[k])
        scale = np.maximum(dist, math.sqrt(t))
        mask = (scale >= min_scale) & (vals >= floor_rel * vals.max())
        if not mask.any():
            continue
        logstat = (np.log(vals[mask])
                   + 2.0 * np.log(math.sqrt(t) + dist[mask])
                   + dist[mask] ** 2 / (C * t))
        best = max(best, float(logstat.max()))
    return math.exp(best) if np.isfinite(best) else 0.0


def annulus_gradient_sup(gref, decomp, p_list=(3.0, 4.0), T=None, order=2):
    """Sup over time of scaled spatial L^p norms of the reference gradient.

    Each annulus norm is scaled by d_j^(3 - 2/p); the maximum over the proper
    annuli is reported per exponent. Existence-style diagnostic: reported,
    never asserted.
    """
    T = decomp.T if T is None else T
    qg = quad_grid(gref.space, order)
    x0 = gref.source
    dist = np.hypot(qg.points[:, 0] - x0[0], qg.points[:, 1] - x0[1])
    Gx, Gy = qg.grads
    out = {p: np.zeros(decomp.J_star + 1) for p in p_list}
    for k, t in enumerate(gref.times):
        if t > T + 1e-12:
            break
        u = gref.trajectory.snapshots[k]
        gmag = np.hypot(Gx @ u, Gy @ u)
        codes = decomp.classify(dist, t)
        for jj in range(1, decomp.J_star + 1):
            m = codes == jj
            if not m.any():
                continue
            for p in p_list:
                val = (qg.weights[m] @ gmag[m] ** p) ** (1.0 / p)
                out[p][jj] = max(out[p][jj], val)
    return {p: {jj: out[p][jj] * decomp.d(jj) ** (3.0 - 2.0 / p)
                for jj in range(1, decomp.J_star + 1)}
            for p in p_list}
