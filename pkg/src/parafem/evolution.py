"""Discrete parabolic flow: exact spectral semigroup and theta time stepping."""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .assembly import assemble_load, assemble_div_load
from .fespace import FeFunction, load_fefunction, save_fefunction
from .linsolve import SpdSolver
from .mesh import mesh_checksum


class BackendError(Exception):
    """Backend configuration does not fit the problem (e.g. dof cap)."""


@dataclass
class EvolutionBackend:
    """How to realize the flow: exact eigenexpansion or theta stepping.

    theta >= 1/2 keeps the stepping unconditionally stable; the spectral
    backend is restricted to dense_limit dofs.
    """
    kind: str = "spectral"
    theta: float = 0.5
    dt: float | None = None
    dense_limit: int = 3000
    _spectral_cache: dict = field(default_factory=dict, repr=False,
                                  compare=False)

    def __post_init__(self):
        if self.kind not in ("spectral", "theta_scheme"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")
        if self.kind == "theta_scheme" and (self.dt is None or self.dt <= 0):
            raise ValueError("theta_scheme requires a positive dt")

    def spectral_basis(self, M, K):
        key = id(M), id(K)
        hit = self._spectral_cache.get(key)
        if hit is not None and hit[0] is M and hit[1] is K:
            return hit[2]
        basis = SpectralBasis(M, K, self.dense_limit)
        self._spectral_cache[key] = (M, K, basis)
        return basis


class SpectralBasis:
    """Full generalized eigendecomposition K psi = lambda M psi.

    Modes are M-orthonormal, eigenvalues ascending.
    """

    def __init__(self, M, K, dense_limit=3000):
        n = M.shape[0]
        if n > dense_limit:
            raise BackendError(
                f"spectral backend capped at {dense_limit} dofs, got {n}")
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
        lams, modes = la.eigh(Kd, Md)
        self.M = M
        self.K = K
        self.lams = lams
        self.modes = modes

    def project(self, V):
        """M-inner products of V against all modes."""
        return self.modes.T @ (self.M @ V)

    def evolve(self, V, t, derivative=0):
        """exp(-t lambda) expansion of V; derivative applies (-lambda)^k."""
        C = self.project(V)
        decay = np.exp(-self.lams * t)
        if derivative:
            decay = decay * (-self.lams) ** derivative
        if C.ndim == 1:
            return self.modes @ (decay * C)
        return self.modes @ (decay[:, None] * C)


def spectral_decompose(M, K, dense_limit=3000):
    """Eigenpairs (lams, modes) of the generalized problem, M-orthonormal."""
    basis = SpectralBasis(M, K, dense_limit)
    return basis.lams, basis.modes


class ThetaStepper:
    """One factorization of (M + theta dt K), reused across all steps."""

    def __init__(self, M, K, theta, dt, dense_limit=3000):
        self.M = M
        self.K = K
        self.theta = theta
        self.dt = dt
        self.solver = SpdSolver((M + theta * dt * K).tocsc(), dense_limit)
        self.B = (M - (1.0 - theta) * dt * K).tocsr()

    def step(self, U, b_old=None, b_new=None):
        rhs = self.B @ U
        if b_old is not None:
            rhs = rhs + self.dt * ((1.0 - self.theta) * b_old
                                   + self.theta * b_new)
        return self.solver.solve(rhs)


def semigroup_apply(backend, M, K, v, t):
    """Apply the homogeneous flow at time t to the function v."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    space = v.space
    if t == 0:
        return v.copy()
    if backend.kind == "spectral":
        basis = backend.spectral_basis(M, K)
        return FeFunction(space, basis.evolve(v.coeffs, t))
    nfull = int(np.floor(t / backend.dt + 1e-12))
    rem = t - nfull * backend.dt
    u = v.coeffs.copy()
    if nfull > 0:
        stepper = ThetaStepper(M, K, backend.theta, backend.dt)
        for _ in range(nfull):
            u = stepper.step(u)
    if rem > 1e-14 * max(t, 1.0):
        u = ThetaStepper(M, K, backend.theta, rem).step(u)
    return FeFunction(space, u)


def apply_Ah(M, K, v, mass_solver=None):
    """Discrete elliptic operator: solves M w = K v."""
    solver = mass_solver if mass_solver is not None else SpdSolver(M)
    return FeFunction(v.space, solver.solve(K @ v.coeffs))


class Trajectory:
    """Snapshots of a finite element function on an increasing time grid."""

    def __init__(self, space, times, snapshots):
        times = np.asarray(times, dtype=float)
        snapshots = np.asarray(snapshots, dtype=float)
        if times.ndim != 1 or len(times) == 0 or times[0] != 0.0:
            raise ValueError("times must start at 0")
        if (np.diff(times) <= 0).any():
            raise ValueError("times must be strictly increasing")
        if snapshots.shape != (len(times), space.num_dofs):
            raise ValueError("snapshot array has wrong shape")
        if not np.isfinite(snapshots).all():
            raise ValueError("trajectory contains non-finite values")
        self.space = space
        self.times = times
        self.snapshots = snapshots

    def __len__(self):
        return len(self.times)

    def at(self, i):
        return FeFunction(self.space, self.snapshots[i])

    def final(self):
        return self.at(len(self.times) - 1)


def _step_indices(times, dt):
    steps = np.rint(times / dt).astype(int)
    if np.abs(times - steps * dt).max() > 1e-9 * max(dt, 1e-30):
        raise ValueError("every requested time must sit on the stepping grid")
    return steps


def solve_inhomogeneous(backend, M, K, u0h, f, g, times, quad_order=2):
    """Theta-scheme solve of M u' + K u = (f, phi) + (g, grad phi).

    f(points, t) and g(points, t) are evaluated at quadrature points of the
    trajectory's space; either may be None. Snapshots are recorded exactly at
    the requested times, which must lie on the stepping grid.
    """
    if backend.kind == "spectral":
        raise BackendError("inhomogeneous solves use the theta_scheme backend")
    space = u0h.space
    times = np.asarray(times, dtype=float)
    steps = _step_indices(times, backend.dt)
    record = {int(s): i for i, s in enumerate(steps)}
    nsteps = int(steps.max())

    def load_at(t):
        b = None
        if f is not None:
            b = assemble_load(space, lambda pts: f(pts, t), quad_order)
        if g is not None:
            bg = assemble_div_load(space, lambda pts: g(pts, t), quad_order)
            b = bg if b is None else b + bg
        return b

    stepper = ThetaStepper(M, K, backend.theta, backend.dt)
    u = u0h.coeffs.copy()
    out = np.empty((len(times), space.num_dofs))
    if 0 in record:
        out[record[0]] = u
    b_old = load_at(0.0) if (f is not None or g is not None) else None
    for k in range(nsteps):
        t_new = (k + 1) * backend.dt
        b_new = load_at(t_new) if b_old is not None else None
        u = stepper.step(u, b_old, b_new)
        b_old = b_new
        if k + 1 in record:
            out[record[k + 1]] = u
    return Trajectory(space, times, out)


def homogeneous_trajectory(backend, M, K, u0h, times):
    """Trajectory of the homogeneous flow recorded at the given times."""
    space = u0h.space
    times = np.asarray(times, dtype=float)
    if backend.kind == "spectral":
        basis = backend.spectral_basis(M, K)
        C = basis.project(u0h.coeffs)
        out = np.empty((len(times), space.num_dofs))
        for i, t in enumerate(times):
            out[i] = basis.modes @ (np.exp(-basis.lams * t) * C)
        return Trajectory(space, times, out)
    steps = _step_indices(times, backend.dt)
    record = {int(s): i for i, s in enumerate(steps)}
    stepper = ThetaStepper(M, K, backend.theta, backend.dt)
    u = u0h.coeffs.copy()
    out = np.empty((len(times), space.num_dofs))
    if 0 in record:
        out[record[0]] = u
    for k in range(int(steps.max())):
        u = stepper.step(u)
        if k + 1 in record:
            out[record[k + 1]] = u
    return Trajectory(space, times, out)


def theta_trajectory(M, K, theta, u0_coeffs, times, substeps=1,
                     dense_limit=3000):
    """Homogeneous theta stepping that lands exactly on the recorded times.

    Each interval [t_i, t_i+1] is covered by `substeps[i]` uniform steps
    (scalar substeps broadcast). Steppers are shared between intervals with
    the same step size, so a two-phase grid costs two factorizations.
    """
    times = np.asarray(times, dtype=float)
    substeps = np.broadcast_to(np.asarray(substeps, dtype=int),
                               (len(times) - 1,))
    U = np.array(u0_coeffs, dtype=float)
    out = np.empty((len(times),) + U.shape)
    out[0] = U
    steppers = {}
    for i in range(len(times) - 1):
        dt = (times[i + 1] - times[i]) / substeps[i]
        key = round(dt, 15)
        if key not in steppers:
            steppers[key] = ThetaStepper(M, K, theta, dt, dense_limit)
        st = steppers[key]
        for _ in range(substeps[i]):
            U = st.step(U)
        out[i + 1] = U
    return out


# -- persistence ---------------------------------------------------------------

def save_trajectory(traj, directory, backend=None, thin=1):
    """Write manifest + one snapshot file per stored time (thinned)."""
    os.makedirs(directory, exist_ok=True)
    idx = list(range(0, len(traj), max(1, int(thin))))
    if idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    manifest = {
        "mesh_checksum": mesh_checksum(traj.space.mesh),
        "degree": traj.space.degree,
        "backend": None if backend is None else {
            "kind": backend.kind, "theta": backend.theta, "dt": backend.dt},
        "dt": None if backend is None else backend.dt,
        "thin": int(thin),
        "times": [repr(float(traj.times[i])) for i in idx],
        "files": [f"snapshot_{i:06d}.txt" for i in idx],
    }
    for i in idx:
        save_fefunction(traj.at(i), os.path.join(directory, f"snapshot_{i:06d}.txt"))
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_trajectory(space, directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest["mesh_checksum"] != mesh_checksum(space.mesh):
        raise ValueError("trajectory was stored for a different mesh")
    times = np.array([float(t) for t in manifest["times"]])
    snaps = np.empty((len(times), space.num_dofs))
    for i, name in enumerate(manifest["files"]):
        snaps[i] = load_fefunction(space, os.path.join(directory, name)).coeffs
    return Trajectory(space, times, snaps)
