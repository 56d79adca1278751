import math

import numpy as np
import pytest

from parafem import assembly as asm
from parafem import fespace as fs
from parafem import mesh as pm
from parafem import projections as prj
from parafem.linsolve import SolverError, SpdSolver


def cos_pair():
    pi = math.pi

    def w(pts):
        return np.cos(pi * pts[:, 0]) * np.cos(pi * pts[:, 1])

    def gw(pts):
        return np.column_stack([
            -pi * np.sin(pi * pts[:, 0]) * np.cos(pi * pts[:, 1]),
            -pi * np.cos(pi * pts[:, 0]) * np.sin(pi * pts[:, 1])])

    return w, gw


def test_l2_project_idempotent_on_space(space8, rng):
    f = fs.FeFunction(space8, rng.standard_normal(space8.num_dofs))
    proj = prj.l2_project(space8, lambda p: fs.eval_matrix(space8, p) @ f.coeffs)
    assert np.abs(proj.coeffs - f.coeffs).max() <= 1e-10


def test_l2_project_constant(space8):
    proj = prj.l2_project(space8, lambda p: np.ones(len(p)))
    assert np.abs(proj.coeffs - 1.0).max() <= 1e-10


def test_l2_project_dense_normal_equation_oracle():
    space = fs.build_space(pm.build_structured_square(2), 1)
    f = lambda p: p[:, 0] ** 2
    proj = prj.l2_project(space, f)
    M = asm.assemble_mass(space).toarray()
    b = asm.assemble_load(space, f, 4)
    oracle = np.linalg.solve(M, b)
    assert np.abs(proj.coeffs - oracle).max() <= 1e-11


def test_l2_projection_orthogonality_fine_quadrature(space8, rng):
    f = lambda p: np.sin(2.1 * p[:, 0]) + p[:, 1] ** 3
    proj = prj.l2_project(space8, f)
    grid = fs.quad_grid(space8, 6)
    resid_vals = f(grid.points) - grid.V @ proj.coeffs
    for _ in range(10):
        chi = rng.standard_normal(space8.num_dofs)
        inner = grid.weights @ (resid_vals * (grid.V @ chi))
        # tolerance dominated by the order-4 projection quadrature
        assert abs(inner) <= 5e-4 * np.abs(chi).max()


def test_ritz_constant_with_rough_coefficients(space8, kink_field):
    out = prj.ritz_project(space8, kink_field,
                           lambda p: np.ones(len(p)),
                           lambda p: np.zeros((len(p), 2)))
    assert np.abs(out.coeffs - 1.0).max() <= 1e-10


def test_ritz_affine_is_interpolant(space8, identity_field):
    w = lambda p: 1.0 + 2.0 * p[:, 0] - 0.5 * p[:, 1]
    gw = lambda p: np.tile([2.0, -0.5], (len(p), 1))
    out = prj.ritz_project(space8, identity_field, w, gw)
    interp = fs.interpolate_nodal(space8, w)
    assert np.abs(out.coeffs - interp.coeffs).max() <= 1e-10


def test_ritz_idempotent_on_space(space8, kink_field, rng):
    chi = fs.FeFunction(space8, rng.standard_normal(space8.num_dofs))
    out = prj.ritz_project(
        space8, kink_field,
        lambda p: fs.eval_matrix(space8, p) @ chi.coeffs,
        lambda p: np.column_stack([g @ chi.coeffs
                                   for g in fs.grad_matrices(space8, p)]))
    assert np.abs(out.coeffs - chi.coeffs).max() <= 1e-10


def test_ritz_h1_convergence_rate(kink_field):
    w, gw = cos_pair()
    errs, hs = [], []
    for n in (8, 16, 32, 64):
        space = fs.build_space(pm.build_structured_square(n), 1)
        out = prj.ritz_project(space, kink_field, w, gw)
        grid = fs.quad_grid(space, 4)
        Gx, Gy = grid.grads
        ex = Gx @ out.coeffs - gw(grid.points)[:, 0]
        ey = Gy @ out.coeffs - gw(grid.points)[:, 1]
        errs.append(math.sqrt(grid.weights @ (ex ** 2 + ey ** 2)))
        hs.append(space.mesh.h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 0.9 <= slope <= 1.1


def test_ritz_galerkin_orthogonality(space8, kink_field, rng):
    w, gw = cos_pair()
    out = prj.ritz_project(space8, kink_field, w, gw)
    K = asm.assemble_stiffness(space8, kink_field)
    b = asm.assemble_div_load(
        space8, lambda p: np.einsum("nij,nj->ni", kink_field.a(p), gw(p)), 2)
    b = b + asm.assemble_load(
        space8, lambda p: np.asarray(kink_field.c(p)) * w(p), 2)
    resid = K @ out.coeffs - b
    for _ in range(10):
        chi = rng.standard_normal(space8.num_dofs)
        assert abs(chi @ resid) <= 1e-9 * np.abs(chi).max()


def test_ritz_maxnorm_stability_anchor(kink_field):
    w, gw = cos_pair()
    # |w|_{W^{1,inf}} = 1 + pi for this reference function
    wnorm = 1.0 + math.pi
    ratios = []
    for n in (8, 16, 32):
        space = fs.build_space(pm.build_structured_square(n), 1)
        out = prj.ritz_project(space, kink_field, w, gw)
        ratios.append(np.abs(out.coeffs).max() / wnorm)
    assert max(ratios) / min(ratios) < 2.0


@pytest.mark.parametrize("degree", [1, 2])
def test_delta_reproduces_point_values(degree, rng):
    for n in (2, 3, 5):
        space = fs.build_space(pm.build_structured_square(n), degree)
        x0 = np.array([0.31, 0.47])
        delta = prj.regularized_delta(space, x0)
        for _ in range(20):
            chi = fs.FeFunction(space, rng.standard_normal(space.num_dofs))
            assert abs(delta.pair(chi) - chi.eval(x0)) <= 1e-11


def test_delta_unit_mass(space8):
    delta = prj.regularized_delta(space8, (0.52, 0.47))
    one = fs.constant(space8)
    assert abs(delta.pair(one) - 1.0) <= 1e-11


def test_delta_linf_scaling_across_refinements():
    # default placement: the centroid of the element nearest the anchor
    consts = []
    mesh = pm.build_structured_square(4)
    anchor = np.array([0.52, 0.47])
    for _ in range(4):
        space = fs.build_space(mesh, 1)
        cents = mesh.centroids()
        x0 = cents[np.argmin(np.hypot(*(cents - anchor).T))]
        delta = prj.regularized_delta(space, x0)
        consts.append(delta.linf_norm() * mesh.h ** 2)
        mesh = pm.refine_uniform(mesh)
    assert max(consts) / min(consts) < 2.0


def test_delta_load_vector_is_point_evaluation(space8):
    x0 = np.array([0.52, 0.47])
    delta = prj.regularized_delta(space8, x0)
    e = delta.load_vector()
    oracle = fs.eval_matrix(space8, x0[None, :]).toarray()[0]
    assert np.abs(e - oracle).max() <= 1e-14


def test_ph_delta_pairing(space8, rng):
    x0 = np.array([0.52, 0.47])
    pd = prj.ph_delta(space8, x0)
    M = asm.assemble_mass(space8)
    for _ in range(10):
        chi = fs.FeFunction(space8, rng.standard_normal(space8.num_dofs))
        assert abs(chi.coeffs @ (M @ pd.coeffs) - chi.eval(x0)) <= 1e-10


def test_ph_delta_mesh_symmetry():
    # the structured square is symmetric under (x, y) -> (y, x)
    space = fs.build_space(pm.build_structured_square(4), 1)
    pd = prj.ph_delta(space, (0.5, 0.5))
    coords = space.dof_coords
    mirrored = np.column_stack([coords[:, 1], coords[:, 0]])
    idx = [int(np.argmin(np.hypot(coords[:, 0] - q[0], coords[:, 1] - q[1])))
           for q in mirrored]
    assert np.abs(pd.coeffs - pd.coeffs[idx]).max() <= 1e-10


def test_ph_delta_exponential_decay():
    space = fs.build_space(pm.build_structured_square(16), 1)
    x0 = np.array([0.52, 0.47])
    pd = prj.ph_delta(space, x0)
    d = np.hypot(space.dof_coords[:, 0] - x0[0], space.dof_coords[:, 1] - x0[1])
    vals = np.abs(pd.coeffs)
    # peak scales like h^-2; far field decays by orders of magnitude
    assert vals.max() * space.mesh.h ** 2 > 0.1
    assert vals[d > 0.4].max() <= 1e-3 * vals.max()
    # fitted decay rate per mesh-size unit of distance is positive
    mask = (vals > 1e-13 * vals.max()) & (d > 0)
    rate_h = -np.polyfit(d[mask] / space.mesh.h, np.log(vals[mask]), 1)[0]
    assert rate_h > 0.3


def test_spd_solver_rejects_singular():
    import scipy.sparse as sp
    A = sp.csr_matrix(np.zeros((4, 4)))
    with pytest.raises(SolverError):
        SpdSolver(A).solve(np.ones(4))


def test_spd_solver_sparse_path(rng):
    import scipy.sparse as sp
    n = 50
    A = sp.diags([2.0] * n) + sp.random(n, n, density=0.05,
                                        random_state=np.random.RandomState(1))
    A = (A + A.T).tocsr()
    solver = SpdSolver(A, dense_limit=10)   # force the sparse LU path
    b = rng.standard_normal(n)
    x = solver.solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
