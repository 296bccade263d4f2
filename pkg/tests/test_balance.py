import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import special_ortho_group

from cmcglue import balance as B
from cmcglue import sphere_geom as sg
from cmcglue.config import constraint_projector, projector_basis, rotate_configuration
from cmcglue.errors import ClosureViolation, StepTooLarge, TanPole


def loop(n=2, N=8, tau=0.05):
    return B.build_example("delaunay_loop", n=n, N=N, tau=tau)


def eps_rate(ex):
    cfg = ex.config
    n = cfg.n
    eps, deps = B._neck_scale(n, cfg.alpha, ex.meta["tau"], B._c0(n, None))
    return (n - 1) * eps ** (n - 2) * deps


def symmetric_basis(ex):
    return projector_basis(constraint_projector(ex.config, ex.symmetry))


# ---------------------------------------------------------------- Killing fields

def test_killing_identity_frame():
    a = 0.3
    p = np.array([np.cos(a), np.sin(a), 0.0, 0.0])
    Y = B.killing_basis(p, np.eye(4))
    for t in range(1, 4):
        want = np.zeros(4)
        want[0] = p[t]
        want[t] -= p[0]
        np.testing.assert_allclose(Y[t - 1], want, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_killing_conjugation_and_tangency(seed, n):
    rng = np.random.default_rng(seed)
    dim = n + 2
    R = special_ortho_group.rvs(dim, random_state=rng)
    p = rng.normal(size=dim)
    p /= np.linalg.norm(p)
    Y = B.killing_basis(p, R)
    for t in range(1, dim):
        G = np.zeros((dim, dim))
        G[0, t], G[t, 0] = 1.0, -1.0
        np.testing.assert_allclose(Y[t - 1], R.T @ G @ R @ p, atol=1e-12)
    assert np.max(np.abs(Y @ p)) < 1e-12
    assert np.linalg.matrix_rank(Y) == dim - 1


# ---------------------------------------------------------------- balancing map

@pytest.mark.parametrize("n", [2, 3])
def test_loop_is_balanced(n):
    assert np.max(np.abs(B.approx_balancing(loop(n).config))) < 1e-13


def test_three_spheres_balanced():
    ex = B.build_example("delaunay_loop", n=2, N=3, tau=0.05)
    assert ex.config.size == 3
    assert np.max(np.abs(B.approx_balancing(ex.config))) < 1e-13


@pytest.mark.parametrize("n", [2, 3])
def test_single_displacement_prediction(n):
    ex = loop(n)
    cfg, t = ex.config, ex.config.tdim
    delta = 1e-3
    c = np.zeros(cfg.size * t)
    c[0] = delta
    b = B.approx_balancing(cfg.with_coords(c))
    a = eps_rate(ex)
    assert b[0, 0] == pytest.approx(2 * a * delta, rel=1e-2)
    # neighbours pick up -a*delta each; the mean cancels the second-order asymmetry
    assert 0.5 * (b[1, 0] + b[-1, 0]) == pytest.approx(-a * delta, rel=1e-2)


def test_balancing_scales_with_omega():
    cfg = loop(3).config
    rng = np.random.default_rng(4)
    moved = cfg.with_coords(1e-3 * rng.normal(size=cfg.size * cfg.tdim))
    np.testing.assert_allclose(B.approx_balancing(moved, omega=2.5),
                               2.5 * B.approx_balancing(moved), rtol=1e-14, atol=0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gauge_covariance(seed):
    rng = np.random.default_rng(seed)
    cfg = loop(2).config
    moved = cfg.with_coords(1e-3 * rng.normal(size=cfg.size * cfg.tdim))
    Q = special_ortho_group.rvs(cfg.dim, random_state=rng)
    b0 = np.linalg.norm(B.approx_balancing(moved))
    b1 = np.linalg.norm(B.approx_balancing(rotate_configuration(moved, Q)))
    assert abs(b1 - b0) < 1e-12


# ---------------------------------------------------------------- Jacobian

JAC_CASES = [("delaunay_loop", dict(n=2, N=8)), ("delaunay_loop", dict(n=3, N=12)),
             ("two_geodesics", dict(n=2, N=16)), ("frozen_theta", dict(n=2, N=24)),
             ("frozen_theta", dict(n=3, N=16))]


@pytest.mark.parametrize("kind,params", JAC_CASES)
def test_jacobian_matches_fd(kind, params):
    cfg = B.build_example(kind, **params).config
    J = B.balancing_jacobian(cfg)
    F = B.fd_jacobian(cfg, step=1e-5)
    assert np.max(np.abs(J - F)) / np.max(np.abs(F)) < 1e-5
    big = np.abs(F) > 1e-6 * np.max(np.abs(F))
    assert np.max(np.abs(J - F)[big] / np.abs(F)[big]) < 1e-5


@pytest.mark.parametrize("kind,params", JAC_CASES)
def test_jacobian_sparsity(kind, params):
    cfg = B.build_example(kind, **params).config
    J = B.balancing_jacobian(cfg)
    t = cfg.tdim
    adj = {(a, b) for a, b in cfg.edges} | {(b, a) for a, b in cfg.edges}
    for i in range(cfg.size):
        for j in range(cfg.size):
            if i != j and (i, j) not in adj:
                assert not np.any(J[i * t:(i + 1) * t, j * t:(j + 1) * t])


def test_loop_tangential_stencil():
    ex = loop(2)
    cfg, t = ex.config, ex.config.tdim
    J = B.balancing_jacobian(cfg)
    a = eps_rate(ex)
    N = cfg.size
    for k in range(N):
        row = k * t
        assert J[row, k * t] == pytest.approx(2 * a, rel=1e-12)
        assert J[row, ((k + 1) % N) * t] == pytest.approx(-a, rel=1e-12)
        assert J[row, ((k - 1) % N) * t] == pytest.approx(-a, rel=1e-12)


def test_jacobian_rejects_displaced_input():
    cfg = loop(2).config
    c = np.zeros(cfg.size * cfg.tdim)
    c[0] = 1e-4
    with pytest.raises(ValueError):
        B.balancing_jacobian(cfg.with_coords(c))


def test_tan_pole():
    cfg = B.build_example("delaunay_loop", n=2, N=4, tau=0.05).config
    with pytest.raises(TanPole):
        B.balancing_jacobian(cfg)


def test_jacobian_scales_with_omega_and_kernel_unchanged():
    cfg = loop(2).config
    J1, J3 = B.balancing_jacobian(cfg), B.balancing_jacobian(cfg, omega=3.0)
    np.testing.assert_allclose(J3, 3.0 * J1, rtol=1e-14, atol=0)
    k1, k3 = B.rank_kernel(J1), B.rank_kernel(J3)
    assert k1.rank == k3.rank
    assert B.principal_angle_residual(k1.kernel, k3.kernel) < 1e-8


# ---------------------------------------------------------------- rotations and kernels

def induced_rank(cfg):
    cols = []
    for A in B._so_basis(cfg.dim):
        v = np.array([A @ p - p * (p @ A @ p) for p in cfg.base_points])
        cols.append(cfg.sigmas_to_coords(v))
    return np.linalg.matrix_rank(np.column_stack(cols), 1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_rotation_fields_trivial_group(n):
    cfg = loop(n).config
    Q = B.rotation_induced_fields(cfg)
    assert Q.shape[1] == induced_rank(cfg)
    # so(n+2) minus the stabiliser so(n) of the equator plane
    assert Q.shape[1] == (n + 2) * (n + 1) // 2 - n * (n - 1) // 2
    np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-12)


def test_loop_rotation_fields_contain_constant_tangential():
    cfg = loop(2).config
    Q = B.rotation_induced_fields(cfg)
    u = np.zeros((cfg.size, cfg.tdim))
    u[:, 0] = 1.0
    u = u.ravel() / np.linalg.norm(u)
    assert np.linalg.norm(u - Q @ (Q.T @ u)) < 1e-12


@pytest.mark.parametrize("kind,params", JAC_CASES)
def test_rotation_fields_in_kernel(kind, params):
    ex = B.build_example(kind, **params)
    J = B.balancing_jacobian(ex.config)
    Q = B.rotation_induced_fields(ex.config)
    rep = B.rank_kernel(J, rot_fields=Q)
    assert np.all(rep.containment < 1e-9)


@pytest.mark.parametrize("kind,params", JAC_CASES[:3])
def test_rotation_path_keeps_balance(kind, params):
    # displace every sphere onto its rotated centre, frames held fixed
    cfg = B.build_example(kind, **params).config
    for A in B._so_basis(cfg.dim):
        for s in (1e-3, 1e-2):
            R = expm(s * A)
            sig = np.array([sg.log_point(p, R @ p) for p in cfg.base_points])
            assert np.max(np.abs(B.approx_balancing(cfg.with_sigmas(sig)))) < 1e-13


def test_project_out_cokernel():
    rng = np.random.default_rng(1)
    J = rng.normal(size=(10, 10))
    np.testing.assert_array_equal(B.project_out_cokernel(J, np.zeros((10, 0))), J)
    Q, _ = np.linalg.qr(rng.normal(size=(10, 3)))
    P = B.project_out_cokernel(J, Q)
    assert np.linalg.norm(Q.T @ P) < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_loop_full_rank_modulo_rotations(n):
    cfg = loop(n).config
    J = B.balancing_jacobian(cfg)
    Q = B.rotation_induced_fields(cfg)
    u, s, _ = np.linalg.svd(np.eye(J.shape[0]) - Q @ Q.T)
    C = u[:, s > 0.5]
    Jc = C.T @ B.project_out_cokernel(J, Q) @ C
    sv = np.linalg.svd(Jc, compute_uv=False)
    assert sv[-1] > 1e-6 * sv[0]


def test_rank_kernel_identity():
    rep = B.rank_kernel(np.eye(7))
    assert rep.rank == 7 and rep.kernel_dim == 0
    assert np.all(np.diff(rep.singular_values) <= 0)


@pytest.mark.parametrize("n,N", [(2, 8), (3, 8), (2, 12)])
def test_loop_kernel_equals_recursion_oracle(n, N):
    ex = loop(n, N)
    cfg = ex.config
    J = B.balancing_jacobian(cfg)
    rep = B.rank_kernel(J, rot_fields=B.rotation_induced_fields(cfg))
    oracle = B.loop_recursion_kernel(N, n, ex.meta["step"])
    assert rep.kernel_dim == oracle.shape[1] == 2 * n + 1
    assert B.principal_angle_residual(rep.kernel, oracle) < 1e-8
    assert np.max(np.linalg.norm(J @ oracle, axis=0)) / rep.singular_values[0] < 1e-9
    assert B.principal_angle_residual(rep.kernel, rep.rot_basis) < 1e-8


def test_recursion_oracle_transverse_solutions():
    N, n, step = 8, 2, 2 * np.pi / 8
    K = B.loop_recursion_kernel(N, n, step)
    k = np.arange(N)
    for phase in (0.0, 0.7):
        v = np.zeros((N, n + 1))
        v[:, 1] = np.sin(step * (k + phase))
        v = v.ravel()
        assert np.linalg.norm(v - K @ np.linalg.lstsq(K, v, rcond=None)[0]) < 1e-10


# ---------------------------------------------------------------- examples

def restricted_kernel(ex):
    U = symmetric_basis(ex)
    Jr = B.restricted_jacobian(B.balancing_jacobian(ex.config), U)
    return B.rank_kernel(Jr), U


def test_build_loop_cycle():
    ex = B.build_example("delaunay_loop", n=2, N=8, m=1)
    cfg = ex.config
    assert cfg.size == 8
    deg = [len(cfg.neighbors(i)) for i in range(cfg.size)]
    assert deg == [2] * 8 and len(cfg.edges) == 8


@pytest.mark.parametrize("N", [16, 24])
def test_two_geodesics_kernel_one(N):
    rep, U = restricted_kernel(B.build_example("two_geodesics", n=2, N=N, theta=np.pi / 3))
    assert U.shape[1] == 2 * (N // 4 - 1) + 1
    assert rep.kernel_dim == 1


def test_two_geodesics_right_angle_extra_symmetry():
    plain, _ = restricted_kernel(B.build_example("two_geodesics", n=2, N=16, theta=np.pi / 2))
    extra, _ = restricted_kernel(B.build_example("two_geodesics", n=2, N=16, theta=np.pi / 2,
                                                 extra_symmetry=True))
    assert plain.kernel_dim == 1
    assert extra.kernel_dim == 0


def test_two_geodesics_no_symmetric_rotations():
    ex = B.build_example("two_geodesics", n=2, N=16)
    assert B.rotation_induced_fields(ex.config, ex.symmetry).shape[1] == 0


@pytest.mark.parametrize("n,N", [(2, 16), (2, 24), (3, 16)])
def test_frozen_theta_invertible(n, N):
    rep, _ = restricted_kernel(B.build_example("frozen_theta", n=n, N=N, k0=2))
    assert rep.kernel_dim == 0
    assert rep.singular_values[-1] > 1e-4 * rep.singular_values[0]


def test_frozen_theta_junction_parameters():
    ex = B.build_example("frozen_theta", n=2, N=24, k0=2)
    cfg, t = ex.config, ex.config.tdim
    U = symmetric_basis(ex)
    seen = {"axis": 0, "pole": 0, "crossing": 0}
    for i, p in enumerate(cfg.base_points):
        blk = U[i * t:(i + 1) * t]
        free = np.linalg.matrix_rank(blk, 1e-10)
        on_axis = np.sum(np.abs(p) > 1 - 1e-12) == 1
        if on_axis and abs(p[2]) > 0.5:
            seen["pole"] += 1
            assert free == 0
        elif on_axis:
            seen["axis"] += 1
            assert free == 0
        elif len(cfg.neighbors(i)) == 4:
            seen["crossing"] += 1
            # only the tangential direction along the equator survives
            assert free == 1
            assert np.linalg.norm(blk[1:]) < 1e-12
    assert seen == {"axis": 4, "pole": 2, "crossing": 4}


def test_frozen_theta_oracle_not_in_kernel():
    ex = B.build_example("frozen_theta", n=2, N=24, k0=2)
    O, U = B.frozen_theta_oracle(ex)
    Jr = B.restricted_jacobian(B.balancing_jacobian(ex.config), U)
    smax = np.linalg.norm(Jr, 2)
    assert np.all(np.linalg.norm(O, axis=0) > 0.1)
    assert np.all(np.linalg.norm(Jr @ O, axis=0) / np.linalg.norm(O, axis=0) > 1e-3 * smax)


def test_tilted_reports():
    ex = B.build_example("tilted", n=2, N=24, k0=2)
    assert ex.config.size == 88
    assert "commensurability" in ex.meta
    U = symmetric_basis(ex)
    Q = B.rotation_induced_fields(ex.config, ex.symmetry)
    assert U.shape[1] == 132
    assert Q.shape[1] == 6
    Jr = B.restricted_jacobian(B.balancing_jacobian(ex.config), U)
    rep = B.rank_kernel(Jr)
    assert rep.kernel_dim >= 6


@pytest.mark.parametrize("kind", ["two_geodesics", "frozen_theta"])
def test_quarter_closure(kind):
    with pytest.raises(ClosureViolation):
        B.build_example(kind, n=2, N=18)


def test_unknown_example():
    with pytest.raises(ValueError):
        B.build_example("tripod")


# ---------------------------------------------------------------- Newton

def test_newton_already_balanced():
    cfg = loop(2).config
    res = B.newton_balance(cfg)
    assert res.iterations == 1 and res.converged
    assert not np.any(res.coords)


@pytest.mark.parametrize("n", [2, 3])
def test_newton_recovers_equal_spacing(n):
    cfg = loop(n).config
    c = np.zeros(cfg.size * cfg.tdim)
    c[0] = 1e-3
    res = B.newton_balance(cfg.with_coords(c))
    assert res.converged
    assert np.linalg.norm(B.approx_balancing(res.config)) < 1e-11
    d = [sg.dist(res.config.centers[a], res.config.centers[b]) for a, b in res.config.edges]
    assert np.ptp(d) < 1e-10
    assert B.convergence_order(res.residuals) == pytest.approx(2.0, abs=0.2)
    r = res.residuals
    ratios = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 3, len(r) - 1) if r[k + 1] > 1e-14]
    assert max(ratios) < 1e3


def test_newton_on_frozen_theta_symmetric_perturbation():
    ex = B.build_example("frozen_theta", n=2, N=16, k0=2)
    U = symmetric_basis(ex)
    rng = np.random.default_rng(0)
    c = U @ rng.normal(size=U.shape[1])
    c *= 5e-4 / np.linalg.norm(c)
    res = B.newton_balance(ex.config.with_coords(c), ex.symmetry)
    assert res.converged and res.residuals[-1] < 1e-12


def test_newton_step_too_large():
    cfg = loop(2).config
    c = np.zeros((cfg.size, cfg.tdim))
    c[:, 0] = 0.01  # a rigid rotation, far outside tau/4 in norm
    c[0, 0] += 1e-3
    with pytest.raises(StepTooLarge):
        B.newton_balance(cfg.with_coords(c))


def test_newton_omega_invariant_fixed_point():
    cfg = loop(2).config
    c = np.zeros(cfg.size * cfg.tdim)
    c[0] = 1e-3
    start = cfg.with_coords(c)
    a = B.newton_balance(start).coords
    b = B.newton_balance(start, omega=4.0).coords
    np.testing.assert_allclose(a, b, atol=1e-10)
