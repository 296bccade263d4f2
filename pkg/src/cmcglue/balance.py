"""Approximate balancing map, its Jacobian, kernel analysis and Newton balancing.

Displacements and balancing vectors are stacked per sphere in the fixed
tangent frame of :class:`~cmcglue.config.SphereConfiguration` (rows
``1..n+1`` of each sphere frame), so both live in the same coordinate space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import sphere_geom as sg
from .config import (GeodesicSegment, GeodesicNetwork, SymmetrySpec, commensurability_check,
                     constraint_projector, great_circle_network, neighbor_graph,
                     place_spheres, projector_basis)
from .errors import (ClosureViolation, NoConvergence, SingularJacobian, StepTooLarge,
                     TanPole)
from . import neck

TAN_POLE_TOL = 1e-9
FD_STEP = 1e-5


# ---------------------------------------------------------------- Killing fields

def killing_basis(p, R):
    """Killing fields ``Y^t = x^t d_0 - x^0 d_t`` conjugated by ``R``, evaluated at ``p``.

    Returns an ``(n+1, n+2)`` array whose row ``t-1`` is
    ``R^T Y^t(R p)`` for ``t = 1..n+1``.
    """
    R = np.asarray(R, dtype=float)
    x = R @ np.asarray(p, dtype=float)
    dim = x.size
    out = np.zeros((dim - 1, dim))
    for t in range(1, dim):
        y = np.zeros(dim)
        y[0] = x[t]
        y[t] -= x[0]
        out[t - 1] = R.T @ y
    return out


# ---------------------------------------------------------------- neck scales

@lru_cache(maxsize=4096)
def _neck_scale(n, alpha, tau, c0):
    consts = neck.matching_constants(n, alpha, tau, c0)
    spec = neck.match_parameters(consts)
    return spec.eps, neck.eps_derivative(consts)


def _c0(n, c0_green):
    if n != 2:
        return None
    if c0_green is None:
        from .greens import log_constant
        return log_constant()
    return float(c0_green)


# ---------------------------------------------------------------- balancing map

def approx_balancing(cfg, omega=1.0, c0_green=None):
    """Approximate balancing vector, one ``(n+1)``-block per sphere.

    For sphere ``i`` with neighbours ``j``: the neighbour centre is pulled
    back by the displacement rotation of sphere ``i``, the unit tangent
    ``T_j`` towards it is paired with the sphere's Killing fields and the
    terms are weighted by ``omega * eps(tau_j)^(n-1)``.
    """
    neighbor_graph(cfg)  # overlap check
    n, alpha = cfg.n, cfg.alpha
    c0 = _c0(n, c0_green)
    out = np.zeros((cfg.size, cfg.tdim))
    for i in range(cfg.size):
        p0 = cfg.base_points[i]
        W = sg.displacement_rotation(p0, cfg.sigmas[i])
        Y = killing_basis(p0, cfg.frames[i])
        for j in cfg.neighbors(i):
            theta = sg.dist(cfg.centers[i], cfg.centers[j])
            u = W.T @ cfg.centers[j]
            T = (u - p0 * np.cos(theta)) / np.sin(theta)
            eps, _ = _neck_scale(n, alpha, theta - 2.0 * alpha, c0)
            out[i] += omega * eps ** (n - 1) * (Y @ T)
    return out


def balancing_jacobian(cfg, omega=1.0, c0_green=None):
    """Analytic derivative of :func:`approx_balancing` at zero displacement.

    Row block ``i`` and column block ``k`` hold the derivative of sphere
    ``i``'s balancing block along the frame directions of sphere ``k``.
    For ``theta = tau_j + 2 alpha`` and ``V^# = (V_j - p0 <p0, V_j>) / sin theta``::

        - sum_j (n-1) w eps^(n-2) eps' (<V0^par, Y> - tan theta <V#^par, Y>)
        - sum_j w eps^(n-1) cot theta (<V0^perp, Y> - tan theta <V#^perp, Y>)

    where ``par``/``perp`` split along the tangent ``T_j`` at ``p0``.
    """
    if np.any(cfg.sigmas != 0.0):
        raise ValueError("the analytic Jacobian is evaluated at zero displacement")
    n, alpha, t = cfg.n, cfg.alpha, cfg.tdim
    c0 = _c0(n, c0_green)
    J = np.zeros((cfg.size * t, cfg.size * t))
    for i in range(cfg.size):
        p0 = cfg.base_points[i]
        Y = killing_basis(p0, cfg.frames[i])
        V0 = cfg.frames[i, 1:]
        for j in cfg.neighbors(i):
            pj = cfg.base_points[j]
            theta = sg.dist(p0, pj)
            if abs(theta - 0.5 * np.pi) < TAN_POLE_TOL:
                raise TanPole(f"tau + 2 alpha = pi/2 on edge ({i}, {j})")
            T = (pj - p0 * np.cos(theta)) / np.sin(theta)
            eps, deps = _neck_scale(n, alpha, theta - 2.0 * alpha, c0)
            a1 = (n - 1) * omega * eps ** (n - 2) * deps
            a2 = omega * eps ** (n - 1) / np.tan(theta)
            tan = np.tan(theta)
            YT = Y @ T
            # own displacement
            par0 = V0 @ T
            perp0 = V0 - np.outer(par0, T)
            J[i * t:(i + 1) * t, i * t:(i + 1) * t] += -a1 * np.outer(YT, par0) - a2 * (Y @ perp0.T)
            # neighbour displacement
            Vj = cfg.frames[j, 1:]
            Vs = (Vj - np.outer(Vj @ p0, p0)) / np.sin(theta)
            parj = Vs @ T
            perpj = Vs - np.outer(parj, T)
            J[i * t:(i + 1) * t, j * t:(j + 1) * t] += (a1 * tan * np.outer(YT, parj)
                                                        + a2 * tan * (Y @ perpj.T))
    return J


def fd_jacobian(cfg, omega=1.0, c0_green=None, step=FD_STEP, basis=None):
    """Central finite-difference Jacobian of :func:`approx_balancing` at ``cfg``.

    ``basis`` (columns in stacked coordinates) restricts the directions;
    the default is every frame direction.
    """
    c = cfg.sigmas_to_coords(cfg.sigmas)
    D = c.size
    basis = np.eye(D) if basis is None else np.asarray(basis)
    cols = []
    for k in range(basis.shape[1]):
        fp = approx_balancing(cfg.with_coords(c + step * basis[:, k]), omega, c0_green).ravel()
        fm = approx_balancing(cfg.with_coords(c - step * basis[:, k]), omega, c0_green).ravel()
        cols.append((fp - fm) / (2.0 * step))
    return np.column_stack(cols)


# ---------------------------------------------------------------- rotations

def _so_basis(dim):
    out = []
    for a, b in itertools.combinations(range(dim), 2):
        E = np.zeros((dim, dim))
        E[b, a], E[a, b] = 1.0, -1.0
        out.append(E)
    return out


def equivariant_generators(dim, sym: SymmetrySpec | None = None, tol=1e-10):
    """Antisymmetric matrices commuting with every symmetry generator."""
    basis = _so_basis(dim)
    gens = [] if sym is None else list(sym.generators)
    if not gens:
        return basis
    K = np.column_stack([np.concatenate([(g @ E - E @ g).ravel() for g in gens]) for E in basis])
    _, s, vt = np.linalg.svd(K)
    null = vt[np.sum(s > tol * max(s.max(), 1.0)):]
    return [sum(c * E for c, E in zip(v, basis)) for v in null]


def rotation_induced_fields(cfg, sym: SymmetrySpec | None = None, tol=1e-10):
    """Orthonormal basis (columns) of displacements induced by equivariant rotations.

    Each generator ``A`` moves the centre ``p_i`` with velocity ``A p_i``,
    which is already tangent; its frame components form one column.
    """
    gens = equivariant_generators(cfg.dim, sym)
    D = cfg.size * cfg.tdim
    if not gens:
        return np.zeros((D, 0))
    F = np.column_stack([np.einsum("ikd,id->ik", cfg.frames[:, 1:], cfg.base_points @ A.T).ravel()
                         for A in gens])
    u, s, _ = np.linalg.svd(F, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((D, 0))
    return u[:, s > tol * s[0]]


def project_out_cokernel(J, rot_fields):
    """``(I - Q Q^T) J`` for orthonormal columns ``Q``."""
    Q = np.asarray(rot_fields)
    if Q.size == 0:
        return np.array(J, copy=True)
    return J - Q @ (Q.T @ J)


@dataclass
class KernelReport:
    singular_values: np.ndarray
    tol: float
    rank: int
    kernel: np.ndarray
    rot_basis: np.ndarray
    containment: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def kernel_dim(self) -> int:
        return self.kernel.shape[1]

    def as_dict(self):
        return {"singular_values": self.singular_values.tolist(), "tol": self.tol,
                "rank": self.rank, "kernel_dim": self.kernel_dim,
                "rotation_fields": int(self.rot_basis.shape[1]),
                "containment_residuals": self.containment.tolist()}


def rank_kernel(J, tol_ratio=1e-8, rot_fields=None) -> KernelReport:
    """SVD rank at ``tol_ratio * sigma_max`` with kernel basis and rotation containment.

    ``containment`` holds ``|J v| / (|J| |v|)`` for each rotation field ``v``.
    """
    J = np.asarray(J, dtype=float)
    _, s, vt = np.linalg.svd(J)
    smax = s[0] if s.size else 0.0
    tol = tol_ratio * smax
    rank = int(np.sum(s > tol))
    kernel = vt[rank:].T
    Q = np.zeros((J.shape[1], 0)) if rot_fields is None else np.asarray(rot_fields)
    cont = np.array([np.linalg.norm(J @ v) / (max(smax, 1e-300) * np.linalg.norm(v)) for v in Q.T])
    return KernelReport(s, tol, rank, kernel, Q, cont)


def principal_angle_residual(A, B):
    """Largest sine of the principal angles between the column spaces of A and B."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    if qa.shape[1] != qb.shape[1]:
        return float("inf")
    if qa.shape[1] == 0:
        return 0.0
    # sines directly, avoiding cancellation in sqrt(1 - cos^2)
    return float(np.linalg.norm(qa - qb @ (qb.T @ qa), ord=2))


# ---------------------------------------------------------------- Newton

@dataclass
class NewtonResult:
    coords: np.ndarray
    config: object
    residuals: list
    steps: list
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def as_dict(self):
        return {"converged": self.converged, "iterations": self.iterations,
                "residuals": list(self.residuals), "step_lengths": list(self.steps),
                "order": convergence_order(self.residuals)}


def admissible_basis(cfg, sym=None):
    """Columns spanning (symmetric displacements) minus (rotation-induced fields)."""
    U = projector_basis(constraint_projector(cfg, sym))
    Q = rotation_induced_fields(cfg, sym)
    Z = U - Q @ (Q.T @ U) if Q.size else U
    u, s, _ = np.linalg.svd(Z, full_matrices=False)
    return u[:, s > 1e-8], Q


def newton_balance(cfg, sym=None, max_iter=30, tol=1e-12, omega=1.0, c0_green=None,
                   fd_step=1e-6) -> NewtonResult:
    """Zero of the projected balancing map by damped Newton iteration.

    The unknowns move in the admissible subspace of :func:`admissible_basis`;
    the residual is the balancing vector restricted to the same subspace,
    which equals the balancing vector with its rotation co-kernel removed.
    The Jacobian is recomputed by central differences at every iterate.
    """
    Z, _ = admissible_basis(cfg, sym)
    c0 = cfg.sigmas_to_coords(cfg.sigmas)
    taus = [t for _, _, t in neighbor_graph(cfg.with_sigmas(np.zeros_like(cfg.sigmas)))]
    limit = 0.25 * min(taus)

    def residual(x):
        cur = cfg.with_coords(c0 + Z @ x)
        return Z.T @ approx_balancing(cur, omega, c0_green).ravel()

    x = np.zeros(Z.shape[1])
    F = residual(x)
    res, steps = [float(np.linalg.norm(F))], []
    for _ in range(max_iter):
        if res[-1] < tol:
            break
        J = np.column_stack([(residual(x + fd_step * e) - residual(x - fd_step * e)) / (2 * fd_step)
                             for e in np.eye(x.size)])
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= 1e-12 * s[0]:
            raise SingularJacobian(f"projected Jacobian singular (sigma_min/sigma_max = {s[-1] / s[0]:.2e})")
        dx = -np.linalg.solve(J, F)
        lam = 1.0
        while True:
            trial = x + lam * dx
            if np.linalg.norm(c0 + Z @ trial) > limit:
                raise StepTooLarge(f"|sigma| exceeds tau_min/4 = {limit:.3g}")
            Ft = residual(trial)
            if np.linalg.norm(Ft) <= (1.0 - 1e-4 * lam) * res[-1] or lam < 1.0 / 1024:
                break
            lam *= 0.5
        x, F = trial, Ft
        steps.append(float(lam * np.linalg.norm(dx)))
        res.append(float(np.linalg.norm(F)))
    else:
        if res[-1] >= tol:
            raise NoConvergence(f"residual {res[-1]:.3e} after {max_iter} iterations")
    coords = c0 + Z @ x
    return NewtonResult(coords, cfg.with_coords(coords), res, steps, True)


def convergence_order(residuals, floor=1e-14):
    """Order estimate ``log(r_{k+1}/r_k) / log(r_k/r_{k-1})`` from the last usable triple."""
    r = [v for v in residuals if v > floor]
    if len(r) < 3:
        return float("nan")
    r0, r1, r2 = r[-3:]
    return float(np.log(r2 / r1) / np.log(r1 / r0))


# ---------------------------------------------------------------- examples

@dataclass
class Example:
    kind: str
    config: object
    symmetry: SymmetrySpec
    meta: dict


def _plane_rot(dim, i, j, phi):
    return sg.coordinate_rotation(dim, i, j, phi)


def _reflections(dim, axes):
    out = []
    for a in axes:
        g = np.eye(dim)
        g[a, a] = -1.0
        out.append(g)
    return out


def _step_params(N, m, tau=None, alpha=None):
    step = 2.0 * np.pi * m / N
    if alpha is None:
        alpha = 0.5 * (step - tau)
    tau = step - 2.0 * alpha
    if tau <= 0 or alpha <= 0:
        raise ClosureViolation(f"no positive separation for N={N}, m={m}, alpha={alpha!r}")
    return step, alpha, tau


def delaunay_loop(n=2, N=8, m=1, tau=0.05, alpha=None):
    """Equally spaced spheres along the ``(x^0, x^1)`` equator."""
    dim = n + 2
    step, alpha, tau = _step_params(N, m, tau, alpha)
    seg = GeodesicSegment(sg.basis(dim, 0), sg.basis(dim, 1), 0.0, 2 * np.pi * m, winding=m - 1)
    net = GeodesicNetwork((seg,), ((0, "start", "loop"), (0, "finish", "loop")))
    cfg = place_spheres(net, alpha, [tau])
    return Example("delaunay_loop", cfg, SymmetrySpec(),
                   {"n": n, "N": N, "m": m, "alpha": alpha, "tau": tau, "step": step})


def _two_circle_planes(dim, phi):
    e0, e1, e2 = (sg.basis(dim, k) for k in range(3))
    return [(np.cos(phi) * e0 + np.sin(phi) * e1, e2), (np.cos(phi) * e0 - np.sin(phi) * e1, e2)]


def _check_quarter(N):
    if N % 4:
        raise ClosureViolation(f"N = {N} is not of the form 4 N0")


def _example_symmetry(dim, extra=()):
    return SymmetrySpec(tuple(_reflections(dim, range(dim))) + tuple(extra))


def two_geodesics(n=2, N=16, m=1, tau=0.05, theta=np.pi / 3, extra_symmetry=False, alpha=None):
    """Two great circles through ``+-e2`` meeting at angle ``theta``.

    The circles are ``R^{01}_{+-theta/2}`` applied to the ``(x^0, x^2)``
    equator.  With ``extra_symmetry`` the quarter turn ``R^{01}_{pi/2}`` is
    added to the generators (it preserves the configuration only for
    ``theta = pi/2``).
    """
    _check_quarter(N)
    dim = n + 2
    step, alpha, tau = _step_params(N, m, tau, alpha)
    net = great_circle_network(_two_circle_planes(dim, 0.5 * theta))
    cfg = place_spheres(net, alpha, [tau] * len(net.segments))
    neighbor_graph(cfg)
    extra = (_plane_rot(dim, 0, 1, 0.5 * np.pi),) if extra_symmetry else ()
    return Example("two_geodesics", cfg, _example_symmetry(dim, extra),
                   {"n": n, "N": N, "m": m, "alpha": alpha, "tau": tau, "theta": theta,
                    "extra_symmetry": bool(extra_symmetry)})


def frozen_theta(n=2, N=24, m=1, tau=0.05, k0=2, alpha=None):
    """The two circles at ``R^{01}_{+-k0 step}`` plus the ``(x^0, x^1)`` equator."""
    _check_quarter(N)
    dim = n + 2
    step, alpha, tau = _step_params(N, m, tau, alpha)
    phi = k0 * step
    planes = [(sg.basis(dim, 0), sg.basis(dim, 1))] + _two_circle_planes(dim, phi)
    net = great_circle_network(planes)
    cfg = place_spheres(net, alpha, [tau] * len(net.segments))
    neighbor_graph(cfg)
    return Example("frozen_theta", cfg, _example_symmetry(dim),
                   {"n": n, "N": N, "m": m, "alpha": alpha, "tau": tau, "k0": k0,
                    "rotation_angle": phi, "crossing_angle": 2 * phi})


def tilted(n=2, N=24, m=1, tau=0.05, k0=2, beta=np.pi / 3, alpha=None):
    """The frozen-angle configuration plus a great circle tilted into ``x^3``.

    The extra circle passes through the junction ``q = R^{01}_{k0 step} e0``
    of the equator and the first circle, leaving the ``(x^0, x^1)`` plane at
    angle ``beta``; only the antipodal map survives as a symmetry.
    """
    if n < 2:
        raise ValueError("a tilted circle needs n >= 2")
    _check_quarter(N)
    dim = n + 2
    step, alpha, tau = _step_params(N, m, tau, alpha)
    phi = k0 * step
    e0, e1, e3 = sg.basis(dim, 0), sg.basis(dim, 1), sg.basis(dim, 3)
    q = np.cos(phi) * e0 + np.sin(phi) * e1
    qperp = -np.sin(phi) * e0 + np.cos(phi) * e1
    planes = ([(e0, e1)] + _two_circle_planes(dim, phi)
              + [(q, np.cos(beta) * qperp + np.sin(beta) * e3)])
    net = great_circle_network(planes)
    cfg = place_spheres(net, alpha, [tau] * len(net.segments))
    neighbor_graph(cfg)
    return Example("tilted", cfg, SymmetrySpec((-np.eye(dim),)),
                   {"n": n, "N": N, "m": m, "alpha": alpha, "tau": tau, "k0": k0, "beta": beta,
                    "commensurability": commensurability_check(net)})


EXAMPLES = {
    "delaunay_loop": delaunay_loop,
    "two_geodesics": two_geodesics,
    "frozen_theta": frozen_theta,
    "tilted": tilted,
}


def build_example(kind, **params) -> Example:
    """Build one of the named example configurations with its symmetry generators."""
    try:
        factory = EXAMPLES[kind]
    except KeyError:
        raise ValueError(f"unknown example {kind!r}; choose from {sorted(EXAMPLES)}") from None
    return factory(**params)


def restricted_jacobian(J, basis):
    """``B^T J B`` for orthonormal columns ``B``."""
    return basis.T @ J @ basis


# ---------------------------------------------------------------- loop oracle

def loop_recursion_kernel(N, n, step):
    """Periodic solutions of the loop recursions, by brute-force null spaces.

    Tangential: ``2 u^k - u^{k-1} - u^{k+1} = 0``.  Each of the ``n``
    transverse directions: ``2 v^k - sec(step) (v^{k-1} + v^{k+1}) = 0``.
    Returns columns in loop coordinates ``(k, component)`` with component 0
    tangential.
    """
    shift = np.roll(np.eye(N), 1, axis=1) + np.roll(np.eye(N), -1, axis=1)
    tang = 2 * np.eye(N) - shift
    trans = 2 * np.eye(N) - shift / np.cos(step)
    cols = []
    for comp, M in [(0, tang)] + [(c, trans) for c in range(1, n + 1)]:
        u, s, vt = np.linalg.svd(M)
        null = vt[s < 1e-9 * s[0]]
        for v in null:
            col = np.zeros((N, n + 1))
            col[:, comp] = v
            cols.append(col.ravel())
    return np.column_stack(cols) if cols else np.zeros((N * (n + 1), 0))


def frozen_theta_oracle(example: Example):
    """Symmetrised recursion solutions of the decoupled frozen-angle system.

    Column 0: unit tangential displacement of the equator spheres strictly
    inside the first quadrant.  Column 1: transverse displacement
    ``cos(s) n_+`` of the first tilted circle's spheres with arc parameter
    ``s`` in ``[0, pi/2)`` from the equator, ``n_+`` the circle's normal in
    the ``(x^0, x^1, x^2)`` space.  Both are projected onto the symmetric
    subspace and returned in the coordinates of its basis.
    """
    cfg = example.config
    phi = example.meta["rotation_angle"]
    dim = cfg.dim
    e0, e1, e2 = (sg.basis(dim, k) for k in range(3))
    q = np.cos(phi) * e0 + np.sin(phi) * e1
    nplus = -np.sin(phi) * e0 + np.cos(phi) * e1
    u = np.zeros((cfg.size, dim))
    w = np.zeros((cfg.size, dim))
    for i, p in enumerate(cfg.base_points):
        if np.linalg.norm(p[2:]) < 1e-12:
            ang = np.arctan2(p[1], p[0])
            if 1e-9 < ang < 0.5 * np.pi - 1e-9:
                u[i] = -p[1] * e0 + p[0] * e1
        elif abs(p @ nplus) < 1e-12:
            s = np.arctan2(p @ e2, p @ q)
            if -1e-9 < s < 0.5 * np.pi - 1e-9:
                w[i] = np.cos(s) * nplus
    P = constraint_projector(cfg, example.symmetry)
    U = projector_basis(P)
    cols = [U.T @ (P @ cfg.sigmas_to_coords(v)) for v in (u, w)]
    return np.column_stack(cols), U
