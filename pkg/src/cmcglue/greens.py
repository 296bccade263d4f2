"""Spectral Green's function of ``Delta + n`` on the unit sphere S^n.

The source term ``a_j (delta_{p_j} - sum_t lambda_j^t chi q^t)`` is handled
by singularity subtraction.  Around each source an explicit radial solution
of ``(Delta + n) f = 0`` carries the singularity; the remaining smooth part
and the cut-off correction are finite series of normalised Gegenbauer
polynomials in ``x . p_j`` (addition theorem).  No explicit harmonic basis is
formed and the degree-one component vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, roots_legendre

from .errors import GramSingular, IllConditionedFit, TooCloseToSource, TruncationTooLow
from .neck import cutoff as _smoothstep

SOURCE_TOL = 1e-4
DEFAULT_LMAX = {2: 128, 3: 64}


def sphere_area(n):
    """Area of the unit sphere S^n."""
    return float(2.0 * np.pi ** ((n + 1) / 2.0) / np.exp(gammaln((n + 1) / 2.0)))


def harmonic_dim(n, ell):
    """Dimension of degree-``ell`` spherical harmonics on S^n."""
    ell = np.asarray(ell)
    from scipy.special import comb
    return comb(ell + n, n, exact=False) - np.where(ell >= 2, comb(ell + n - 2, n, exact=False), 0.0)


def divisor(n, ell):
    return n - np.asarray(ell, dtype=float) * (np.asarray(ell, dtype=float) + n - 1)


def delta_scale(n):
    """Scale making the singular part of the solution ``log dist`` or ``dist^(2-n)``."""
    if n == 2:
        return 2.0 * np.pi
    return -(n - 2) * sphere_area(n - 1)


def gegenbauer_table(lam, L, t):
    """Normalised Gegenbauer values ``P_l(t) = C_l^lam(t)/C_l^lam(1)`` for l = 0..L.

    Returns an array of shape (L+1,) + t.shape.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((L + 1,) + t.shape)
    out[0] = 1.0
    if L >= 1:
        out[1] = t
    for l in range(2, L + 1):
        out[l] = (2.0 * (l + lam - 1.0) * t * out[l - 1] - (l - 1.0) * out[l - 2]) / (l + 2.0 * lam - 1.0)
    return out


def zonal_series(n, coeffs, t, deriv=0):
    """Evaluate ``sum_l coeffs[l] d^k/dt^k P_l(t)`` for ``k = deriv >= 0``."""
    coeffs = np.asarray(coeffs, dtype=float)
    L = coeffs.size - 1
    lam = (n - 1) / 2.0
    t = np.asarray(t, dtype=float)
    if L < deriv:
        return np.zeros_like(t)
    ell = np.arange(L + 1, dtype=float)
    # P_l^(k) = P_l^(k)(1) times the normalised Gegenbauer table at lam + k, degree l - k,
    # with P_l^(k)(1) = prod_{i<k} (l - i)(l + n - 1 + i) / (n + 2 i)
    d = np.ones(L + 1)
    for i in range(deriv):
        d = d * (ell - i) * (ell + n - 1 + i) / (n + 2.0 * i)
    table = gegenbauer_table(lam + deriv, L - deriv, t)
    return np.tensordot(coeffs[deriv:] * d[deriv:], table, axes=1)


def _cap_nodes(n, radius, m=160):
    """Gauss nodes (t, weight) for integrals of f(t) dmu over the cap angle <= radius.

    ``dmu = |S^{n-1}| sin^{n-1}(theta) d theta`` is the pushforward of the
    surface measure to the polar angle.  The cap is split at the start of
    the cutoff ramp so both pieces are smooth.
    """
    x, w = roots_legendre(m)
    th, wt = [], []
    for a, b in ((0.0, 0.5 * radius), (0.5 * radius, radius)):
        th.append(0.5 * (b - a) * x + 0.5 * (a + b))
        wt.append(0.5 * (b - a) * w)
    th = np.concatenate(th)
    wt = np.concatenate(wt) * sphere_area(n - 1) * np.sin(th) ** (n - 1)
    return th, wt


def cap_bump(theta, radius):
    """``1 - chi`` for a single source: 1 near the pole, 0 beyond ``radius``."""
    return 1.0 - _smoothstep(4.0 * np.asarray(theta) / radius - 1.5)


@dataclass(frozen=True)
class GreenSpec:
    points: np.ndarray
    weights: np.ndarray
    cutoff_radius: float = 0.1

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.size != pts.shape[0]:
            raise ValueError("one weight per source point")
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                d = np.arccos(np.clip(pts[i] @ pts[j], -1, 1))
                if d <= 2 * self.cutoff_radius:
                    raise ValueError("source points closer than twice the cutoff radius")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.points.shape[1] - 1


@lru_cache(maxsize=64)
def _cap_expansion(n, radius, L):
    """Spectral data of the cap bump times coordinate functions, up to degree L.

    Returns (A, B, eA, eB): zonal coefficients of ``b(t) t`` and of the
    ``(x.w) P_l'`` expansion of ``b(t) (x.w)`` for unit ``w`` orthogonal to
    the pole, plus their per-degree L^2 energies.
    """
    th, wt = _cap_nodes(n, radius)
    t = np.cos(th)
    b = cap_bump(th, radius)
    lam = (n - 1) / 2.0
    area = sphere_area(n)
    P = gegenbauer_table(lam, L, t)
    ell = np.arange(L + 1)
    dim = harmonic_dim(n, ell)
    # zonal f(x.p) = sum_l f_l dim_l/|S^n| P_l(x.p),  f_l = int f P_l dmu
    fA = P @ (wt * b * t)
    A = fA * dim / area
    eA = fA ** 2 * dim / area
    # b(t)(x.w) = sum_l d_l (x.w) P_l'(t); orthogonality weight (1-t^2)/n
    dP = np.zeros_like(P)
    dP[1:] = (ell[1:, None] * (ell[1:, None] + n - 1) / n) * gegenbauer_table(lam + 1.0, L - 1, t)
    s2 = (1.0 - t * t) / n
    num = dP @ (wt * b * s2)
    den = exact_dprime_norms(n, L)
    B = np.zeros(L + 1)
    B[1:] = num[1:] / den[1:]
    eB = B ** 2 * den
    return A, B, eA, eB


@lru_cache(maxsize=16)
def exact_dprime_norms(n, L):
    """``int_{S^n} (x.w)^2 P_l'(x.p)^2`` for unit ``w`` orthogonal to ``p``.

    Equals ``|S^n| l (l+n-1) / (n dim_l)`` since ``(x.w) P_l'`` is the
    derivative of the zonal harmonic along ``w``.
    """
    ell = np.arange(L + 1, dtype=float)
    dim = harmonic_dim(n, ell)
    return sphere_area(n) * ell * (ell + n - 1) / (n * dim)


def _gram(n, points, radius):
    """``M_st = int chi q^s q^t`` with ``chi = 1 - sum_k b_k``."""
    th, wt = _cap_nodes(n, radius)
    t = np.cos(th)
    b = cap_bump(th, radius)
    i1 = np.sum(wt * b * t * t)
    i2 = np.sum(wt * b * (1.0 - t * t)) / n
    M = np.eye(n + 1) * sphere_area(n) / (n + 1)
    for p in points:
        M -= i1 * np.outer(p, p) + i2 * (np.eye(n + 1) - np.outer(p, p))
    return M


PARAMETRIX_RADIUS = 1.5
PARAMETRIX_INNER = 0.1


def _smooth_step(x):
    """C-infinity step on [0, 1] and its first two derivatives."""
    x = np.asarray(x, dtype=float)
    out = [np.where(x >= 1.0, 1.0, 0.0), np.zeros_like(x), np.zeros_like(x)]
    m = (x > 0.0) & (x < 1.0)
    xm = x[m]
    z = np.clip(1.0 / xm - 1.0 / (1.0 - xm), -700.0, 700.0)
    z1 = -1.0 / xm ** 2 - 1.0 / (1.0 - xm) ** 2
    z2 = 2.0 / xm ** 3 - 2.0 / (1.0 - xm) ** 3
    S = 1.0 / (1.0 + np.exp(z))
    S1 = -S * (1.0 - S)
    S2 = S1 * (2.0 * S - 1.0)
    out[0][m], out[1][m], out[2][m] = S, S1 * z1, S2 * z1 ** 2 + S1 * z2
    return out


_LOG_NODES = roots_legendre(96)


def _parametrix_integral(n, theta, R):
    """``I(theta) = int_theta^R ds / (sin^(n-1) s cos^2 s)`` by Gauss in log s."""
    x, w = _LOG_NODES
    lo = np.log(theta)[:, None]
    half = 0.5 * (np.log(R) - lo)
    s = np.exp(lo + half * (x[None, :] + 1.0))
    f = s / (np.sin(s) ** (n - 1) * np.cos(s) ** 2)
    return (half * f * w[None, :]).sum(axis=1)


def _parametrix_coeff(n):
    return -1.0 if n == 2 else float(n - 2)


def parametrix(n, theta, R=PARAMETRIX_RADIUS):
    """Explicit singular profile ``Phi`` and its first two radial derivatives.

    ``Phi = f rho`` where ``f`` is the radial solution of ``(Delta + n) f = 0``
    that behaves like ``log theta`` (n=2) or ``theta^(2-n)`` at the origin,
    and ``rho`` is a smooth cutoff equal to 1 below ``R/2`` and 0 above ``R``.
    Valid for ``0 < theta``; zero at and beyond ``R``.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    out = [np.zeros_like(th) for _ in range(3)]
    m = th < R
    t = th[m]
    c = _parametrix_coeff(n)
    I = _parametrix_integral(n, t, R)
    st, ct = np.sin(t), np.cos(t)
    f = c * ct * I
    f1 = c * (-st * I - 1.0 / (st ** (n - 1) * ct))
    f2 = -(n - 1) * ct / st * f1 - n * f
    w = R - PARAMETRIX_INNER
    s0, s1, s2 = _smooth_step((t - PARAMETRIX_INNER) / w)
    rho, rho1, rho2 = 1.0 - s0, -s1 / w, -s2 / w ** 2
    out[0][m] = f * rho
    out[1][m] = f1 * rho + f * rho1
    out[2][m] = f2 * rho + 2 * f1 * rho1 + f * rho2
    if np.ndim(theta) == 0:
        return tuple(float(o[0]) for o in out)
    return tuple(out)


def parametrix_flux(n):
    """Coefficient of the delta produced by ``(Delta + n)`` applied to the parametrix."""
    return -_parametrix_coeff(n) * sphere_area(n - 1)


def _radial_nodes(R, inner, m):
    """Gauss nodes on [0, inner] (refined at the origin) and on [inner, R]."""
    x, w = roots_legendre(m)
    u = 0.5 * (x + 1.0)
    th1 = inner * u * u
    w1 = w * inner * u
    th2 = inner + 0.5 * (R - inner) * (x + 1.0)
    w2 = 0.5 * (R - inner) * w
    return np.concatenate([th1, th2]), np.concatenate([w1, w2])


@lru_cache(maxsize=32)
def _parametrix_spectrum(n, L):
    """Zonal coefficients of ``Phi`` and of ``h = (Delta + n) Phi`` (regular part)."""
    R = PARAMETRIX_RADIUS
    th, w = _radial_nodes(R, PARAMETRIX_INNER, max(400, 4 * L))
    mu = w * sphere_area(n - 1) * np.sin(th) ** (n - 1)
    phi, d1, d2 = parametrix(n, th)
    # (Delta + n) f = 0 exactly, so h lives where the cutoff varies
    h = np.where(th > PARAMETRIX_INNER, d2 + (n - 1) * np.cos(th) / np.sin(th) * d1 + n * phi, 0.0)
    P = gegenbauer_table((n - 1) / 2.0, L, np.cos(th))
    dim = harmonic_dim(n, np.arange(L + 1))
    area = sphere_area(n)
    return (P @ (mu * phi)) * dim / area, (P @ (mu * h)) * dim / area


@dataclass(frozen=True)
class SpectralField:
    """Solution of the source equation around each source point.

    For unit weight the solution is ``Phi(dist) + sum_l reg[l] P_l(x.p)`` plus
    the solved cut-off correction, where ``Phi`` is :func:`parametrix`.
    """

    n: int
    L_max: int
    spec: GreenSpec
    lambdas: np.ndarray  # (K, n+1) Gram coefficients
    reg: np.ndarray  # regular zonal series, degrees 0..L_max
    corr_A: np.ndarray  # solved cap correction, zonal part
    corr_B: np.ndarray  # solved cap correction, (x.w) P_l' part
    scale: float
    tail_ratio: float

    def degree_one_coefficient(self):
        """Degree-one zonal coefficient of the single-source part (zero by construction)."""
        phi1, _ = _parametrix_spectrum(self.n, self.L_max)
        return float(phi1[1] + self.reg[1])


def solve_green(spec: GreenSpec, L_max=None) -> SpectralField:
    """Solve ``(Delta + n) G = s sum_j a_j (delta_{p_j} - sum_t lambda_j^t chi q^t)``.

    ``s`` is :func:`delta_scale`, chosen so that ``G ~ a_j log dist`` (n=2)
    or ``a_j dist^(2-n)`` near each source.  The solution has no degree-one
    part.
    """
    n = spec.n
    L = DEFAULT_LMAX.get(n, 48) if L_max is None else int(L_max)
    if L < 8:
        raise TruncationTooLow("L_max must be at least 8")
    M = _gram(n, spec.points, spec.cutoff_radius)
    if np.linalg.cond(M) > 1e12:
        raise GramSingular("Gram matrix of the cut-off coordinate functions is singular")
    lambdas = np.linalg.solve(M, spec.points.T).T
    ell = np.arange(L + 1)
    div = np.where(ell == 1, 1.0, divisor(n, ell))
    dim = harmonic_dim(n, ell)
    area = sphere_area(n)
    scale = delta_scale(n)
    phi_c, h_c = _parametrix_spectrum(n, L)
    # (Delta + n) R = (s - s_Phi) delta - h; degree one cancels Phi's own part
    reg = ((scale - parametrix_flux(n)) * dim / area - h_c) / div
    reg[1] = -phi_c[1]
    energy = reg ** 2 * area / dim
    tail = float(energy[int(0.9 * L) + 1:].sum() / max(energy.sum(), 1e-300))
    if tail > 1e-6:
        raise TruncationTooLow(f"regular part tail energy ratio {tail:.3g} > 1e-6")
    Lc = 256
    while True:
        A, B, eA, eB = _cap_expansion(n, spec.cutoff_radius, Lc)
        lc = np.arange(Lc + 1)
        dc = np.where(lc == 1, 1.0, divisor(n, lc))
        sA = np.where(lc == 1, 0.0, A / dc)
        sB = np.where(lc == 1, 0.0, B / dc)
        ce = np.where(lc == 1, 0.0, (eA + eB) / dc ** 2)
        ctail = ce[Lc // 2:].sum() / max(ce.sum(), 1e-300)
        if ctail <= 1e-6:
            break
        if Lc >= 4096:
            raise TruncationTooLow(f"cap correction tail energy ratio {ctail:.3g} > 1e-6")
        Lc *= 2
    return SpectralField(n, L, spec, lambdas, reg, sA, sB, scale, tail)


def _eval(field: SpectralField, x, grad=False, skip=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = field.n
    val = np.zeros(x.shape[0])
    g = np.zeros_like(x)
    for j, (p, a, lam) in enumerate(zip(field.spec.points, field.spec.weights, field.lambdas)):
        if a == 0.0:
            continue
        t = np.clip(x @ p, -1.0, 1.0)
        th = np.arccos(t)
        if skip is True or j == skip:
            th = np.full_like(th, PARAMETRIX_RADIUS)
        elif np.any(th < SOURCE_TOL):
            raise TooCloseToSource("evaluation point within 1e-4 of a source")
        inside = th < PARAMETRIX_RADIUS
        ph = np.zeros_like(th)
        dph = np.zeros_like(th)
        ph[inside], dph[inside], _ = parametrix(n, th[inside])
        val += a * (ph + zonal_series(n, field.reg, t))
        if grad:
            tan_p = p[None, :] - t[:, None] * x
            st = np.maximum(np.sin(th), 1e-300)
            g += a * ((zonal_series(n, field.reg, t, 1) - dph / st)[:, None] * tan_p)
        # cut-off correction: s a sum_k [(p_k.lam) A(x.p_k) + B'(x.p_k)(x.v_k)]
        for pk in field.spec.points:
            tk = np.clip(x @ pk, -1.0, 1.0)
            c = pk @ lam
            v = lam - c * pk
            xv = x @ v
            val += a * field.scale * (c * zonal_series(n, field.corr_A, tk)
                                      + zonal_series(n, field.corr_B, tk, 1) * xv)
            if grad:
                dA = zonal_series(n, field.corr_A, tk, 1)
                Bv = zonal_series(n, field.corr_B, tk, 1)
                dB = zonal_series(n, field.corr_B, tk, 2)
                tan_p = pk[None, :] - tk[:, None] * x
                tan_v = v[None, :] - xv[:, None] * x
                g += a * field.scale * ((c * dA + dB * xv)[:, None] * tan_p + Bv[:, None] * tan_v)
    return val, g


def _zonal_jet(x, p, d1, d2):
    """Tangential gradient and Hessian of ``f(x.p)`` on the sphere from ``f'`` and ``f''``."""
    t = x @ p
    w = p[None, :] - t[:, None] * x
    P = np.eye(x.shape[1])[None] - x[:, :, None] * x[:, None, :]
    grad = d1[:, None] * w
    hess = d2[:, None, None] * w[:, :, None] * w[:, None, :] - (t * d1)[:, None, None] * P
    return grad, hess


def green_jet(field: SpectralField, x):
    """Value, tangential gradient and covariant Hessian of G at points of S^n.

    Gradient and Hessian are returned as ambient vectors ``(m, n+1)`` and
    ambient symmetric matrices ``(m, n+1, n+1)`` acting on tangent vectors.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = field.n
    P = np.eye(x.shape[1])[None] - x[:, :, None] * x[:, None, :]
    val = np.zeros(x.shape[0])
    grad = np.zeros_like(x)
    hess = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
    for p, a, lam in zip(field.spec.points, field.spec.weights, field.lambdas):
        if a == 0.0:
            continue
        t = np.clip(x @ p, -1.0, 1.0)
        th = np.arccos(t)
        if np.any(th < SOURCE_TOL):
            raise TooCloseToSource("evaluation point within 1e-4 of a source")
        ph, ph1, ph2 = parametrix(n, th)
        st = np.sin(th)
        f0 = ph + zonal_series(n, field.reg, t)
        f1 = -ph1 / st + zonal_series(n, field.reg, t, 1)
        f2 = (ph2 - ph1 * t / st) / st ** 2 + zonal_series(n, field.reg, t, 2)
        g, h = _zonal_jet(x, p, f1, f2)
        val += a * f0
        grad += a * g
        hess += a * h
        for pk in field.spec.points:
            tk = np.clip(x @ pk, -1.0, 1.0)
            c = pk @ lam
            v = lam - c * pk
            u = x @ v
            tv = v[None, :] - u[:, None] * x
            wk = pk[None, :] - tk[:, None] * x
            A0, A1, A2 = (zonal_series(n, field.corr_A, tk, k) for k in range(3))
            B1, B2, B3 = (zonal_series(n, field.corr_B, tk, k) for k in range(1, 4))
            gA, hA = _zonal_jet(x, pk, A1, A2)
            gB, hB = _zonal_jet(x, pk, B2, B3)
            cross = wk[:, :, None] * tv[:, None, :]
            s = a * field.scale
            val += s * (c * A0 + B1 * u)
            grad += s * (c * gA + u[:, None] * gB + B1[:, None] * tv)
            hess += s * (c * hA + u[:, None, None] * hB - (B1 * u)[:, None, None] * P
                         + B2[:, None, None] * (cross + cross.transpose(0, 2, 1)))
    return val, grad, hess


def cap_weight(field: SpectralField, x):
    """``chi = 1 - sum_k b_k`` at points of S^n."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    chi = np.ones(x.shape[0])
    for pk in field.spec.points:
        chi -= cap_bump(np.arccos(np.clip(x @ pk, -1.0, 1.0)), field.spec.cutoff_radius)
    return chi


def evaluate_green(field: SpectralField, x):
    """Value of G at one point or an (m, n+1) array of points on S^n."""
    v, _ = _eval(field, x)
    return v if np.ndim(x) > 1 else float(v[0])


def regular_part(field: SpectralField, x):
    """G minus the explicit singular profiles of all sources (smooth everywhere)."""
    v, _ = _eval(field, x, skip=True)
    return v if np.ndim(x) > 1 else float(v[0])


def gradient_green(field: SpectralField, x):
    """Tangential gradient of G (ambient components)."""
    _, g = _eval(field, x, grad=True)
    return g if np.ndim(x) > 1 else g[0]


def operator_residual(field: SpectralField):
    """Max deviation of ``(Delta + n)`` applied to the regular series from its RHS.

    The RHS of the regular part is ``(s - s_Phi) delta - h`` projected to
    degrees other than one.
    """
    n, L = field.n, field.L_max
    ell = np.arange(L + 1)
    dim = harmonic_dim(n, ell)
    _, h_c = _parametrix_spectrum(n, L)
    rhs = (field.scale - parametrix_flux(n)) * dim / sphere_area(n) - h_c
    lhs = divisor(n, ell) * field.reg
    mask = ell != 1
    return float(np.max(np.abs(lhs[mask] - rhs[mask])) / max(np.max(np.abs(rhs[mask])), 1e-300))


def richardson(values):
    """Extrapolate a sequence computed at geometrically growing resolution.

    Uses Aitken's delta-squared on the last three values (Richardson with
    the convergence order estimated from the data).  Falls back to the last
    value when the differences do not shrink.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return float(v[-1])
    x0, x1, x2 = v[-3:]
    d1, d2 = x1 - x0, x2 - x1
    den = d2 - d1
    if den == 0.0 or abs(d2) >= abs(d1):
        return float(x2)
    return float(x2 - d2 * d2 / den)


def ring_points(p, radii, n_az=8, rng=None):
    """Points at the given distances from ``p`` along ``n_az`` fixed directions."""
    p = np.asarray(p, dtype=float)
    dim = p.size
    from .sphere_geom import complete_frame
    frame = complete_frame([p], dim)
    rng = np.random.default_rng(0) if rng is None else rng
    dirs = rng.standard_normal((n_az, dim - 1))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs @ frame[1:]
    pts = [np.cos(r) * p + np.sin(r) * d for r in radii for d in dirs]
    dist = np.repeat(np.asarray(radii, dtype=float), n_az)
    return np.array(pts), dist


def fit_asymptotics(field: SpectralField, source_point, a=1.0, ring=(0.05, 0.15), samples=41):
    """Fit G on a ring around a source against its singular form.

    Returns a dict with ``leading_coeff`` (coefficient of ``log dist`` for
    n=2 or ``dist^(2-n)`` for n>=3) and ``c0_estimate`` (constant / a).
    """
    radii = np.linspace(ring[0], ring[1], samples)
    pts, d = ring_points(source_point, radii)
    g = evaluate_green(field, pts)
    sing = np.log(d) if field.n == 2 else d ** (2.0 - field.n)
    design = np.column_stack([sing, np.ones_like(d)])
    if np.linalg.cond(design) > 1e10:
        raise IllConditionedFit("ring fit design matrix is ill-conditioned")
    (lead, const), *_ = np.linalg.lstsq(design, g, rcond=None)
    return {"leading_coeff": float(lead), "c0_estimate": float(const / a) if a else float("nan")}


def _parametrix_log_offset(R=PARAMETRIX_RADIUS):
    """``lim (f(theta) - log theta)`` as theta -> 0 for the n=2 parametrix."""
    inner, _ = quad(lambda s: 1.0 / (np.sin(s) * np.cos(s) ** 2) - 1.0 / s, 0.0, R,
                    epsabs=1e-14, epsrel=1e-13, limit=200)
    return -(inner + np.log(R))


def source_constant(field: SpectralField, j=0):
    """Limit of ``G - a_j log dist(., p_j)`` at ``p_j`` (n=2 only)."""
    if field.n != 2:
        raise ValueError("source_constant is defined for n=2")
    p = field.spec.points[j]
    a = field.spec.weights[j]
    # with the singular part of source j removed the sum below is smooth at p_j
    rest, _ = _eval(field, p[None, :], skip=j)
    return float(rest[0] + a * _parametrix_log_offset())


@lru_cache(maxsize=None)
def log_constant(L_max=128, cutoff_radius=0.1):
    """Constant ``c_0`` of the n=2 expansion ``a (c_0 + log dist)`` for one unit source."""
    spec = GreenSpec(np.array([[0.0, 0.0, 1.0]]), np.array([1.0]), cutoff_radius)
    return source_constant(solve_green(spec, L_max), 0)
