"""Catenoidal necks: profile functions, matching constants and blended graphs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .errors import DegenerateC, DomainError, InversionFailure, NoConvergence, OutOfBand

PROFILE_YMAX = 0.1


# ---------------------------------------------------------------- catenoid

def catenoid_functions(n, s):
    """Return ``(phi, psi, dphi)`` of the unit catenoid at parameter ``s``.

    ``phi = cosh((n-1) s)^(1/(n-1))`` and ``psi = int_0^s phi^(2-n)``.
    """
    m = n - 1
    phi = np.cosh(m * s) ** (1.0 / m)
    dphi = phi * np.tanh(m * s)
    if n == 2:
        psi = float(s)
    else:
        psi, _ = integrate.quad(lambda t: np.cosh(m * t) ** ((2.0 - n) / m), 0.0, s,
                                epsabs=1e-13, epsrel=1e-13, limit=200)
    return phi, psi, dphi


def _f_head(n, x):
    """int_1^x (sigma^(2n-2) - 1)^(-1/2) d sigma with sigma = 1 + t^2, for x <= 2."""
    def g(t):
        if t == 0.0:
            return 2.0 / np.sqrt(2.0 * n - 2.0)
        return 2.0 * t / np.sqrt(np.expm1((2 * n - 2) * np.log1p(t * t)))
    val, _ = integrate.quad(g, 0.0, np.sqrt(x - 1.0), epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def catenoid_graph_F(n, x):
    """Height function of the upper half-catenoid graphed over ``|yhat| = x >= 1``."""
    if x < 1.0:
        raise DomainError(f"F is defined for x >= 1, got {x!r}")
    if n == 2:
        return float(np.arccosh(x))
    if x <= 2.0:
        return _f_head(n, x)
    tail, _ = integrate.quad(lambda u: u ** (n - 3) / np.sqrt(1.0 - u ** (2 * n - 2)),
                             1.0 / x, 0.5, epsabs=1e-14, epsrel=1e-13, limit=200)
    return _f_head(n, 2.0) + tail


@lru_cache(maxsize=None)
def c_cat(n):
    """Limit of ``F(x) - [n = 2] log(2x)`` at infinity: the catenoid end constant."""
    if n < 3:
        raise ValueError("the catenoid end constant is finite only for n >= 3")
    tail, _ = integrate.quad(lambda u: u ** (n - 3) / np.sqrt(1.0 - u ** (2 * n - 2)),
                             0.0, 0.5, epsabs=1e-14, epsrel=1e-13, limit=200)
    return _f_head(n, 2.0) + tail


def catenoid_graph_asymptotic(n, eps, y):
    """Leading terms of ``eps F(y/eps)`` for ``y >> eps``."""
    if n == 2:
        return eps * np.log(2.0 / eps) + eps * np.log(y)
    return eps * c_cat(n) - eps ** (n - 1) / ((n - 2) * y ** (n - 2))


# ---------------------------------------------------------------- matching

@dataclass(frozen=True)
class MatchingConstants:
    n: int
    alpha: float
    tau: float
    C_n: float
    c_2: float | None = None
    c0_green: float | None = None

    @property
    def c_cat(self):
        return c_cat(self.n) if self.n >= 3 else None

    @property
    def kappa(self):
        """Slope of the sphere angle against ``|yhat|`` at the neck axis."""
        return 2.0 / np.sin(self.alpha) * np.cos(self.tau / 4.0) ** 2


@dataclass(frozen=True)
class NeckSpec:
    tau: float
    eps: float
    a_left: float
    a_right: float
    r_eps: float
    consts: MatchingConstants
    chart: object = None
    edge: tuple | None = None

    @property
    def n(self):
        return self.consts.n


def matching_constants(n, alpha, tau, c0_green=None):
    """Matching coefficients ``C_n`` (and ``c_2`` when ``n = 2``).

    ``c0_green`` is the constant of the logarithmic Green's expansion; when
    omitted for ``n = 2`` the value measured by :mod:`cmcglue.greens` is used.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < alpha < np.pi / 2 or not tau > 0:
        raise ValueError("need 0 < alpha < pi/2 and tau > 0")
    num = np.cos(2.0 * alpha + tau / 2.0)
    if abs(num) < 1e-12:
        raise DegenerateC("cos(2 alpha + tau/2) vanishes: no matching neck")
    den = (np.cos(alpha) + np.cos(alpha + tau / 2.0)) ** 2
    q = np.cos(tau / 4.0) ** 2 / np.sin(alpha)
    C = num / (den * (2.0 * q) ** (n - 2))
    if n != 2:
        return MatchingConstants(n, alpha, tau, C)
    if c0_green is None:
        from .greens import log_constant
        c0_green = log_constant()
    c2 = num * (c0_green + np.log(q)) / den
    return MatchingConstants(n, alpha, tau, C, c2, c0_green)


def _n2_residual(k, t, e):
    return k * e + e * np.log(2.0 / e) - t


def _solve_eps_n2(consts):
    return solve_log_matching(consts.c_2 / consts.C_n, consts.tau)


def solve_log_matching(k, tau):
    """Root ``eps`` of ``k eps + eps log(2/eps) = tan(tau/4)`` in ``(0, tan(tau/4))``."""
    t = np.tan(tau / 4.0)
    hi = t
    if _n2_residual(k, t, hi) <= 0:
        raise NoConvergence("no neck scale in (0, tan(tau/4)) for these constants")
    lo = t * 1e-300
    # monotone on the bracket when the derivative is positive at the top end
    e = optimize.brentq(lambda e: _n2_residual(k, t, e), lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    for _ in range(5):
        r = _n2_residual(k, t, e)
        if abs(r) < 1e-15:
            break
        d = k + np.log(2.0 / e) - 1.0
        step = r / d
        if not lo < e - step < hi:
            break
        e -= step
    if abs(_n2_residual(k, t, e)) >= 1e-13:
        raise NoConvergence(f"residual {_n2_residual(k, t, e)!r} above tolerance")
    return e


def neck_radius(n, eps):
    return eps ** ((3.0 * n - 3.0) / (3.0 * n - 2.0))


def match_parameters(consts: MatchingConstants, chart=None, edge=None) -> NeckSpec:
    """Neck scale and asymptotic parameters from the matching conditions."""
    n = consts.n
    if n >= 3:
        eps = np.tan(consts.tau / 4.0) / c_cat(n)
    else:
        eps = _solve_eps_n2(consts)
    a = eps ** (n - 1) / consts.C_n
    return NeckSpec(consts.tau, eps, a, a, neck_radius(n, eps), consts, chart, edge)


def neck_for(n, alpha, tau, c0_green=None, chart=None, edge=None) -> NeckSpec:
    return match_parameters(matching_constants(n, alpha, tau, c0_green), chart, edge)


def eps_derivative(consts: MatchingConstants):
    """``d eps / d tau`` along the matching solution."""
    t4 = consts.tau / 4.0
    sec2 = 1.0 / np.cos(t4) ** 2
    if consts.n >= 3:
        return sec2 / (4.0 * c_cat(consts.n))
    eps = _solve_eps_n2(consts)
    k = consts.c_2 / consts.C_n
    # k = c0 + log(csc(alpha) cos^2(tau/4)) carries its own tau dependence
    dk = -0.5 * np.tan(t4)
    return (0.25 * sec2 - eps * dk) / (k + np.log(2.0 / eps) - 1.0)


# ---------------------------------------------------------------- profiles

def green_asymptotic(n, a, mu, c0=0.0):
    """Singular part of the perturbation at angular distance ``mu`` from its pole."""
    if n == 2:
        return a * (c0 + np.log(mu))
    return a / mu ** (n - 2)


def _yhat_of_mu(consts, a, mu):
    al, h = consts.alpha, consts.alpha + consts.tau / 2.0
    g = consts.alpha + green_asymptotic(consts.n, a, mu, consts.c0_green or 0.0)
    return np.sin(g) * np.sin(mu) / (1.0 + np.cos(h) * np.cos(g) + np.sin(h) * np.sin(g) * np.cos(mu)), g, al


def invert_profile_angle(consts, a, ynorm):
    """Angle ``mu`` on the perturbed sphere whose chart image has ``|yhat| = ynorm``."""
    if not 0 < ynorm <= PROFILE_YMAX:
        raise InversionFailure(f"|yhat| = {ynorm!r} outside (0, {PROFILE_YMAX}]")
    n = consts.n
    lo = 1e-3 * consts.kappa * ynorm
    if a != 0.0 and n >= 3:
        lo = max(lo, (abs(a) / 0.2) ** (1.0 / (n - 2)))
    f = lambda m: _yhat_of_mu(consts, a, m)[0] - ynorm
    if f(lo) >= 0:
        raise InversionFailure("perturbation too large near the neck axis")
    # walk outward to the first sign change
    hi = lo
    while f(hi) < 0:
        lo, hi = hi, 1.25 * hi
        if hi > np.pi / 2:
            raise InversionFailure("profile relation is not invertible at this |yhat|")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def sphere_graph_profile(consts: MatchingConstants, a, ynorm):
    """Height ``y^1`` of the perturbed sphere's chart image over ``|yhat| = ynorm``.

    Uses the exact normal-graph relation with the Green's singular part
    as perturbation; the unperturbed value at ``ynorm = 0`` is ``-tan(tau/4)``.
    """
    mu = invert_profile_angle(consts, a, ynorm)
    g = consts.alpha + green_asymptotic(consts.n, a, mu, consts.c0_green or 0.0)
    c = np.cos(g) + np.cos(consts.alpha + consts.tau / 2.0)
    r_g = np.sin(g) / c
    d_g = np.sin(consts.alpha + consts.tau / 2.0) / c
    return -d_g + np.sqrt(r_g * r_g - ynorm * ynorm)


def profile_expansion(consts: MatchingConstants, a, ynorm):
    """Leading-order expansion of :func:`sphere_graph_profile`.

    The singular coefficient is the exact first variation of the profile in
    the perturbation, ``sec^2(tau/4) / (2 kappa^(n-2))``.
    """
    from .sphere_geom import image_sphere
    r, _ = image_sphere(consts.alpha, consts.tau)
    base = -np.tan(consts.tau / 4.0) - ynorm ** 2 / (2.0 * r)
    w = 0.5 / np.cos(consts.tau / 4.0) ** 2
    n = consts.n
    if n == 2:
        return base + w * a * ((consts.c0_green or 0.0) + np.log(consts.kappa * ynorm))
    return base + w * a / (consts.kappa * ynorm) ** (n - 2)


def cutoff(s):
    """Quintic smoothstep: 0 on [0, 1/2], 1 on [2, inf), C^2 in between."""
    x = np.clip((np.asarray(s, dtype=float) - 0.5) / 1.5, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def blend_graph(neck: NeckSpec, side: int, ynorm):
    """Height of the glued surface over ``|yhat| = ynorm`` on one side of the neck.

    ``side = -1`` is the half attached to the sphere on the negative
    ``y^1`` axis, ``side = +1`` its mirror.  The catenoid half is
    ``side * eps F(ynorm/eps)``; the sphere half is the exact profile, whose
    mirror image is used on the positive side.
    """
    if side not in (-1, 1):
        raise ValueError("side must be +1 or -1")
    if not neck.eps * (1 - 1e-14) <= ynorm <= 2.0 * neck.r_eps * (1 + 1e-14):
        raise OutOfBand(f"|yhat| = {ynorm!r} outside [eps, 2 r_eps]")
    ynorm = max(ynorm, neck.eps)
    eta = float(cutoff(ynorm / neck.r_eps))
    cat = side * neck.eps * catenoid_graph_F(neck.n, ynorm / neck.eps)
    if eta == 0.0:
        return cat
    a = neck.a_left if side < 0 else neck.a_right
    sph = -side * sphere_graph_profile(neck.consts, a, ynorm)
    return (1.0 - eta) * cat + eta * sph
