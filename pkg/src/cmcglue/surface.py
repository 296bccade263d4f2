"""Glued approximate hypersurface: patches, mean curvature, weights, Jacobi fields, mesh export.

Spherical regions are normal graphs ``exp(G N)`` over the spheres of radius
``alpha``; neck and transition regions are graphs in the canonical pair
chart of each edge.  Patches are stored as point grids whose columns wrap
around; adjacent patches share their seam points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

from . import greens, neck
from . import sphere_geom as sg
from .errors import GridTooCoarse, NoConvergence, PatchMismatch, PoleOnSurface

SEAM_TOL = 1e-8
NEWTON_TOL = 1e-13
MATCH_ITERS = 12
DEFAULT_DELTA = -0.5


# ---------------------------------------------------------------- labels and patches

@dataclass(frozen=True)
class RegionLabel:
    """``kind`` is ``spherical`` (index = sphere), ``neck`` or ``transition`` (index = edge)."""

    kind: str
    index: int
    side: int = 0

    def __str__(self):
        if self.kind == "transition":
            return f"transition:{self.index}:{self.side:+d}"
        return f"{self.kind}:{self.index}"


@dataclass
class ParametricPatch:
    label: RegionLabel
    params: np.ndarray          # (rows, cols, k) parameter values
    points: np.ndarray          # (rows, cols, n+2) points on S^{n+1}
    H: np.ndarray | None = None
    data: dict = field(default_factory=dict)
    grid: bool = True           # False: scattered samples, not triangulable

    @property
    def resolution(self):
        return self.points.shape[:2]


# ---------------------------------------------------------------- exact normal-graph curvature

def h_alpha(n, alpha):
    return n / np.tan(alpha)


def mean_curvature_sphere_graph(n, alpha, G, grad, hess):
    """Mean curvature of ``exp(G N)(S_alpha)`` from the jet of ``G`` on the unit S^n.

    ``grad`` and ``hess`` are ambient representations of the gradient and
    covariant Hessian (see :func:`cmcglue.greens.green_jet`).  The normal
    points away from the sphere centre; ``G = 0`` gives ``n cot(alpha)``.
    """
    G = np.asarray(G, dtype=float)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    r = alpha + G
    sn, cs = np.sin(r), np.cos(r)
    g2 = np.einsum("...i,...i->...", grad, grad)
    lap = np.einsum("...ii->...", hess)
    hgg = np.einsum("...i,...ij,...j->...", grad, hess, grad)
    A = np.sqrt(sn * sn + g2)
    return (n * sn * cs - lap) / (A * sn) + (hgg + cs * sn * g2) / (A ** 3 * sn)


def linearized_operator(n, alpha, G, lap):
    """``L_alpha G = sin^-2(alpha) (Delta + n) G``."""
    return (np.asarray(lap) + n * np.asarray(G)) / np.sin(alpha) ** 2


# ---------------------------------------------------------------- chart curvature

def _fd_derivatives(embed, u, h):
    m, k = u.shape
    E = np.eye(k) * np.asarray(h, dtype=float)[:, None]
    offsets = [np.zeros(k)]
    for a in range(k):
        offsets += [E[a], -E[a]]
        for b in range(a + 1, k):
            offsets += [E[a] + E[b], E[a] - E[b], -E[a] + E[b], -E[a] - E[b]]
    # one embed call over the whole stencil
    F = embed(np.concatenate([u + o for o in offsets]))
    F = F.reshape((len(offsets), m) + F.shape[1:])
    f0 = F[0]
    first = np.zeros(f0.shape + (k,))
    second = np.zeros(f0.shape + (k, k))
    i = 1
    for a in range(k):
        fp, fm = F[i], F[i + 1]
        i += 2
        first[..., a] = (fp - fm) / (2 * h[a])
        second[..., a, a] = (fp - 2 * f0 + fm) / h[a] ** 2
        for b in range(a + 1, k):
            fpp, fpm, fmp, fmm = F[i:i + 4]
            i += 4
            second[..., a, b] = second[..., b, a] = (fpp - fpm - fmp + fmm) / (4 * h[a] * h[b])
    return f0, first, second


def _chart_H(embed, u, h, hint, metric, A_flat):
    y, J, D2 = _fd_derivatives(embed, u, h)
    nrm = np.linalg.svd(J)[0][..., -1]
    s = np.sign(np.einsum("mi,mi->m", nrm, hint(y)))
    nrm = nrm * np.where(s == 0, 1.0, s)[:, None]
    I = np.einsum("mia,mib->mab", J, J)
    II = np.einsum("mi,miab->mab", nrm, D2)
    H0 = -np.einsum("mab,mba->m", np.linalg.inv(I), II)
    if metric == "flat":
        return A_flat * H0
    A = sg.conformal_factor(y)
    k = u.shape[1]
    return A * H0 - k * np.einsum("mi,mi->m", nrm, y)


def mean_curvature_chart(embed, params, steps, hint, metric="conformal", richardson=True,
                         check=True, A_flat=0.5, scale=1.0):
    """Mean curvature of a parametric hypersurface in a stereographic chart.

    ``embed`` maps an ``(m, k)`` array of parameters to ``(m, k+1)`` chart
    points, ``steps`` are the finite-difference steps per parameter and
    ``hint(y)`` returns vectors on the side of the wanted normal.  With
    ``metric = "conformal"`` the ambient metric is ``A^-2`` times Euclidean,
    ``A = (1 + |y|^2)/2``; with ``"flat"`` it is the constant ``A_flat^-2``.
    Central differences at ``h`` and ``2h`` are combined by Richardson
    extrapolation; a disagreement above 10% of ``max(|H|, scale)`` raises
    :class:`GridTooCoarse`.
    """
    u = np.atleast_2d(np.asarray(params, dtype=float))
    h = np.asarray(steps, dtype=float) * np.ones(u.shape[1])
    H1 = _chart_H(embed, u, h, hint, metric, A_flat)
    if not richardson and not check:
        return H1
    H2 = _chart_H(embed, u, 2 * h, hint, metric, A_flat)
    bad = np.abs(H1 - H2) > 0.1 * np.maximum(np.abs(H1), scale)
    if check and np.any(bad):
        raise GridTooCoarse(f"finite-difference curvature unstable at {int(bad.sum())} points")
    return (4 * H1 - H2) / 3 if richardson else H1


# ---------------------------------------------------------------- assembly data

@dataclass
class GlueData:
    """Sphere centres, frames and edges of a configuration to be glued."""

    n: int
    alpha: float
    centers: np.ndarray
    frames: np.ndarray          # rows: centre, then a tangent basis
    edges: tuple

    @classmethod
    def from_config(cls, cfg):
        frames = np.array([cfg.frames[i] @ sg.displacement_rotation(cfg.base_points[i], cfg.sigmas[i]).T
                           for i in range(cfg.size)])
        return cls(cfg.n, cfg.alpha, cfg.centers.copy(), frames, tuple(cfg.edges))

    def neighbors(self, i):
        return [b if a == i else a for a, b in self.edges if i in (a, b)]


def two_sphere_fixture(n=2, alpha=0.5, tau=0.05):
    """Two spheres joined by one neck, centred symmetrically on the (x^0, x^1) equator."""
    dim = n + 2
    h = alpha + tau / 2.0
    e0, e1 = sg.basis(dim, 0), sg.basis(dim, 1)
    centers = np.array([np.cos(h) * e0 - np.sin(h) * e1, np.cos(h) * e0 + np.sin(h) * e1])
    frames = []
    for c in centers:
        t = -np.sin(h) * e0 + np.cos(h) * e1
        t = t - c * (c @ t)
        frames.append(sg.complete_frame([c, sg.unit(t)], dim))
    return GlueData(n, alpha, centers, np.array(frames), ((0, 1),))


@dataclass
class _Edge:
    index: int
    pair: tuple
    chart: sg.StereoChart
    spec: neck.NeckSpec


@dataclass
class _Sphere:
    index: int
    center: np.ndarray
    frame: np.ndarray
    field: object                # SpectralField or None
    dirs: dict                   # neighbour -> ambient unit tangent at the centre


def _profile_guess(consts, a, rho, iters=60):
    """Vectorised profile-angle inversion; points where it fails fall back to ``kappa rho``."""
    rho = np.asarray(rho, dtype=float)
    f = lambda m: neck._yhat_of_mu(consts, a, m)[0] - rho
    lo = 1e-3 * consts.kappa * np.maximum(rho, 1e-300)
    if a != 0.0 and consts.n >= 3:
        lo = np.maximum(lo, (abs(a) / 0.2) ** (1.0 / (consts.n - 2)))
    ok = (rho > 0) & (rho <= neck.PROFILE_YMAX)
    with np.errstate(all="ignore"):
        ok &= f(lo) < 0
        hi = lo.copy()
        walking = ok.copy()
        while walking.any():
            step = walking & (f(hi) < 0)
            lo = np.where(step, hi, lo)
            hi = np.where(step, 1.25 * hi, hi)
            ok &= ~(step & (hi > np.pi / 2))
            walking = step & ok
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = f(mid) < 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
    return np.where(ok, 0.5 * (lo + hi), consts.kappa * rho)


class GluedSurface:
    """Assembled approximate solution: patches plus the data needed to evaluate them."""

    def __init__(self, data: GlueData, c0_green=None, L_max=None, matching="profile"):
        if data.n != 2:
            raise ValueError("surface assembly is supported for n = 2 only")
        if matching not in ("profile", "tabulated"):
            raise ValueError("matching must be 'profile' or 'tabulated'")
        self.data = data
        self.matching = matching
        alpha = data.alpha
        self.c0 = greens.log_constant() if c0_green is None else float(c0_green)
        pairs = []
        for e, (a, b) in enumerate(data.edges):
            chart, tau = sg.canonical_pair_frame(data.centers[a], data.centers[b], alpha)
            pairs.append((e, (a, b), chart, tau))
        c0e = [self.c0] * len(pairs)
        for _ in range(MATCH_ITERS):
            self.edges = [_Edge(e, ab, chart, self._match(tau, c0e[e], chart, ab))
                          for e, ab, chart, tau in pairs]
            self._build_spheres(L_max)
            if matching == "tabulated" or not pairs:
                break
            new = [self._source_constant(e) for e in self.edges]
            done = max(abs(x - y) for x, y in zip(new, c0e)) < 1e-12
            c0e = new
            if done:
                break
        else:
            raise NoConvergence("neck matching with the multi-source constant did not settle")
        self.edge_c0 = c0e
        self.patches: list[ParametricPatch] = []

    def _match(self, tau, c0, chart, edge):
        """Neck data for one edge.

        ``tabulated`` uses the closed-form matching constants.  ``profile`` matches
        the catenoid to the exact first variation of the sphere profile,
        whose log coefficient is ``a sec^2(tau/4)/2`` with ``a < 0``, and
        uses the constant ``c0`` of the actual field at the source.
        """
        n, alpha = self.data.n, self.data.alpha
        consts = neck.matching_constants(n, alpha, tau, c0)
        if self.matching == "tabulated":
            return neck.match_parameters(consts, chart, edge)
        eps = neck.solve_log_matching(-(c0 + np.log(consts.kappa)), tau)
        a = -2.0 * np.cos(tau / 4.0) ** 2 * eps
        return neck.NeckSpec(tau, eps, a, a, neck.neck_radius(n, eps), consts, chart, edge)

    def _build_spheres(self, L_max):
        data = self.data
        self.spheres = []
        self._source_index = {}
        for i, c in enumerate(data.centers):
            dirs, pts, wts = {}, [], []
            for e in self.edges:
                if i in e.pair:
                    j = e.pair[1] if e.pair[0] == i else e.pair[0]
                    T = sg.unit(sg.log_point(c, data.centers[j]))
                    dirs[j] = T
                    self._source_index[(i, e.index)] = len(pts)
                    pts.append(data.frames[i, 1:] @ T)
                    wts.append(e.spec.a_left if e.pair[0] == i else e.spec.a_right)
            fld = None
            if pts:
                fld = greens.solve_green(greens.GreenSpec(np.array(pts), np.array(wts)), L_max)
            self.spheres.append(_Sphere(i, c, data.frames[i], fld, dirs))

    def _source_constant(self, edge):
        """Mean over both ends of ``lim (G/a - log dist)`` at the edge's sources."""
        vals = []
        for i, a in zip(edge.pair, (edge.spec.a_left, edge.spec.a_right)):
            vals.append(greens.source_constant(self.spheres[i].field, self._source_index[(i, edge.index)]) / a)
        return float(np.mean(vals))

    # ------------------------------------------------------------ evaluation helpers

    @property
    def eps_max(self):
        return max((e.spec.eps for e in self.edges), default=0.0)

    @property
    def r_eps(self):
        return neck.neck_radius(self.data.n, self.eps_max) if self.edges else 0.0

    def sphere_jet(self, i, dirs):
        """Jet of G at ambient unit directions ``dirs`` around sphere ``i``."""
        sp = self.spheres[i]
        w = np.atleast_2d(dirs) @ sp.frame[1:].T
        if sp.field is None:
            m, d = w.shape
            return np.zeros(m), np.zeros((m, d)), np.zeros((m, d, d))
        return greens.green_jet(sp.field, w)

    def sphere_G(self, i, dirs):
        sp = self.spheres[i]
        if sp.field is None:
            return np.zeros(np.atleast_2d(dirs).shape[0])
        return greens.evaluate_green(sp.field, np.atleast_2d(dirs) @ sp.frame[1:].T)

    def sphere_points(self, i, dirs, G=None):
        sp = self.spheres[i]
        dirs = np.atleast_2d(dirs)
        if G is None:
            G = self.sphere_G(i, dirs)
        r = self.data.alpha + G
        return np.cos(r)[:, None] * sp.center[None] + np.sin(r)[:, None] * dirs

    def _sphere_of(self, edge, side):
        return edge.pair[0] if side < 0 else edge.pair[1]

    def chart_inverse_sphere(self, edge, side, yhat):
        """Directions on the side's sphere whose perturbed points have chart coordinates ``yhat``."""
        i = self._sphere_of(edge, side)
        j = edge.pair[1] if side < 0 else edge.pair[0]
        sp = self.spheres[i]
        T = sp.dirs[j]
        Bc = edge.chart.frame[2:]
        yhat = np.atleast_2d(yhat)
        rho = np.linalg.norm(yhat, axis=1)
        a = edge.spec.a_left if side < 0 else edge.spec.a_right
        mu0 = _profile_guess(edge.spec.consts, a, rho)
        z = mu0[:, None] * yhat / np.maximum(rho, 1e-300)[:, None]

        def dirs_of(z):
            t = np.linalg.norm(z, axis=1)
            v = z @ Bc
            unit = v / np.maximum(t, 1e-300)[:, None]
            return np.cos(t)[:, None] * T[None] + np.sin(t)[:, None] * unit

        def resid(z, target):
            return sg.stereo_forward(edge.chart, self.sphere_points(i, dirs_of(z)))[:, 1:] - target

        m, k = z.shape
        for _ in range(40):
            # residual and central differences in one batched field evaluation
            h = 1e-7 * np.maximum(np.linalg.norm(z, axis=1), 1e-3)
            shifts = [np.zeros_like(z)]
            for c in range(k):
                dz = np.zeros_like(z)
                dz[:, c] = h
                shifts += [dz, -dz]
            R = resid(np.concatenate([z + d for d in shifts]), np.tile(yhat, (2 * k + 1, 1))).reshape(2 * k + 1, m, k)
            r = R[0]
            if np.max(np.abs(r)) < NEWTON_TOL:
                break
            Jm = np.stack([(R[2 * c + 1] - R[2 * c + 2]) / (2 * h[:, None]) for c in range(k)], axis=2)
            z = z - np.linalg.solve(Jm, r[..., None])[..., 0]
        else:
            raise NoConvergence("chart inversion of the perturbed sphere did not converge")
        return dirs_of(z)

    def chart_height(self, edge, side, yhat):
        """Glued height ``y^1`` over ``yhat``: catenoid blended into the perturbed sphere."""
        spec = edge.spec
        yhat = np.atleast_2d(yhat)
        rho = np.linalg.norm(yhat, axis=1)
        eta = neck.cutoff(rho / spec.r_eps)
        side = np.broadcast_to(np.asarray(side, dtype=float), rho.shape)
        cat = side * spec.eps * np.arccosh(np.maximum(rho / spec.eps, 1.0))
        out = cat.copy()
        for sd in (-1, 1):
            m = (eta > 0) & (side == sd)
            if np.any(m):
                dirs = self.chart_inverse_sphere(edge, sd, yhat[m])
                y1 = sg.stereo_forward(edge.chart, self.sphere_points(self._sphere_of(edge, sd), dirs))[:, 0]
                out[m] = (1 - eta[m]) * cat[m] + eta[m] * y1
        return out

    # ------------------------------------------------------------ weight function

    def r0(self):
        if len(self.edges) < 2:
            return 0.25
        c = np.array([e.chart.center for e in self.edges])
        d = np.arccos(np.clip(c @ c.T, -1.0, 1.0))
        np.fill_diagonal(d, np.inf)
        return float(min(0.25, d.min() / 4.0))

    def weight(self, x):
        """Weight function at points of the glued surface."""
        return weight_function(self, x)


def _smooth01(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _neck_zeta(n, eps, rho):
    q = np.maximum(rho / eps, 1.0)
    s = np.arccosh(q ** (n - 1)) / (n - 1)
    return eps * np.cosh(s)


def weight_function(surf: GluedSurface, x, r0=None):
    """``eps cosh(s)`` on necks, ``sqrt(eps^2 + dist^2)`` near necks, ``2 r0`` far away.

    Quintic smoothstep interpolation over ``|yhat| in [r_eps, 2 r_eps]`` and
    ``dist in [r0, 2 r0]``.  ``r0`` defaults to a quarter of the smallest
    distance between neck centres, capped at 0.25, so the ``2 r0`` balls are
    disjoint.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r0 = surf.r0() if r0 is None else float(r0)
    zeta = np.full(x.shape[0], 2.0 * r0)
    n = surf.data.n
    for e in surf.edges:
        eps, re = e.spec.eps, e.spec.r_eps
        d = np.arccos(np.clip(x @ e.chart.center, -1.0, 1.0))
        near = d < 2 * r0
        if not np.any(near):
            continue
        mid = np.minimum(np.sqrt(eps ** 2 + d ** 2), 2 * r0)
        S = _smooth01((d - r0) / r0)
        z = (1 - S) * mid + S * 2 * r0
        inner = d < r0
        if np.any(inner):
            rho = np.linalg.norm(sg.stereo_forward(e.chart, x[inner])[:, 1:], axis=1)
            Sn = _smooth01((rho - re) / re)
            z[inner] = (1 - Sn) * _neck_zeta(n, eps, rho) + Sn * mid[inner]
        zeta[near] = z[near]
    return zeta


# ---------------------------------------------------------------- assembly

def _cos_spacing(m):
    return 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, m)))


def _angles(dirs, e, E):
    mu = np.arccos(np.clip(dirs @ e, -1.0, 1.0))
    psi = np.unwrap(np.arctan2(dirs @ E[1], dirs @ E[0]))
    return mu, psi


def assemble_surface(data, resolution=(24, 64), neck_rows=17, transition_rows=9, c0_green=None,
                     L_max=None, matching="profile") -> GluedSurface:
    """Build the patches of the glued surface for ``n = 2``.

    ``data`` is a :class:`GlueData` or a sphere configuration.
    ``resolution = (rows, cols)`` sets the spherical patch grid; ``cols``
    is shared by every patch so seams line up point for point.
    """
    if not isinstance(data, GlueData):
        data = GlueData.from_config(data)
    surf = GluedSurface(data, c0_green, L_max, matching)
    rows, K = resolution
    psi = 2 * np.pi * np.arange(K) / K
    circ = np.stack([np.cos(psi), np.sin(psi)], axis=1)
    seam_dirs = {}                  # (sphere, neighbour) -> (K, dim) directions at |yhat| = 2 r_eps
    for e in surf.edges:
        spec = e.spec
        a, b = e.pair
        # neck: catenoid parameter s with |yhat| = eps cosh s, ends forced onto r_eps
        s1 = np.arccosh(spec.r_eps / spec.eps)
        s = np.linspace(-s1, s1, neck_rows)
        rho = spec.eps * np.cosh(s)
        rho[0] = rho[-1] = spec.r_eps
        yhat = rho[:, None, None] * circ[None]
        side = np.sign(s)[:, None] * np.ones(K)
        y1 = surf.chart_height(e, side.ravel(), yhat.reshape(-1, 2)).reshape(neck_rows, K)
        y = np.concatenate([y1[..., None], yhat], axis=-1)
        params = np.stack(np.broadcast_arrays(s[:, None], psi[None]), axis=-1)
        surf.patches.append(ParametricPatch(RegionLabel("neck", e.index), params,
                                            sg.stereo_inverse(e.chart, y), data={"edge": e}))
        for sd, i, j in ((-1, a, b), (1, b, a)):
            rr = np.linspace(spec.r_eps, 2 * spec.r_eps, transition_rows)
            yh = rr[:, None, None] * circ[None]
            h = surf.chart_height(e, sd, yh[:-1].reshape(-1, 2)).reshape(transition_rows - 1, K)
            pts = sg.stereo_inverse(e.chart, np.concatenate([h[..., None], yh[:-1]], axis=-1))
            dirs = surf.chart_inverse_sphere(e, sd, yh[-1])
            seam_dirs[(i, j)] = dirs
            outer = surf.sphere_points(i, dirs)
            pts = np.concatenate([pts, outer[None]], axis=0)
            params = np.stack(np.broadcast_arrays(rr[:, None], psi[None]), axis=-1)
            surf.patches.append(ParametricPatch(RegionLabel("transition", e.index, sd), params, pts,
                                                data={"edge": e}))
    for sp in surf.spheres:
        surf.patches.append(_spherical_patch(surf, sp, seam_dirs, rows, K))
    _check_seams(surf)
    return surf


def _spherical_patch(surf, sp, seam_dirs, rows, K):
    c, F = sp.center, sp.frame
    nb = list(sp.dirs)
    u = _cos_spacing(rows)
    lab = RegionLabel("spherical", sp.index)
    if len(nb) == 0 or len(nb) == 1 or (len(nb) == 2 and np.linalg.norm(sp.dirs[nb[0]] + sp.dirs[nb[1]]) < 1e-9):
        e = sp.dirs[nb[0]] if nb else F[1]
        E = sg.complete_frame([c, e], c.size)[2:]
        psi0 = 2 * np.pi * np.arange(K) / K
        if nb:
            mu_b, psi_b = _angles(seam_dirs[(sp.index, nb[0])], e, E)
        else:
            mu_b, psi_b = np.zeros(K), psi0
        if len(nb) == 2:
            mu_a, psi_a = _angles(seam_dirs[(sp.index, nb[1])], e, E)
            order = np.arange(K)
            if np.sign(psi_a[-1] - psi_a[0]) != np.sign(psi_b[-1] - psi_b[0]):
                order = order[::-1]
                mu_a, psi_a = mu_a[order], np.unwrap(psi_a[order])
            psi_a = psi_a + 2 * np.pi * np.round((psi_b[0] - psi_a[0]) / (2 * np.pi))
        else:
            order = None
            mu_a, psi_a = np.full(K, np.pi), psi_b
        mu = (1 - u)[:, None] * mu_b[None] + u[:, None] * mu_a[None]
        ps = (1 - u)[:, None] * psi_b[None] + u[:, None] * psi_a[None]
        dirs = (np.cos(mu)[..., None] * e + np.sin(mu)[..., None]
                * (np.cos(ps)[..., None] * E[0] + np.sin(ps)[..., None] * E[1]))
        if nb:
            dirs[0] = seam_dirs[(sp.index, nb[0])]
        if len(nb) == 2:
            dirs[-1] = seam_dirs[(sp.index, nb[1])][order]
        params = np.stack([mu, ps], axis=-1)
        grid = True
    else:
        # general valence: latitude-longitude samples outside the excised caps
        e = F[1]
        E = sg.complete_frame([c, e], c.size)[2:]
        mu = np.linspace(0, np.pi, 2 * rows)[1:-1]
        ps = 2 * np.pi * np.arange(K) / K
        MU, PS = np.meshgrid(mu, ps, indexing="ij")
        dirs = (np.cos(MU)[..., None] * e + np.sin(MU)[..., None]
                * (np.cos(PS)[..., None] * E[0] + np.sin(PS)[..., None] * E[1])).reshape(-1, c.size)
        keep = np.ones(dirs.shape[0], dtype=bool)
        for j in nb:
            cap = np.max(np.arccos(np.clip(seam_dirs[(sp.index, j)] @ sp.dirs[j], -1, 1)))
            keep &= np.arccos(np.clip(dirs @ sp.dirs[j], -1, 1)) > cap
        dirs = dirs[keep][None]
        params = np.stack([MU.ravel()[keep], PS.ravel()[keep]], axis=-1)[None]
        grid = False
    flat = dirs.reshape(-1, c.size)
    G, grad, hess = surf.sphere_jet(sp.index, flat)
    pts = surf.sphere_points(sp.index, flat, G).reshape(dirs.shape)
    n, alpha = surf.data.n, surf.data.alpha
    H = mean_curvature_sphere_graph(n, alpha, G, grad, hess)
    lap = np.einsum("mii->m", hess)
    proj = H - h_alpha(n, alpha) + linearized_operator(n, alpha, G, lap)
    shape = dirs.shape[:2]
    patch = ParametricPatch(lab, params, pts, H.reshape(shape),
                            {"projected": proj.reshape(shape), "G": G.reshape(shape)}, grid)
    return patch


def _check_seams(surf):
    """Shared seam rows must agree; spherical seams are recomputed from the Newton directions."""
    by_label = {p.label: p for p in surf.patches}
    worst = 0.0
    for e in surf.edges:
        nk = by_label[RegionLabel("neck", e.index)]
        for sd, row in ((-1, 0), (1, -1)):
            tr = by_label[RegionLabel("transition", e.index, sd)]
            worst = max(worst, np.max(np.linalg.norm(nk.points[row] - tr.points[0], axis=-1)))
            i = surf._sphere_of(e, sd)
            dirs = surf.chart_inverse_sphere(e, sd, 2 * e.spec.r_eps * np.stack(
                [np.cos(tr.params[-1, :, 1]), np.sin(tr.params[-1, :, 1])], axis=1))
            y = sg.stereo_forward(e.chart, surf.sphere_points(i, dirs))
            worst = max(worst, np.max(np.abs(np.linalg.norm(y[:, 1:], axis=1) - 2 * e.spec.r_eps)))
    if worst > SEAM_TOL:
        raise PatchMismatch(f"patch seams disagree by {worst:.3g}")
    surf.seam_error = worst


# ---------------------------------------------------------------- chart curvature of glued patches

def chart_patch_curvature(surf: GluedSurface, patch: ParametricPatch, richardson=True):
    """Mean curvature of a neck or transition patch by finite differences in its chart."""
    e = patch.data["edge"]
    K = patch.points.shape[1]
    rows = patch.points.shape[0]
    if patch.label.kind == "neck":
        spec = e.spec

        def embed(u):
            s, ps = u[:, 0], u[:, 1]
            rho = spec.eps * np.cosh(s)
            yh = rho[:, None] * np.stack([np.cos(ps), np.sin(ps)], axis=1)
            return np.concatenate([surf.chart_height(e, np.sign(s), yh)[:, None], yh], axis=1)

        def hint(y):
            rho = np.linalg.norm(y[:, 1:], axis=1)
            return np.concatenate([np.zeros((y.shape[0], 1)), y[:, 1:] / rho[:, None]], axis=1)
        s = patch.params[..., 0]
        steps = (2 * np.max(np.abs(s)) / (rows - 1), 2 * np.pi / K)
    else:
        sd = patch.label.side

        def embed(u):
            yh = u[:, :1] * np.stack([np.cos(u[:, 1]), np.sin(u[:, 1])], axis=1)
            return np.concatenate([surf.chart_height(e, sd, yh)[:, None], yh], axis=1)

        def hint(y):
            rho = np.linalg.norm(y[:, 1:], axis=1)
            return np.concatenate([-sd * np.ones((y.shape[0], 1)), y[:, 1:] / rho[:, None]], axis=1)
        steps = (e.spec.r_eps / (rows - 1), 2 * np.pi / K)
    u = patch.params.reshape(-1, 2)
    H = mean_curvature_chart(embed, u, steps, hint, richardson=richardson, check=False)
    return H.reshape(rows, K)


# ---------------------------------------------------------------- reports

@dataclass
class CurvatureReport:
    delta: float
    resolution: tuple
    eps: float
    r_eps: float
    regions: dict

    def as_dict(self):
        return {"delta": self.delta, "resolution": list(self.resolution), "eps": self.eps,
                "r_eps": self.r_eps, "regions": self.regions}


def curvature_error_report(surf: GluedSurface, delta=DEFAULT_DELTA, chart_regions=True) -> CurvatureReport:
    """Sup norms of ``|H - H_alpha|`` and ``zeta^(2-delta) |H - H_alpha|`` per region type.

    Spherical regions also report the projected error ``H - H_alpha + L_alpha G``.
    """
    n, alpha = surf.data.n, surf.data.alpha
    Ha = h_alpha(n, alpha)
    w = 2.0 - delta
    acc = {}

    def put(kind, key, val):
        acc.setdefault(kind, {})
        acc[kind][key] = max(acc[kind].get(key, 0.0), float(val))

    for p in surf.patches:
        kind = p.label.kind
        if kind != "spherical" and not chart_regions:
            continue
        if p.H is None:
            p.H = chart_patch_curvature(surf, p)
        pts = p.points.reshape(-1, n + 2)
        zeta = weight_function(surf, pts)
        p.data["zeta"] = zeta.reshape(p.points.shape[:2])
        err = np.abs(p.H.ravel() - Ha)
        put(kind, "sup_abs", err.max())
        put(kind, "sup_weighted", (zeta ** w * err).max())
        if kind == "spherical":
            pr = np.abs(p.data["projected"].ravel())
            put(kind, "sup_projected", pr.max())
            put(kind, "sup_weighted_projected", (zeta ** w * pr).max())
    res = max((p.points.shape for p in surf.patches), default=(0, 0, 0))[:2]
    return CurvatureReport(delta, tuple(int(r) for r in res), surf.eps_max, surf.r_eps, acc)


def single_sphere_report(n=2, alpha=0.7, resolution=(24, 32), delta=DEFAULT_DELTA):
    """Curvature errors of the unperturbed sphere (no necks)."""
    c = sg.basis(n + 2, 0)
    data = GlueData(n, alpha, c[None], np.eye(n + 2)[None], ())
    surf = assemble_surface(data, resolution)
    return surf, curvature_error_report(surf, delta)


def error_scaling(tau_values, N=8, delta=DEFAULT_DELTA, resolution=(24, 64), c0_green=None):
    """Weighted projected spherical error of the loop surface against ``r_eps`` for several ``tau``."""
    from .balance import delaunay_loop
    rows = []
    for tau in tau_values:
        cfg = delaunay_loop(n=2, N=N, tau=tau).config
        surf = assemble_surface(cfg, resolution, c0_green=c0_green)
        rep = curvature_error_report(surf, delta, chart_regions=False)
        rows.append((tau, surf.eps_max, surf.r_eps, rep.regions["spherical"]["sup_weighted_projected"]))
    r = np.array([row[2] for row in rows])
    v = np.array([row[3] for row in rows])
    slope = float(np.polyfit(np.log(r), np.log(v), 1)[0])
    return {"rows": rows, "slope": slope, "target": 2.0 - delta,
            "monotone": bool(np.all(np.diff(v) < 0))}


# ---------------------------------------------------------------- catenoid Jacobi fields

_GL = roots_legendre(64)


def _catenoid(n, s):
    s = np.asarray(s, dtype=float)
    m = n - 1
    phi = np.cosh(m * s) ** (1.0 / m)
    dphi = phi * np.tanh(m * s)
    if n == 2:
        psi = s.copy()
    else:
        x, w = _GL
        t = 0.5 * (x[None] + 1.0) * s[..., None]
        psi = 0.5 * s * np.sum(w * np.cosh(m * t) ** ((2.0 - n) / m), axis=-1)
    return phi, psi, dphi


JACOBI_FIELDS = ("J1", "Jk", "J1k", "J0")


def catenoid_jacobi_field(n, name, s):
    """Radial factor and angular degree of the catenoid Jacobi fields.

    ``J1 = phi'/phi``, ``Jk = -Theta^k / phi^(n-1)``,
    ``J1k = Theta^k (psi / phi^(n-1) + phi')``,
    ``J0 = psi phi'/phi - phi^(2-n)``.
    """
    phi, psi, dphi = _catenoid(n, s)
    if name == "J1":
        return dphi / phi, 0
    if name == "Jk":
        return -phi ** (1.0 - n), 1
    if name == "J1k":
        return psi / phi ** (n - 1) + dphi, 1
    if name == "J0":
        return psi * dphi / phi - phi ** (2.0 - n), 0
    raise ValueError(f"unknown Jacobi field {name!r}; choose from {JACOBI_FIELDS}")


def catenoid_jacobi_residual(n, name, m, s_max=3.0, n_theta=16):
    """Sup of the discretised ``L_Sigma J`` over ``s in [-s_max, s_max]`` on ``m`` intervals.

    Second-order conservative differences in ``s``.  For ``n = 2`` the
    circle factor is sampled on ``n_theta`` points and differentiated by
    FFT; for ``n >= 3`` the angular factor is a degree-0 or degree-1
    spherical harmonic with eigenvalue ``-deg (deg + n - 2)``.
    Returns ``(residual, h)``.
    """
    s = np.linspace(-s_max, s_max, m + 1)
    h = s[1] - s[0]
    g, deg = catenoid_jacobi_field(n, name, s)
    phi = _catenoid(n, s)[0]
    phim = _catenoid(n, 0.5 * (s[1:] + s[:-1]))[0] ** (n - 2)
    flux = phim * np.diff(g) / h
    radial = np.diff(flux) / h / phi[1:-1] ** n
    pot = n * (n - 1) / phi[1:-1] ** (2 * n)
    if n == 2:
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        ang = np.cos(deg * th)
        k = np.fft.fftfreq(n_theta, 1.0 / n_theta)
        lap_ang = np.real(np.fft.ifft(-(k ** 2) * np.fft.fft(ang)))
        res = (radial[:, None] * ang[None] + g[1:-1, None] * lap_ang[None] / phi[1:-1, None] ** 2
               + pot[:, None] * g[1:-1, None] * ang[None])
    else:
        lam = -deg * (deg + n - 2)
        res = radial + lam * g[1:-1] / phi[1:-1] ** 2 + pot * g[1:-1]
    return float(np.max(np.abs(res))), float(h)


def jacobi_convergence_order(n, name, sizes=(50, 100, 200, 400)):
    vals = [catenoid_jacobi_residual(n, name, m) for m in sizes]
    r = np.array([v[0] for v in vals])
    h = np.array([v[1] for v in vals])
    return float(np.polyfit(np.log(h), np.log(r), 1)[0]), vals


def jacobi_growth_rate(n, name, interval=(1.5, 3.0), samples=61):
    """Least-squares slope of ``log |J|`` against ``s`` on ``interval``."""
    s = np.linspace(*interval, samples)
    g, _ = catenoid_jacobi_field(n, name, s)
    return float(np.polyfit(s, np.log(np.abs(g)), 1)[0])


def jacobi_linear_coefficient(n, name="J0", interval=(2.0, 3.0), samples=41):
    s = np.linspace(*interval, samples)
    g, _ = catenoid_jacobi_field(n, name, s)
    return float(np.polyfit(s, g, 1)[0])


# ---------------------------------------------------------------- mesh export

@dataclass
class Mesh:
    vertices: np.ndarray        # (V, n+2) points on S^{n+1}
    faces: np.ndarray           # (F, 3) zero-based
    regions: list
    H: np.ndarray

    @property
    def euler_characteristic(self) -> int:
        e = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                    self.faces[:, [2, 0]]]), axis=1)
        edges = np.unique(e, axis=0)
        return int(self.vertices.shape[0] - edges.shape[0] + self.faces.shape[0])


def build_mesh(surf: GluedSurface, merge_tol=1e-9) -> Mesh:
    """Triangulate every grid patch and merge coincident seam vertices."""
    from scipy.spatial import cKDTree

    pts, tris, regs, Hs = [], [], [], []
    off = 0
    for p in surf.patches:
        if not p.grid:
            raise NotImplementedError("mesh export needs grid patches; general-valence spheres are sampled")
        R, K = p.points.shape[:2]
        idx = off + np.arange(R * K).reshape(R, K)
        a, b = idx[:-1], np.roll(idx, -1, axis=1)[:-1]
        c, d = np.roll(idx, -1, axis=1)[1:], idx[1:]
        tris.append(np.stack([a, b, c], -1).reshape(-1, 3))
        tris.append(np.stack([a, c, d], -1).reshape(-1, 3))
        pts.append(p.points.reshape(-1, p.points.shape[-1]))
        regs += [str(p.label)] * (R * K)
        Hs.append(np.full(R * K, np.nan) if p.H is None else p.H.ravel())
        off += R * K
    P = np.concatenate(pts)
    F = np.concatenate(tris)
    H = np.concatenate(Hs)
    parent = np.arange(P.shape[0])

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(P).query_pairs(merge_tol):
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    reps = np.array([root(i) for i in range(P.shape[0])])
    keep, inv = np.unique(reps, return_inverse=True)
    F = inv[F]
    F = F[(F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 2] != F[:, 0])]
    F = np.unique(F, axis=0)
    return Mesh(P[keep], F, [regs[k] for k in keep], H[keep])


def stereographic_projection(x, pole):
    """Project points of S^3 (or S^{n+1}) from ``pole`` to R^{n+1}."""
    pole = sg.unit(pole)
    B = sg.complete_frame([pole], pole.size)[1:]
    t = x @ pole
    return (x @ B.T) / (1.0 - t)[:, None]


def export_mesh(surf: GluedSurface, path, pole=None):
    """Write an OBJ mesh (projected from ``pole``) and a CSV sidecar of raw coordinates.

    Returns the :class:`Mesh`.  The sidecar sits next to the OBJ with suffix
    ``.csv`` and columns ``x0..x{n+1}, region, H``.
    """
    if surf.data.n != 2:
        raise ValueError("mesh export is supported for n = 2 only")
    mesh = build_mesh(surf)
    dim = mesh.vertices.shape[1]
    pole = sg.basis(dim, dim - 1) if pole is None else np.asarray(pole, dtype=float)
    pole = sg.unit(pole)
    gap = np.min(np.arccos(np.clip(mesh.vertices @ pole, -1.0, 1.0)))
    if gap < 1e-3:
        raise PoleOnSurface(f"projection pole within {gap:.3g} of the surface")
    path = Path(path)
    y = stereographic_projection(mesh.vertices, pole)
    with open(path, "w") as fh:
        fh.write(f"# euler_characteristic {mesh.euler_characteristic}\n")
        for v in y:
            fh.write("v " + " ".join(repr(float(c)) for c in v) + "\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")
    side = path.with_suffix(".csv")
    with open(side, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(dim)] + ["region", "H"])
        for v, r, h in zip(mesh.vertices, mesh.regions, mesh.H):
            w.writerow([repr(float(c)) for c in v] + [r, repr(float(h))])
    return mesh


def read_sidecar(path):
    """Vertices, region labels and H values from a sidecar written by :func:`export_mesh`."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        dim = sum(h.startswith("x") for h in header)
        rows = list(r)
    V = np.array([[float(c) for c in row[:dim]] for row in rows])
    return V, [row[dim] for row in rows], np.array([float(row[dim + 1]) for row in rows])
