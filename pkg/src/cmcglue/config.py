"""Geodesic networks, sphere placement, adjacency and symmetry constraints."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import sphere_geom as sg
from .errors import (ClosureViolation, GroupClosureOverflow, JunctionMismatch,
                     NonPositiveSeparation, OverlappingSpheres)

JUNCTION_TOL = 1e-10
CLOSURE_TOL = 1e-10
PARALLEL_TOL = 1e-9
GROUP_CAP = 10_000


@dataclass(frozen=True)
class GeodesicSegment:
    """Arc ``t -> cos(t0 + t) e1 + sin(t0 + t) e2`` for ``0 <= t <= arc_length``.

    ``arc_length`` already includes ``2 pi winding``.
    """

    e1: np.ndarray
    e2: np.ndarray
    start_angle: float
    arc_length: float
    winding: int = 0

    def __post_init__(self):
        e1 = np.asarray(self.e1, dtype=float)
        e2 = np.asarray(self.e2, dtype=float)
        if e1.shape != e2.shape or e1.ndim != 1:
            raise ValueError("plane vectors must be 1-d arrays of equal length")
        if (abs(e1 @ e2) > 1e-12 or abs(e1 @ e1 - 1) > 1e-12 or abs(e2 @ e2 - 1) > 1e-12):
            raise ValueError("plane vectors must be orthonormal")
        if not self.arc_length > 0:
            raise ValueError("arc_length must be positive")
        if self.winding < 0:
            raise ValueError("winding must be nonnegative")
        object.__setattr__(self, "e1", e1)
        object.__setattr__(self, "e2", e2)

    @property
    def dim(self) -> int:
        return self.e1.size

    def point(self, t):
        a = self.start_angle + t
        return np.cos(a) * self.e1 + np.sin(a) * self.e2

    def tangent(self, t):
        a = self.start_angle + t
        return -np.sin(a) * self.e1 + np.cos(a) * self.e2

    def endpoint(self, end: str):
        return self.point(0.0 if end == "start" else self.arc_length)

    def outward(self, end: str):
        """Unit direction leaving the junction along this segment."""
        return self.tangent(0.0) if end == "start" else -self.tangent(self.arc_length)


@dataclass(frozen=True)
class GeodesicNetwork:
    segments: tuple
    contacts: tuple  # (segment index, "start" | "finish", junction id)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "contacts", tuple((int(s), str(e), j) for s, e, j in self.contacts))
        for s, e, _ in self.contacts:
            if e not in ("start", "finish"):
                raise ValueError(f"contact end must be 'start' or 'finish', got {e!r}")
            if not 0 <= s < len(self.segments):
                raise ValueError(f"contact references missing segment {s}")

    @property
    def dim(self) -> int:
        return self.segments[0].dim


@dataclass
class ValidationReport:
    dangling: list = field(default_factory=list)
    parallel: list = field(default_factory=list)
    mismatched: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.dangling or self.parallel or self.mismatched)

    def as_dict(self):
        return {"ok": self.ok, "dangling": self.dangling, "parallel": self.parallel,
                "mismatched": self.mismatched}


def validate_network(net: GeodesicNetwork) -> ValidationReport:
    """Check the network for boundary points, tangential meetings and bad junctions.

    Two contacts whose outward directions agree overlap along a common arc
    and are reported as parallel.  Opposite outward directions describe a
    smooth continuation of one geodesic and are allowed.
    """
    rep = ValidationReport()
    junctions: dict = {}
    for s, e, j in net.contacts:
        junctions.setdefault(j, []).append((s, e))
    for s, seg in enumerate(net.segments):
        for e in ("start", "finish"):
            if not any(c[0] == s and c[1] == e for c in net.contacts):
                rep.dangling.append({"segment": s, "end": e})
    for j, members in junctions.items():
        if len(members) < 2:
            s, e = members[0]
            rep.dangling.append({"segment": s, "end": e, "junction": j})
        ref = net.segments[members[0][0]].endpoint(members[0][1])
        for s, e in members[1:]:
            gap = float(np.linalg.norm(net.segments[s].endpoint(e) - ref))
            if gap > JUNCTION_TOL:
                rep.mismatched.append({"junction": j, "segment": s, "end": e, "gap": gap})
        for (s1, e1), (s2, e2) in itertools.combinations(members, 2):
            if (s1, e1) == (s2, e2):
                continue
            c = float(net.segments[s1].outward(e1) @ net.segments[s2].outward(e2))
            if c > 1.0 - PARALLEL_TOL:
                rep.parallel.append({"junction": j, "pair": [[s1, e1], [s2, e2]], "cos": c})
    return rep


def solve_closure(arc_length, m, N, alpha):
    """Separation ``tau`` with ``arc_length = N (2 alpha + tau)``.

    ``arc_length`` already includes the ``2 pi m`` windings; ``m`` is only
    carried for bookkeeping.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < alpha < np.pi / 2:
        raise ValueError("alpha must lie in (0, pi/2)")
    tau = arc_length / N - 2.0 * alpha
    if tau <= 1e-14:
        raise NonPositiveSeparation(f"tau = {tau!r} <= 0 for N={N}, alpha={alpha!r}")
    return tau


@dataclass(frozen=True)
class SphereConfiguration:
    """Spheres of radius ``alpha`` along a geodesic network.

    Attributes
    ----------
    base_points : (M, n+2) array of undisplaced centres.
    frames : (M, n+2, n+2) rotations; row 0 is the base point, rows 1.. an
        orthonormal tangent basis whose first vector follows the geodesic.
    sigmas : (M, n+2) ambient displacement vectors, tangent at base points.
    centers : (M, n+2) displaced centres ``exp(base, sigma)``.
    tags : per sphere, the list of (segment, k) labels it carries.
    edges : sorted list of adjacent sphere index pairs.
    """

    n: int
    alpha: float
    network: GeodesicNetwork
    counts: tuple
    taus: tuple
    base_points: np.ndarray
    frames: np.ndarray
    sigmas: np.ndarray
    centers: np.ndarray
    tags: tuple
    edges: tuple

    @property
    def size(self) -> int:
        return self.base_points.shape[0]

    @property
    def dim(self) -> int:
        return self.n + 2

    @property
    def tdim(self) -> int:
        """Dimension of each tangent block."""
        return self.n + 1

    def tangent_basis(self, i):
        return self.frames[i, 1:]

    def coords_to_sigmas(self, coords):
        c = np.asarray(coords, dtype=float).reshape(self.size, self.tdim)
        return np.einsum("ik,ikd->id", c, self.frames[:, 1:])

    def sigmas_to_coords(self, sigmas):
        s = np.asarray(sigmas, dtype=float).reshape(self.size, self.dim)
        return np.einsum("ikd,id->ik", self.frames[:, 1:], s).ravel()

    def with_sigmas(self, sigmas) -> "SphereConfiguration":
        sig = np.asarray(sigmas, dtype=float).reshape(self.size, self.dim)
        _check_tangent(self.base_points, sig)
        centers = np.array([sg.exp_point(p, s) for p, s in zip(self.base_points, sig)])
        return replace(self, sigmas=sig, centers=centers)

    def with_coords(self, coords) -> "SphereConfiguration":
        return self.with_sigmas(self.coords_to_sigmas(coords))

    def neighbors(self, i):
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return out


def _check_tangent(base, sig):
    bad = np.abs(np.sum(base * sig, axis=1))
    if np.any(bad > 1e-10):
        raise ValueError("displacements must be tangent to their base points")


def place_spheres(net: GeodesicNetwork, alpha, taus, sigmas=None) -> SphereConfiguration:
    """Place spheres at ``gamma_s(k (2 alpha + tau_s))`` and identify coincident ones.

    ``sigmas`` is indexed by sphere id after identification (the order of
    first appearance walking segments in order); ``None`` means zero.
    """
    dim = net.dim
    taus = tuple(float(t) for t in taus)
    if len(taus) != len(net.segments):
        raise ValueError("one tau per segment is required")
    counts = []
    for seg, tau in zip(net.segments, taus):
        if tau <= 0:
            raise NonPositiveSeparation(f"tau = {tau!r}")
        step = 2.0 * alpha + tau
        N = max(1, int(round(seg.arc_length / step)))
        if abs(seg.arc_length - N * step) > CLOSURE_TOL:
            raise ClosureViolation(
                f"arc {seg.arc_length!r} is not a multiple of 2 alpha + tau = {step!r}")
        counts.append(N)

    pts, frames, tags, labels = [], [], [], {}
    for s, (seg, N, tau) in enumerate(zip(net.segments, counts, taus)):
        step = 2.0 * alpha + tau
        for k in range(N + 1):
            x = seg.point(k * step)
            idx = next((i for i, q in enumerate(pts) if np.linalg.norm(q - x) < JUNCTION_TOL), None)
            if idx is None:
                idx = len(pts)
                pts.append(x)
                frames.append(sg.complete_frame([x, seg.tangent(k * step)], dim))
                if np.linalg.det(frames[-1]) < 0:
                    frames[-1][-1] *= -1
                tags.append([])
            tags[idx].append((s, k))
            labels[(s, k)] = idx

    # junction contacts must land on one shared sphere
    junctions: dict = {}
    for s, e, j in net.contacts:
        k = 0 if e == "start" else counts[s]
        junctions.setdefault(j, set()).add(labels[(s, k)])
    for j, ids in junctions.items():
        if len(ids) > 1:
            raise JunctionMismatch(f"junction {j!r} maps to distinct spheres {sorted(ids)}")

    edges = set()
    for s, N in enumerate(counts):
        for k in range(N):
            a, b = labels[(s, k)], labels[(s, k + 1)]
            if a != b:
                edges.add((min(a, b), max(a, b)))

    base = np.array(pts)
    M = base.shape[0]
    sig = np.zeros((M, dim)) if sigmas is None else np.asarray(sigmas, dtype=float).reshape(M, dim)
    _check_tangent(base, sig)
    centers = np.array([sg.exp_point(p, v) for p, v in zip(base, sig)])
    return SphereConfiguration(
        n=dim - 2, alpha=float(alpha), network=net, counts=tuple(counts), taus=taus,
        base_points=base, frames=np.array(frames), sigmas=sig, centers=centers,
        tags=tuple(tuple(t) for t in tags), edges=tuple(sorted(edges)))


def _pairwise_dist(c):
    diff = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    summ = np.linalg.norm(c[:, None, :] + c[None, :, :], axis=2)
    return 2.0 * np.arctan2(diff, summ)


def neighbor_graph(cfg: SphereConfiguration):
    """Edges ``(i, j, tau_edge)`` with ``tau_edge = dist(p_i, p_j) - 2 alpha``.

    Raises
    ------
    OverlappingSpheres
        If any two displaced centres are within ``2 alpha`` of each other.
    """
    d = _pairwise_dist(cfg.centers)
    d[np.diag_indices_from(d)] = np.inf
    if np.any(d <= 2.0 * cfg.alpha):
        i, j = np.argwhere(d <= 2.0 * cfg.alpha)[0]
        raise OverlappingSpheres(f"spheres {i} and {j} overlap")
    return [(i, j, float(d[i, j]) - 2.0 * cfg.alpha) for i, j in cfg.edges]


def rotate_configuration(cfg: SphereConfiguration, Q) -> SphereConfiguration:
    """Image of the whole configuration (network, frames, displacements) under ``Q``."""
    Q = np.asarray(Q, dtype=float)
    segs = tuple(replace(seg, e1=Q @ seg.e1, e2=Q @ seg.e2) for seg in cfg.network.segments)
    net = GeodesicNetwork(segs, cfg.network.contacts)
    return replace(cfg, network=net, base_points=cfg.base_points @ Q.T,
                   frames=cfg.frames @ Q.T, sigmas=cfg.sigmas @ Q.T, centers=cfg.centers @ Q.T)


@dataclass(frozen=True)
class SymmetrySpec:
    generators: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "generators",
                           tuple(np.asarray(g, dtype=float) for g in self.generators))


def generate_group(generators, dim, cap=GROUP_CAP):
    """All products of ``generators``; raises ``GroupClosureOverflow`` past ``cap``."""
    def key(m):
        return np.round(m, 7).tobytes()

    identity = np.eye(dim)
    elems = {key(identity): identity}
    frontier = [identity]
    gens = [np.asarray(g, dtype=float) for g in generators]
    while frontier:
        nxt = []
        for h in frontier:
            for g in gens:
                m = g @ h
                k = key(m + 0.0)
                if k not in elems:
                    elems[k] = m
                    nxt.append(m)
                    if len(elems) > cap:
                        raise GroupClosureOverflow(f"group exceeds {cap} elements")
        frontier = nxt
    return list(elems.values())


def sphere_permutation(cfg: SphereConfiguration, g, tol=1e-9):
    """Index map ``i -> j`` with ``g p_i = p_j`` over base points."""
    img = cfg.base_points @ np.asarray(g).T
    perm = []
    for x in img:
        d = np.linalg.norm(cfg.base_points - x, axis=1)
        j = int(np.argmin(d))
        if d[j] > tol:
            raise ValueError("symmetry generator does not preserve the sphere centres")
        perm.append(j)
    return perm


def symmetry_action(cfg: SphereConfiguration, g):
    """Orthogonal matrix of ``g`` acting on stacked tangent coordinates."""
    perm = sphere_permutation(cfg, g)
    t = cfg.tdim
    out = np.zeros((cfg.size * t, cfg.size * t))
    for i, j in enumerate(perm):
        out[j * t:(j + 1) * t, i * t:(i + 1) * t] = cfg.frames[j, 1:] @ g @ cfg.frames[i, 1:].T
    return out


def constraint_projector(cfg: SphereConfiguration, sym: SymmetrySpec | None = None):
    """Orthogonal projector onto displacement coordinates invariant under ``sym``."""
    d = cfg.size * cfg.tdim
    if sym is None or not sym.generators:
        return np.eye(d)
    group = generate_group(sym.generators, cfg.dim)
    P = np.zeros((d, d))
    for g in group:
        P += symmetry_action(cfg, g)
    P /= len(group)
    return 0.5 * (P + P.T)


def projector_basis(P):
    """Orthonormal basis (columns) of the range of a projector."""
    w, v = np.linalg.eigh(P)
    return v[:, w > 0.5]


def best_rational(x, max_den=10**6):
    fr = Fraction(x).limit_denominator(max_den)
    return fr, abs(x - fr.numerator / fr.denominator)


def commensurability_check(net: GeodesicNetwork, tol=1e-9):
    """Rational approximations of segment lengths and plane angles, in units of 2 pi."""
    segs = []
    for s, seg in enumerate(net.segments):
        fr, defect = best_rational(seg.arc_length / (2 * np.pi))
        segs.append({"segment": s, "ratio": [fr.numerator, fr.denominator],
                     "defect": defect, "flagged": defect > tol})
    planes = []
    for a, b in itertools.combinations(range(len(net.segments)), 2):
        ea = np.column_stack([net.segments[a].e1, net.segments[a].e2])
        eb = np.column_stack([net.segments[b].e1, net.segments[b].e2])
        cosines = np.clip(np.linalg.svd(ea.T @ eb, compute_uv=False), -1.0, 1.0)
        entry = {"pair": [a, b], "principal_cosines": cosines.tolist(),
                 "principal_angles": np.arccos(cosines).tolist()}
        entry["angle_defects"] = [best_rational(t / (2 * np.pi))[1] for t in entry["principal_angles"]]
        entry["cosine_defects"] = [best_rational(c / (2 * np.pi))[1] for c in cosines]
        planes.append(entry)
    return {"segments": segs, "planes": planes,
            "flagged": any(s["flagged"] for s in segs)}


def great_circle_network(planes, dim=None):
    """Split great circles at their mutual crossings into a junction network.

    ``planes`` is a sequence of ``(e1, e2)`` orthonormal pairs.  Each circle
    becomes one or more arcs between consecutive crossing points; a circle
    with no crossings becomes a single closed segment.
    """
    planes = [(np.asarray(a, float), np.asarray(b, float)) for a, b in planes]
    crossings = []  # points
    for (a1, b1), (a2, b2) in itertools.combinations(planes, 2):
        m = np.column_stack([a1, b1, -a2, -b2])
        _, sv, vt = np.linalg.svd(m)
        if sv[-2] < 1e-12:
            raise ValueError("two circles coincide")
        if sv[-1] < 1e-10:
            x = sg.unit(vt[-1][0] * a1 + vt[-1][1] * b1)
            for y in (x, -x):
                if not any(np.linalg.norm(y - z) < 1e-9 for z in crossings):
                    crossings.append(y)
    segments, contacts = [], []
    for c, (a, b) in enumerate(planes):
        angles = sorted({round(float(np.arctan2(z @ b, z @ a)) % (2 * np.pi), 12)
                         for z in crossings if abs(z @ a) ** 2 + abs(z @ b) ** 2 > 1 - 1e-9})
        if not angles:
            s = len(segments)
            segments.append(GeodesicSegment(a, b, 0.0, 2 * np.pi))
            contacts += [(s, "start", f"loop{c}"), (s, "finish", f"loop{c}")]
            continue
        for i, t0 in enumerate(angles):
            t1 = angles[(i + 1) % len(angles)] + (2 * np.pi if i + 1 == len(angles) else 0.0)
            s = len(segments)
            segments.append(GeodesicSegment(a, b, t0, t1 - t0))
            contacts.append((s, "start", _junction_name(crossings, np.cos(t0) * a + np.sin(t0) * b)))
            contacts.append((s, "finish", _junction_name(crossings, np.cos(t1) * a + np.sin(t1) * b)))
    return GeodesicNetwork(tuple(segments), tuple(contacts))


def _junction_name(crossings, x):
    d = [np.linalg.norm(x - z) for z in crossings]
    return f"x{int(np.argmin(d))}"
