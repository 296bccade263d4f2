"""Geometry primitives on the unit sphere S^{n+1} in R^{n+2}.

Points and tangent vectors are plain ``numpy`` arrays of length n+2.  Points
are renormalised on entry, tangent vectors are used as given.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AntipodalPoints, ChartPole, DegeneratePair

UNIT_TOL = 1e-12
ANTIPODAL_TOL = 1e-9


def unit(x):
    """Return ``x`` rescaled to unit length."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm == 0.0:
        raise ValueError("zero vector has no direction")
    return x / nrm


def basis(dim, k):
    """The standard basis vector e_k of R^dim."""
    e = np.zeros(dim)
    e[k] = 1.0
    return e


def tangent_project(p, v):
    """Orthogonal projection of ``v`` onto the tangent space at ``p``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - p * np.dot(p, v)


def dist(p, q) -> float:
    """Great-circle distance, computed stably through atan2."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(2.0 * np.arctan2(np.linalg.norm(p - q), np.linalg.norm(p + q)))


def exp_point(p, v):
    """Great-circle exponential map ``cos|v| p + sin|v| v/|v|``."""
    p = unit(p)
    v = np.asarray(v, dtype=float)
    t = np.linalg.norm(v)
    if t == 0.0:
        return p.copy()
    return unit(np.cos(t) * p + np.sin(t) * (v / t))


def log_point(p, q):
    """Inverse of :func:`exp_point`: the tangent vector at ``p`` pointing to ``q``.

    Raises
    ------
    AntipodalPoints
        If ``<p, q> < -1 + 1e-9``.
    """
    p = unit(p)
    q = unit(q)
    c = float(np.dot(p, q))
    if c < -1.0 + ANTIPODAL_TOL:
        raise AntipodalPoints(f"<p,q> = {c!r}: log undefined near the antipode")
    w = q - c * p
    s = np.linalg.norm(w)
    if s == 0.0:
        return np.zeros_like(p)
    return dist(p, q) * w / s


def rotation_in_plane(a, b, theta):
    """Rotation by ``theta`` in the oriented plane spanned by orthonormal ``a, b``.

    Sends ``a`` to ``cos(theta) a + sin(theta) b`` and fixes the orthogonal
    complement of the plane.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dim = a.size
    return (np.eye(dim)
            + np.sin(theta) * (np.outer(b, a) - np.outer(a, b))
            + (np.cos(theta) - 1.0) * (np.outer(a, a) + np.outer(b, b)))


def coordinate_rotation(dim, i, j, theta):
    """The rotation R^{ij}_theta of the (x^i, x^j) plane."""
    return rotation_in_plane(basis(dim, i), basis(dim, j), theta)


def displacement_rotation(p0, sigma):
    """Rotation generated by the rank-two skew map attached to ``(p0, sigma)``.

    The result is the exponential of the skew matrix ``sigma p0^T - p0 sigma^T``
    so that it carries ``p0`` to ``exp_point(p0, sigma)`` and fixes every
    vector orthogonal to both ``p0`` and ``sigma``.
    """
    p0 = unit(p0)
    sigma = np.asarray(sigma, dtype=float)
    t = np.linalg.norm(sigma)
    if t == 0.0:
        return np.eye(p0.size)
    return rotation_in_plane(p0, sigma / t, t)


def is_orthogonal(m, tol=1e-10) -> bool:
    m = np.asarray(m, dtype=float)
    return bool(np.max(np.abs(m.T @ m - np.eye(m.shape[0]))) < tol)


@dataclass(frozen=True)
class StereoChart:
    """Stereographic chart ``K o R`` centred at ``R^{-1} e_0``.

    Attributes
    ----------
    frame : ndarray
        Orthogonal matrix ``R`` carrying the chart centre to ``e_0``.
    """

    frame: np.ndarray

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    @property
    def center(self):
        return self.frame[0].copy()

    @classmethod
    def standard(cls, dim):
        return cls(np.eye(dim))


def stereo_forward(chart, x):
    """Map a sphere point (or an (m, n+2) array of them) into R^{n+1}."""
    z = np.asarray(x, dtype=float) @ chart.frame.T
    den = 1.0 + z[..., 0]
    if np.any(den < 1e-14):
        raise ChartPole("point at the antipode of the chart centre")
    return z[..., 1:] / den[..., None]


def stereo_inverse(chart, y):
    """Inverse of :func:`stereo_forward`; accepts one point or an array of them."""
    y = np.asarray(y, dtype=float)
    s = np.sum(y * y, axis=-1)
    z = np.concatenate([((1.0 - s) / (1.0 + s))[..., None], 2.0 * y / (1.0 + s)[..., None]], axis=-1)
    return z @ chart.frame


def conformal_factor(y):
    """``A(y) = (1 + |y|^2)/2``; the chart metric is ``A^{-2}`` times Euclidean."""
    y = np.asarray(y, dtype=float)
    return 0.5 * (1.0 + np.sum(y * y, axis=-1))


def complete_frame(vectors, dim):
    """Extend orthonormal ``vectors`` to an orthonormal basis of R^dim.

    Standard basis vectors are appended in order and Gram-Schmidt'ed; a
    candidate is accepted when its residual norm exceeds 1/2 of the best
    remaining one, which keeps the completion deterministic and stable.
    """
    cols = [np.asarray(v, dtype=float) for v in vectors]
    while len(cols) < dim:
        q = np.array(cols)
        best, best_norm = None, -1.0
        for k in range(dim):
            r = basis(dim, k)
            r = r - q.T @ (q @ r)
            r = r - q.T @ (q @ r)
            nr = np.linalg.norm(r)
            if nr > best_norm + 1e-12:
                best, best_norm = r, nr
        cols.append(best / best_norm)
    return np.array(cols)


def canonical_pair_frame(p, pp, alpha):
    """Chart adapted to the pair of spheres of radius ``alpha`` centred at ``p, pp``.

    The frame sends the midpoint of the connecting geodesic to ``e_0`` and the
    geodesic to the (x^0, x^1) equator, with ``p`` at negative and ``pp`` at
    positive x^1, each at angular distance dist(p, pp)/2 from ``e_0``.

    Returns
    -------
    chart : StereoChart
    tau : float
        ``dist(p, pp) - 2 alpha``.
    """
    p = unit(p)
    pp = unit(pp)
    m = p + pp
    u = pp - p
    if np.linalg.norm(m) < 1e-9 or np.linalg.norm(u) < 1e-9:
        raise DegeneratePair("pair frame needs two distinct non-antipodal points")
    m = unit(m)
    u = unit(u - m * np.dot(m, u))
    rows = complete_frame([m, u], p.size)
    if np.linalg.det(rows) < 0:
        rows[-1] = -rows[-1]
    return StereoChart(rows), dist(p, pp) - 2.0 * alpha


def image_sphere(alpha, tau):
    """Radius and centre offset of the chart image of each sphere in a pair.

    Returns ``(r, d)`` so that the images satisfy ``(y^1 +- d)^2 + |yhat|^2 = r^2``.
    """
    c = np.cos(alpha) + np.cos(alpha + tau / 2.0)
    return np.sin(alpha) / c, np.sin(alpha + tau / 2.0) / c
