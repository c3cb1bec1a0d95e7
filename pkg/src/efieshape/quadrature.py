"""Triangle quadrature and closed-form potential integrals over flat triangles.

Two layers live here:

* :func:`dunavant_rule` returns symmetric Gauss rules on the triangle in
  barycentric form (weights normalised to sum to one).
* :func:`triangle_moments` evaluates, in closed form, the in-plane moment
  tensors ``int_T q^{(x)j} R^p dS`` (``q`` the in-plane offset from the
  projection of the observation point, ``R = |x - y|``) for ``p`` in
  ``{-3, -1, 1}`` and ``j <= 3``.  Everything singularity subtraction needs
  is a contraction of these tensors; :func:`analytic_potentials` packages
  the common ones.

The moment routines are written against :mod:`efieshape.dual`, so they also
run on dual-number coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as dn

# (multiplicity, barycentric orbit generator, weight); orbits of size 1, 3, 6
_DUNAVANT = {
    1: (1, [(1, (1 / 3, 1 / 3, 1 / 3), 1.0)]),
    3: (2, [(3, (2 / 3, 1 / 6, 1 / 6), 1 / 3)]),
    4: (3, [(1, (1 / 3, 1 / 3, 1 / 3), -0.5625),
            (3, (0.6, 0.2, 0.2), 0.520833333333333)]),
    6: (4, [(3, (0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
            (3, (0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322)]),
    7: (5, [(1, (1 / 3, 1 / 3, 1 / 3), 0.225),
            (3, (0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
            (3, (0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827)]),
    12: (6, [(3, (0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
             (3, (0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
             (6, (0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374)]),
    13: (7, [(1, (1 / 3, 1 / 3, 1 / 3), -0.149570044467682),
             (3, (0.479308067841920, 0.260345966079040, 0.260345966079040), 0.175615257433208),
             (3, (0.869739794195568, 0.065130102902216, 0.065130102902216), 0.053347235608838),
             (6, (0.048690315425316, 0.312865496004874, 0.638444188569810), 0.077113760890257)]),
    16: (8, [(1, (1 / 3, 1 / 3, 1 / 3), 0.144315607677787),
             (3, (0.081414823414554, 0.459292588292723, 0.459292588292723), 0.095091634267285),
             (3, (0.658861384496480, 0.170569307751760, 0.170569307751760), 0.103217370534718),
             (3, (0.898905543365938, 0.050547228317031, 0.050547228317031), 0.032458497623198),
             (6, (0.008394777409958, 0.263112829634638, 0.728492392955404), 0.027230314174435)]),
}

SUPPORTED_N = tuple(sorted(_DUNAVANT))


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric quadrature rule; ``sum(weights) == 1``."""

    points: np.ndarray  # (n, 3) barycentric
    weights: np.ndarray  # (n,)
    degree: int

    @property
    def npoints(self) -> int:
        return len(self.weights)

    def map(self, tri):
        """Physical points for triangle vertices ``tri`` (..., 3, 3)."""
        return dn.einsum("qa,...ai->...qi", self.points, tri)


def _orbit(size, gen):
    a, b, c = gen
    if size == 1:
        return [(a, b, c)]
    if size == 3:
        return [(a, b, c), (b, a, c), (b, c, a)]
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def dunavant_rule(n: int) -> QuadratureRule:
    """Dunavant's symmetric rule with ``n`` points (degree 1 to 8)."""
    if n not in _DUNAVANT:
        raise ValueError(f"unsupported rule size n={n}; choose from {SUPPORTED_N}")
    degree, orbits = _DUNAVANT[n]
    pts, wts = [], []
    for size, gen, w in orbits:
        for p in _orbit(size, gen):
            pts.append(p)
            wts.append(w)
    points = np.array(pts, dtype=float)
    # tabulated coordinates carry 15 digits; restore exact partition of unity
    points /= points.sum(axis=1, keepdims=True)
    return QuadratureRule(points, np.array(wts, dtype=float), degree)


def triangle_frame(tri):
    """Unit normal, area and barycentric gradients of triangles (..., 3, 3).

    The normal follows the vertex winding. ``grads[..., j, :]`` is the
    (constant, in-plane) gradient of the barycentric coordinate of vertex j.
    """
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    c = dn.cross(e1, e2)
    twice_area = dn.norm(c)
    n = c / dn.expand(twice_area, -1)
    grads = []
    for j in range(3):
        edge = tri[..., (j + 2) % 3, :] - tri[..., (j + 1) % 3, :]
        grads.append(dn.cross(n, edge) / dn.expand(twice_area, -1))
    return n, 0.5 * twice_area, dn.stack(grads, axis=-2)


def _log_ratio(sm, sp, Rm, Rp, R02):
    """``ln((R+ + s+)/(R- + s-))`` without cancellation on either side."""
    safe = dn.where(value_gt(R02, 0.0), R02, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _log_ratio_branches(sm, sp, Rm, Rp, safe)


def _log_ratio_branches(sm, sp, Rm, Rp, safe):
    both_pos = dn.log((Rp + sp) / (Rm + sm))
    both_neg = dn.log((Rm - sm) / (Rp - sp))
    mixed = dn.log((Rp + sp) * (Rm - sm) / safe)
    return dn.where(dn.value(sm) >= 0.0, both_pos, dn.where(dn.value(sp) <= 0.0, both_neg, mixed))


def value_gt(x, c):
    return dn.value(x) > c


def _outer(a, b):
    return dn.einsum("...i,...j->...ij", a, b)


class Moments:
    """In-plane moment tensors of ``R^p`` over a flat triangle.

    ``self[j, p]`` is ``int_T q^{(x)j} R^p dS`` as a 3D tensor with j trailing
    axes, where ``q = y - rho`` and ``rho`` is the projection of the
    observation point onto the triangle plane. ``(0, -3)`` is never formed;
    ``omega`` holds ``d * int_T R^-3 dS`` (the signed solid angle), which is
    the only combination in which it is needed.
    """

    def __init__(self, d, n, rho, omega, proj, tensors):
        self.d = d
        self.n = n
        self.rho = rho
        self.omega = omega
        self.proj = proj
        self._t = tensors

    def __getitem__(self, key):
        return self._t[key]

    def keys(self):
        return self._t.keys()


def _d2_term(proj, m1):
    # D[a1, a2, b] = P[a1, b] M1[a2] + P[a2, b] M1[a1]
    return dn.einsum("...ab,...c->...acb", proj, m1) + dn.einsum("...cb,...a->...acb", proj, m1)


def triangle_moments(x, tri, order=1, in_plane=None) -> Moments:
    """Closed-form moment tensors for observation points ``x`` (..., 3).

    ``order`` is the highest tensor rank required (1 to 3). ``in_plane`` is a
    boolean mask marking points known to lie in the triangle plane; for them
    the height is set to exactly zero and the out-of-plane jump of the
    ``R^-3`` moments is dropped (principal value). For points on the
    triangle boundary only the ``R^-1`` and ``R^1`` moments are finite.
    """
    n, _, _ = triangle_frame(tri)
    p0 = tri[..., 0, :]
    d = dn.dot(x - p0, n)
    if in_plane is not None:
        d = dn.where(in_plane, 0.0, d)
    rho = x - dn.expand(d, -1) * n
    d2 = d * d

    sum_t0_lm1 = 0.0
    sum_t0_lp1 = 0.0
    edges = {}
    for i in range(3):
        a = tri[..., (i + 1) % 3, :]
        b = tri[..., (i + 2) % 3, :]
        ab = b - a
        t = ab / dn.expand(dn.norm(ab), -1)
        m = dn.cross(t, n)
        sm = dn.dot(a - rho, t)
        sp = dn.dot(b - rho, t)
        t0 = dn.dot(a - rho, m)
        Rm = dn.norm(x - a)
        Rp = dn.norm(x - b)
        R02 = t0 * t0 + d2
        L = _log_ratio(sm, sp, Rm, Rp, R02)
        # x on the edge line: L may be infinite but always meets a zero
        # factor, except in the bare (-1, 0) integral
        L0 = dn.where(value_gt(R02, 0.0), L, 0.0)
        sR = sp * Rp - sm * Rm
        sR3 = sp * Rp * Rp * Rp - sm * Rm * Rm * Rm
        j_p1_0 = 0.5 * sR + 0.5 * R02 * L0
        J = {(-1, 0): L, (1, 0): j_p1_0, (3, 0): 0.25 * sR3 + 0.75 * R02 * j_p1_0}
        if order >= 2:
            J[(-1, 1)] = Rp - Rm
            J[(-1, 2)] = 0.5 * sR - 0.5 * R02 * L0
            J[(1, 1)] = (Rp * Rp * Rp - Rm * Rm * Rm) / 3.0
            J[(1, 2)] = 0.25 * sR3 - 0.25 * R02 * j_p1_0
        edges[i] = (t, m, t0, J)
        sum_t0_lm1 = sum_t0_lm1 + t0 * L0
        sum_t0_lp1 = sum_t0_lp1 + t0 * j_p1_0

    # signed solid angle, d * int R^-3 (van Oosterom & Strackee)
    r = [tri[..., i, :] - x for i in range(3)]
    lr = [dn.norm(v) for v in r]
    _, area, _ = triangle_frame(tri)
    num = 2.0 * area * d
    den = (lr[0] * lr[1] * lr[2] + dn.dot(r[0], r[1]) * lr[2]
           + dn.dot(r[0], r[2]) * lr[1] + dn.dot(r[1], r[2]) * lr[0])
    omega = 2.0 * _arctan2(num, den)
    if in_plane is not None:
        omega = dn.where(in_plane, 0.0, omega)

    eye = np.eye(3)
    proj = eye - _outer(n, n)
    T = {}
    T[(0, -1)] = sum_t0_lm1 - d * omega
    T[(0, 1)] = (sum_t0_lp1 + d2 * T[(0, -1)]) / 3.0

    def edge_tensor(p, j):
        out = 0.0
        for i in range(3):
            t, m, t0, J = edges[i]
            if j == 0:
                f = dn.expand(J[(p, 0)], -1) * m
            elif j == 1:
                alpha = dn.expand(t0, -1) * m
                f = _outer(dn.expand(J[(p, 0)], -1) * alpha + dn.expand(J[(p, 1)], -1) * t, m)
            else:
                alpha = dn.expand(t0, -1) * m
                aa = _outer(alpha, alpha)
                at = _outer(alpha, t)
                tt = _outer(t, t)
                inner = (dn.expand(dn.expand(J[(p, 0)], -1), -1) * aa
                         + dn.expand(dn.expand(J[(p, 1)], -1), -1) * (at + dn.einsum("...ij->...ji", at))
                         + dn.expand(dn.expand(J[(p, 2)], -1), -1) * tt)
                f = dn.einsum("...ab,...c->...abc", inner, m)
            out = out + f
        return out

    T[(1, -1)] = edge_tensor(1, 0)
    T[(1, 1)] = edge_tensor(3, 0) / 3.0
    if order >= 2:
        T[(1, -3)] = -edge_tensor(-1, 0)
        T[(2, -3)] = -(edge_tensor(-1, 1) - dn.expand(dn.expand(T[(0, -1)], -1), -1) * proj)
        T[(2, -1)] = edge_tensor(1, 1) - dn.expand(dn.expand(T[(0, 1)], -1), -1) * proj
    if order >= 3:
        T[(3, -3)] = -(edge_tensor(-1, 2) - _d2_term(proj, T[(1, -1)]))
        T[(3, -1)] = edge_tensor(1, 2) - _d2_term(proj, T[(1, 1)])
    return Moments(d, n, rho, omega, proj, T)


def _arctan2(y, x):
    if dn.is_dual(y, x):
        yv, xv = dn.value(y), dn.value(x)
        val = np.arctan2(yv, xv)
        r2 = xv * xv + yv * yv
        safe = np.where(r2 > 0, r2, 1.0)
        der = np.where(r2 > 0, (xv * dn.derivative(y) - yv * dn.derivative(x)) / safe, 0.0)
        return dn.Dual(val, der)
    return np.arctan2(y, x)


@dataclass(frozen=True)
class AnalyticPotentials:
    """Closed-form single-triangle potentials at one observation point.

    ``lam_*`` entries are indexed by the triangle's local vertex ``j``.
    ``grad_inv_r`` is ``int grad_x (1/R) dy``; its normal component is the
    one-sided limit ``-omega`` off the plane and zero (principal value) for
    points in the plane. On the triangle boundary the tangential part of the
    ``grad (1/R)`` integrals diverges logarithmically and is returned as
    non-finite; the other entries stay finite.
    """

    inv_r: float
    r: float
    grad_inv_r: np.ndarray
    grad_r: np.ndarray
    lam_inv_r: np.ndarray
    lam_grad_inv_r: np.ndarray


# relative height below which an observation point counts as in-plane
_IN_PLANE_TOL = 1e-14


def analytic_potentials(x, tri) -> AnalyticPotentials:
    """Potentials of ``1/R`` and ``R`` (and linear moments) over triangle ``tri``."""
    x = np.asarray(x, dtype=float)
    tri = np.asarray(tri, dtype=float)
    n, area, grads = triangle_frame(tri)
    diam = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=0), axis=1))
    height = np.dot(x - tri[0], n)
    in_plane = np.array([abs(height) <= _IN_PLANE_TOL * diam])
    mom = triangle_moments(x[None], tri, order=2, in_plane=in_plane)
    d = float(mom.d[0])
    rho = mom.rho[0]
    m0m, m0p = float(mom[0, -1][0]), float(mom[0, 1][0])
    m1m, m1c = mom[1, -1][0], mom[1, -3][0]
    m2c = mom[2, -3][0]
    omega = float(mom.omega[0])
    # lambda_j(y) = lambda_j(rho) + grad_j . q
    lam_rho = 1.0 / 3.0 + (grads @ (rho - tri.mean(axis=0)))
    grad_inv_r = m1c - n * omega
    return AnalyticPotentials(
        inv_r=m0m,
        r=m0p,
        grad_inv_r=grad_inv_r,
        grad_r=-m1m + d * n * m0m,
        lam_inv_r=lam_rho * m0m + grads @ m1m,
        lam_grad_inv_r=(lam_rho[:, None] * grad_inv_r[None, :] + grads @ m2c.T
                        - d * np.outer(grads @ m1c, n)),
    )
