"""Independent reference integrators used by the verification suites.

Nothing here shares code with the closed-form or subtraction paths beyond
the quadrature tables: integrals are computed by brute-force adaptive
subdivision of the integration triangle(s), or in Duffy coordinates when the
singular point is a vertex.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .quadrature import dunavant_rule, triangle_frame

_FINE = dunavant_rule(16)
_COARSE = dunavant_rule(13)


def _split(tris):
    """Midpoint refinement of triangles (..., 3, 3) into (..., 4, 3, 3)."""
    a, b, c = tris[..., 0, :], tris[..., 1, :], tris[..., 2, :]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.stack([np.stack(t, axis=-2) for t in
                     ((a, ab, ca), (ab, b, bc), (ca, bc, c), (bc, ca, ab))], axis=-3)


def _rule_integrals(func, tris, rule):
    _, area, _ = triangle_frame(tris)  # (P,)
    pts = rule.map(tris)  # (P, q, 3)
    vals = func(pts.reshape(-1, 3))
    vals = vals.reshape(pts.shape[:2] + vals.shape[1:])
    return np.einsum("p,q,pq...->p...", area, rule.weights, vals)


def adaptive_integral(func, tri, tol=1e-12, max_depth=25, max_pieces=200_000):
    """``int_T func(y) dy`` by recursive 4-way splitting.

    ``func`` maps points (q, 3) to values (q, ...). A piece is accepted once
    the degree-7 and degree-8 rules agree to ``tol`` times its area share of
    a first global estimate; the degree-8 value of accepted pieces is summed.
    Pieces are processed level by level in batches.
    """
    tri = np.asarray(tri, dtype=float)
    first = _rule_integrals(func, tri[None], _FINE)[0]
    scale = np.max(np.abs(first)) or 1.0
    _, total_area, _ = triangle_frame(tri)
    pieces = tri[None]
    acc = np.zeros_like(first)
    for depth in range(max_depth + 1):
        fine = _rule_integrals(func, pieces, _FINE)
        coarse = _rule_integrals(func, pieces, _COARSE)
        _, area, _ = triangle_frame(pieces)
        err = np.abs(fine - coarse).reshape(len(pieces), -1).max(axis=1)
        done = (err <= tol * scale * area / total_area) | (depth == max_depth)
        acc = acc + fine[done].sum(axis=0)
        if done.all():
            break
        pieces = _split(pieces[~done]).reshape(-1, 3, 3)
        if len(pieces) > max_pieces:
            raise RuntimeError("adaptive subdivision did not converge (singular integrand?)")
    return acc


def potentials_reference(x, tri, tol=1e-12):
    """Reference values for :func:`efieshape.quadrature.analytic_potentials` (off-plane x)."""
    x = np.asarray(x, dtype=float)
    tri = np.asarray(tri, dtype=float)
    _, area, grads = triangle_frame(tri)
    centroid = tri.mean(axis=0)

    def integrand(y):
        r = x - y
        R = np.linalg.norm(r, axis=-1)
        lam = 1.0 / 3.0 + (y - centroid) @ grads.T  # (q, 3)
        g_inv = -r / R[:, None] ** 3  # grad_x 1/R
        cols = [1.0 / R[:, None], R[:, None], g_inv, r / R[:, None], lam / R[:, None],
                (lam[:, :, None] * g_inv[:, None, :]).reshape(len(y), 9)]
        return np.concatenate(cols, axis=1)

    v = adaptive_integral(integrand, tri, tol)
    return {
        "inv_r": v[0], "r": v[1], "grad_inv_r": v[2:5], "grad_r": v[5:8],
        "lam_inv_r": v[8:11], "lam_grad_inv_r": v[11:20].reshape(3, 3),
    }


def pair_scalar_reference(kernel, xtri, ytri, depth=3, rule=_FINE):
    """``int_X int_Y kernel(x, y)`` with both triangles split ``depth`` times.

    Suitable for separated triangles only; ``kernel`` maps (q, 3), (r, 3)
    point sets to a (q, r) array.
    """
    def refine(tri):
        pieces = np.asarray(tri, dtype=float)[None]
        for _ in range(depth):
            pieces = _split(pieces).reshape(-1, 3, 3)
        return pieces

    total = 0.0
    for px in refine(xtri):
        _, ax, _ = triangle_frame(px)
        X = rule.map(px)
        for py in refine(ytri):
            _, ay, _ = triangle_frame(py)
            Y = rule.map(py)
            total = total + ax * ay * rule.weights @ kernel(X, Y) @ rule.weights
    return total


def random_potential_case(rng):
    """Shape-regular triangle and an observation point off its plane.

    The height above the plane is between 0.1 and 1.5 times the triangle
    size and the in-plane offset ranges over and around the triangle.
    """
    base = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3) / 2, 0.0]])
    base[:, :2] += rng.uniform(-0.2, 0.2, (3, 2))
    scale = rng.uniform(0.5, 2.0)
    rot = Rotation.random(random_state=rng).as_matrix()
    shift = rng.normal(size=3)
    local = np.array([rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.3),
                      rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 1.5)])
    tri = (scale * base) @ rot.T + shift
    x = (scale * local) @ rot.T + shift
    return tri, x


def apex_integral(func, apex, a, b, order=40):
    """``int func`` over triangle (apex, a, b) in Duffy coordinates.

    ``y = apex + r (a + s (b - a) - apex)`` with ``dA = 2|T| r dr ds``; the
    factor ``r`` cancels a ``1/R`` singularity at the apex, so tensor
    Gauss-Legendre converges spectrally for integrands singular there.
    """
    apex, a, b = (np.asarray(v, dtype=float) for v in (apex, a, b))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    r, s = np.meshgrid(u, u, indexing="ij")
    wr = np.outer(w, w) * r
    edge = a[None, None, :] + s[..., None] * (b - a) - apex
    pts = apex + r[..., None] * edge
    twice_area = np.linalg.norm(np.cross(a - apex, b - apex))
    vals = func(pts.reshape(-1, 3))
    vals = vals.reshape(r.shape + vals.shape[1:])
    return twice_area * np.tensordot(wr, vals, axes=([0, 1], [0, 1]))
