"""Shape derivatives of the EFIE pair integrals, system matrix and RHS.

The mesh moves by ``F_s(x) = x + s tau lambda_m(x)``. Pulled back to the
undeformed triangles, the Piola factors cancel and

    d/ds I2 = int int div v div u  tau.grad g(x - y) (lam(x) - lam(y))
    d/ds I1 = int int v . T u  g(x - y)
            + int int v . u  tau.grad g(x - y) (lam(x) - lam(y))

with ``T = grad lam(x) tau^T + tau grad lam(y)^T``. These are evaluated
with the same split as the value path: the subtracted kernel
``1/(4 pi R) - k^2 R/(8 pi)`` in closed form through in-plane moment tensors,
the remainder with the quadrature rule. The result is therefore the exact
derivative of the discrete value, which is what the AD backend (dual
numbers pushed through the value code) and forward differences measure.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import dual as dn
from .assembly import (STRATEGIES, MaterialParams, PlaneWave, _pair_points, _raw_inner,
                       _rhs_local, _symmetrize, accumulate, assemble_system,
                       batched_pair_integrals, combine, local_matrices, local_pair_matrix,
                       rhs_plane_wave, scatter_rhs)
from .kernel import green, green_gradient, green_gradient_smooth, singular_coefficients
from .mesh import (DofMap, PairClass, ShapePerturbation, SurfaceMesh, classify_pair,
                   deform_mesh, hat_surface_gradient)
from .quadrature import QuadratureRule, triangle_frame, triangle_moments

FD_STEP = 1e-8

# test hook: scales the R-term coefficient of the closed-form part of the
# analytical derivative only (mutation check in ``verify``)
_singular_skew = 1.0


@contextlib.contextmanager
def skewed_subtraction(factor):
    global _singular_skew
    old = _singular_skew
    _singular_skew = factor
    try:
        yield
    finally:
        _singular_skew = old


@dataclass
class PairDerivative:
    dI1: np.ndarray
    dI2: np.ndarray
    dA_local: np.ndarray


@dataclass
class MatrixDerivative:
    dA: np.ndarray
    db: np.ndarray | None
    perturbation: ShapePerturbation


# ---------------------------------------------------------------------------
# pointwise formulas
# ---------------------------------------------------------------------------


def distance_shape_derivative(x, y, tau, lam_x, lam_y):
    """``d/ds |F_s(x) - F_s(y)|`` at ``s = 0``."""
    x, y, tau = (np.asarray(v, dtype=float) for v in (x, y, tau))
    r = x - y
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise ValueError("coincident points")
    return np.einsum("...c,...c->...", r, tau * np.expand_dims(lam_x - lam_y, -1)) / dist


def jacobian_shape_term(mesh: SurfaceMesh, tq: int, tp: int, m: int, tau) -> np.ndarray:
    """``d/ds F_s'(x)^T F_s'(y)`` for x in ``tq`` and y in ``tp``.

    Equals ``grad lam_m(x) tau^T + tau grad lam_m(y)^T`` so that
    ``v . T u = (v . grad lam(x)) (tau . u) + (v . tau) (grad lam(y) . u)``.
    """
    tau = np.asarray(tau, dtype=float)
    gx = hat_surface_gradient(mesh, tq, m)
    gy = hat_surface_gradient(mesh, tp, m)
    return np.outer(gx, tau) + np.outer(tau, gy)


def kernel_shape_derivative(x, y, tau, lam_x, lam_y, k, form="gradient"):
    """``d/ds g_k(F_s(x) - F_s(y))`` at ``s = 0``.

    ``form="gradient"`` evaluates ``tau . grad g(x - y) (lam_x - lam_y)``;
    ``form="product"`` evaluates ``g (ik - 1/R) (x - y) . tau (lam_x - lam_y) / R``.
    """
    x, y, tau = (np.asarray(v, dtype=float) for v in (x, y, tau))
    r = x - y
    dlam = np.asarray(lam_x - lam_y, dtype=float)
    if form == "gradient":
        return np.einsum("...c,c->...", green_gradient(k, r), tau) * dlam
    if form == "product":
        R = np.linalg.norm(r, axis=-1)
        if np.any(R == 0):
            raise ValueError("coincident points")
        return green(k, R) * (1j * k - 1.0 / R) * (np.einsum("...c,c->...", r, tau) * dlam) / R
    raise ValueError(f"unknown form {form!r}")


# ---------------------------------------------------------------------------
# batched analytical pair derivative
# ---------------------------------------------------------------------------


def _hat_at_projection(hy, gy, ytri, rho):
    # affine extension of lambda_m over the trial plane, evaluated at rho
    centroid = ytri.mean(axis=1)
    return hy.sum(axis=1)[:, None] / 3.0 + np.einsum(
        "ba,bac,bxc->bx", hy, gy, rho - centroid[:, None, :])


def _singular_derivative(X, ytri, hy, gy, lam_x, tau, k, in_plane):
    """Closed-form inner integrals of ``tau.grad g_s (lam(x) - lam(y))``.

    Returns the scalar ``int ... dy`` (B, x) and the vector
    ``int ... u_j(y) dy`` (B, x, j, 3).
    """
    a, b = singular_coefficients(k)
    b = b * _singular_skew
    mom = triangle_moments(X, ytri[:, None], order=3, in_plane=in_plane)
    d, n, rho = mom.d, mom.n, mom.rho
    gam = np.einsum("ba,bac->bc", hy, gy)
    c = lam_x - _hat_at_projection(hy, gy, ytri, rho)
    tau_n = np.einsum("bxc,c->bx", np.broadcast_to(n, X.shape), tau)
    # (tau . (q - d n)) (c - gam . q) = f0 + f1 . q + q . F2 q
    f0 = -d * tau_n * c
    f1 = c[..., None] * tau + (d * tau_n)[..., None] * gam[:, None, :]
    F2 = -np.einsum("c,be->bce", tau, gam)
    scal, vec = 0.0, 0.0
    for coef, p in ((a, -3), (b, -1)):
        if p == -3:
            s0 = -tau_n * c * mom.omega  # f0 * int R^-3 = -tau_n c (d int R^-3)
        else:
            s0 = f0 * mom[0, -1]
        s = (s0 + np.einsum("bxc,bxc->bx", f1, mom[1, p])
             + np.einsum("bce,bxce->bx", F2, mom[2, p]))
        v = (f0[..., None] * mom[1, p] + np.einsum("bxce,bxe->bxc", mom[2, p], f1)
             + np.einsum("bxcde,bde->bxc", mom[3, p], F2))
        scal = scal + coef * s
        vec = vec + coef * v
    _, ay, _ = triangle_frame(ytri)
    offset = rho[:, :, None, :] - ytri[:, None, :, :]  # rho - P_j
    W = (offset * scal[..., None, None] + vec[:, :, None, :]) / (2.0 * ay[:, None, None, None])
    return scal, W


def _raw_pair_derivative(xtri, ytri, hx, hy, tau, k, rule, subtract, same):
    """One-sided analytical derivative: test on ``xtri``, trial on ``ytri``.

    ``hx``/``hy`` (B, 3) hold the nodal values of ``lambda_m`` at the
    vertices of each triangle (1 at the moving node, else 0).
    """
    tau = np.asarray(tau, dtype=float)
    X, Y, ax, ay = _pair_points(xtri, ytri, rule)
    w = rule.weights
    _, _, gx = triangle_frame(xtri)
    _, _, gy = triangle_frame(ytri)
    lam_x = np.einsum("qa,ba->bq", rule.points, hx)
    lam_y = np.einsum("qa,ba->bq", rule.points, hy)
    grad_x = np.einsum("ba,bac->bc", hx, gx)
    grad_y = np.einsum("ba,bac->bc", hy, gy)
    Tmat = grad_x[:, :, None] * tau[None, None, :] + tau[None, :, None] * grad_y[:, None, :]

    _, _, _, _, U = _raw_inner(xtri, ytri, k, rule, subtract, same)

    r = X[:, :, None, :] - Y[:, None, :, :]
    dlam = lam_x[:, :, None] - lam_y[:, None, :]
    if subtract:
        grad = green_gradient_smooth(k, r)
    else:
        grad = green_gradient(k, r)
    kd = np.einsum("bxyc,c->bxy", grad, tau) * dlam
    yoff = Y[:, None, :, :] - ytri[:, :, None, :]
    W = 0.5 * np.einsum("y,bxy,bjyc->bxjc", w, kd, yoff)
    dS = np.einsum("y,bxy->bx", w, kd) * ay[:, None]
    if subtract:
        in_plane = np.broadcast_to(np.asarray(same)[:, None], X.shape[:2])
        s_s, W_s = _singular_derivative(X, ytri, hy, gy, lam_x, tau, k, in_plane)
        dS = dS + s_s
        W = W + W_s

    xoff = X[:, None, :, :] - xtri[:, :, None, :]
    dI1 = (0.5 * np.einsum("x,bixc,bce,bxje->bij", w, xoff, Tmat, U)
           + 0.5 * np.einsum("x,bixc,bxjc->bij", w, xoff, W))
    dscalar = np.einsum("x,bx->b", w, dS) / ay
    return dI1, dscalar


def batched_pair_derivative(tq, tp, hq, hp, tau, k, rule, subtract=True, same=None):
    """Symmetrised ``(dI1, dI2)`` for batches of test/trial triangles."""
    if same is None:
        same = np.zeros(len(tq), dtype=bool)
    d1a, sa = _raw_pair_derivative(tq, tp, hq, hp, tau, k, rule, subtract, same)
    d1b, sb = _raw_pair_derivative(tp, tq, hp, hq, tau, k, rule, subtract, same)
    return _symmetrize(d1a, sa, d1b, sb)


# ---------------------------------------------------------------------------
# mesh-level pair API
# ---------------------------------------------------------------------------


def _nodal(mesh, t, m):
    return (mesh.triangles[t] == m).astype(float)


def _velocity(mesh, t, pert):
    return _nodal(mesh, t, pert.node)[:, None] * pert.direction[None, :]


def _pair_setup(mesh, p, q, strategy):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    cls = classify_pair(mesh, p, q)
    if strategy == "plain" and cls is not PairClass.NEAR:
        raise ValueError(f"plain quadrature is only valid for non-touching pairs, got {cls.value}")
    return cls


def pair_derivative(mesh: SurfaceMesh, p: int, q: int, perturbation: ShapePerturbation,
                    params: MaterialParams, rule: QuadratureRule,
                    strategy: str = "subtraction") -> PairDerivative:
    """Analytical ``d/ds`` of ``I1``, ``I2`` and the local matrix (trial p, test q)."""
    cls = _pair_setup(mesh, p, q, strategy)
    m = perturbation.node
    if m not in mesh.triangles[p] and m not in mesh.triangles[q]:
        zero = np.zeros((3, 3), complex)
        return PairDerivative(zero, zero.copy(), zero.copy())
    dI1, dI2 = batched_pair_derivative(
        mesh.coords(q)[None], mesh.coords(p)[None],
        _nodal(mesh, q, m)[None], _nodal(mesh, p, m)[None],
        perturbation.direction, params.k, rule, strategy == "subtraction",
        np.array([cls is PairClass.SAME]))
    return PairDerivative(dI1[0], dI2[0], combine(params, dI1[0], dI2[0]))


def d_pair_I1(mesh, p, q, perturbation, params, rule, strategy="subtraction"):
    return pair_derivative(mesh, p, q, perturbation, params, rule, strategy).dI1


def d_pair_I2(mesh, p, q, perturbation, params, rule, strategy="subtraction"):
    return pair_derivative(mesh, p, q, perturbation, params, rule, strategy).dI2


def d_local_pair_matrix(mesh, p, q, perturbation, params, rule, strategy="subtraction"):
    return pair_derivative(mesh, p, q, perturbation, params, rule, strategy).dA_local


def ad_local_pair_matrix(mesh, p, q, perturbation, params, rule, strategy="subtraction",
                         return_value=False):
    """Local matrix derivative by forward-mode AD through the value code."""
    cls = _pair_setup(mesh, p, q, strategy)
    tq = dn.Dual(mesh.coords(q)[None], _velocity(mesh, q, perturbation)[None])
    tp = dn.Dual(mesh.coords(p)[None], _velocity(mesh, p, perturbation)[None])
    I1, I2 = batched_pair_integrals(tq, tp, params.k, rule, strategy == "subtraction",
                                    np.array([cls is PairClass.SAME]))
    loc = combine(params, I1, I2)
    der = dn.derivative(loc)[0]
    if return_value:
        return der, dn.value(loc)[0]
    return der


def fd_local_pair_matrix(mesh, p, q, perturbation, params, rule, h=FD_STEP,
                         scheme="forward", strategy="subtraction"):
    """Difference quotient of the local matrix across ``deform_mesh``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    plus = local_pair_matrix(deform_mesh(mesh, perturbation, h), p, q, params, rule, strategy)
    if scheme == "forward":
        base = local_pair_matrix(mesh, p, q, params, rule, strategy)
        return (plus - base) / h
    if scheme == "central":
        back = ShapePerturbation(perturbation.node, tuple(-perturbation.direction))
        minus = local_pair_matrix(deform_mesh(mesh, back, h), p, q, params, rule, strategy)
        return (plus - minus) / (2.0 * h)
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# global matrix and right-hand side
# ---------------------------------------------------------------------------


def _touching_pairs(mesh, m, near_strategy):
    star = set(mesh.star(m).tolist())
    q_idx, p_idx = [], []
    for q in range(mesh.nt):
        for p in range(mesh.nt):
            if q in star or p in star:
                q_idx.append(q)
                p_idx.append(p)
    q_idx = np.array(q_idx, dtype=np.int64)
    p_idx = np.array(p_idx, dtype=np.int64)
    shared = np.array([len(set(mesh.triangles[q].tolist()) & set(mesh.triangles[p].tolist()))
                       for q, p in zip(q_idx, p_idx)], dtype=np.int64)
    subtract = (shared > 0) | (near_strategy == "subtraction")
    return q_idx, p_idx, shared == 3, subtract


def d_rhs_plane_wave(mesh: SurfaceMesh, dofmap: DofMap, wave: PlaneWave, rule: QuadratureRule,
                     perturbation: ShapePerturbation, params: MaterialParams | None = None):
    """Analytical derivative of :func:`rhs_plane_wave`.

    ``d/ds int (F' v) . E(F(x)) dx = int (grad lam . v)(tau . E) + (v . E) ik (khat . tau) lam``
    """
    k = (params or MaterialParams()).k
    m = perturbation.node
    tau = perturbation.direction
    E0 = np.asarray(wave.E0, dtype=complex)
    khat = np.asarray(wave.khat, dtype=float)
    coords = mesh.coords()
    X = rule.map(coords)
    _, _, grads = triangle_frame(coords)
    h = (mesh.triangles == m).astype(float)
    lam = np.einsum("qa,ta->tq", rule.points, h)
    grad = np.einsum("ta,tac->tc", h, grads)
    phase = np.exp(1j * k * np.einsum("c,txc->tx", khat, X))
    xoff = X[:, None, :, :] - coords[:, :, None, :]  # 2 |T| v_i
    jac = np.einsum("tixc,tc->tix", xoff, grad) * np.dot(tau, E0)
    shift = np.einsum("tixc,c->tix", xoff, E0) * (1j * k * np.dot(khat, tau)) * lam[:, None, :]
    loc = 0.5 * np.einsum("x,tix,tx->ti", rule.weights, jac + shift, phase)
    return scatter_rhs(dofmap, loc)


def d_assemble(mesh: SurfaceMesh, dofmap: DofMap, params: MaterialParams, rule: QuadratureRule,
               perturbation: ShapePerturbation, wave: PlaneWave | None = None,
               near_strategy: str = "subtraction") -> MatrixDerivative:
    """Analytical ``dA/ds`` (and ``db/ds`` when a wave is given)."""
    m = perturbation.node
    if not 0 <= m < mesh.nv:
        raise ValueError(f"node {m} out of range")
    q_idx, p_idx, same, subtract = _touching_pairs(mesh, m, near_strategy)
    coords = mesh.coords()
    loc = np.zeros((len(q_idx), 3, 3), complex)
    hat = (mesh.triangles == m).astype(float)
    for flag in (True, False):
        sel = np.flatnonzero(subtract == flag)
        if sel.size == 0:
            continue
        qs, ps = q_idx[sel], p_idx[sel]
        dI1, dI2 = batched_pair_derivative(coords[qs], coords[ps], hat[qs], hat[ps],
                                           perturbation.direction, params.k, rule, flag, same[sel])
        loc[sel] = combine(params, dI1, dI2)
    dA = accumulate(dofmap, q_idx, p_idx, loc)
    db = None if wave is None else d_rhs_plane_wave(mesh, dofmap, wave, rule, perturbation, params)
    return MatrixDerivative(dA, db, perturbation)


def ad_assemble(mesh, dofmap, params, rule, perturbation, wave=None, near_strategy="subtraction"):
    """``(dA, db)`` by dual numbers through the assembly code."""
    vel = (mesh.triangles == perturbation.node).astype(float)[:, :, None] * perturbation.direction
    coords = dn.Dual(mesh.coords(), vel)
    q_idx, p_idx, same, subtract = _touching_pairs(mesh, perturbation.node, near_strategy)
    loc = local_matrices(coords, q_idx, p_idx, same, subtract, params, rule)
    dA = accumulate(dofmap, q_idx, p_idx, dn.derivative(loc))
    db = None
    if wave is not None:
        db = scatter_rhs(dofmap, dn.derivative(_rhs_local(coords, wave, params.k, rule)))
    return MatrixDerivative(dA, db, perturbation)


def fd_assemble(mesh, dofmap, params, rule, perturbation, wave=None, h=FD_STEP,
                scheme="forward", near_strategy="subtraction"):
    """Difference quotients of the assembled matrix and RHS."""
    def build(msh):
        A = assemble_system(msh, dofmap, params, rule, near_strategy)
        b = None if wave is None else rhs_plane_wave(msh, dofmap, wave, rule, params)
        return A, b

    Ap, bp = build(deform_mesh(mesh, perturbation, h))
    if scheme == "forward":
        A0, b0 = build(mesh)
        scale = h
    elif scheme == "central":
        back = ShapePerturbation(perturbation.node, tuple(-perturbation.direction))
        A0, b0 = build(deform_mesh(mesh, back, h))
        scale = 2.0 * h
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    db = None if wave is None else (bp - b0) / scale
    return MatrixDerivative((Ap - A0) / scale, db, perturbation)
