"""Galerkin EFIE pair integrals, local matrices, global system and plane-wave RHS.

For a test triangle ``Tq`` (rows, local RT index ``i``) and a trial triangle
``Tp`` (columns, index ``j``)::

    I1[i, j] = int_Tq v_i(x) . int_Tp g_k(x - y) u_j(y) dy dx
    I2[i, j] = int_Tq div v_i(x) int_Tp g_k(x - y) div u_j(y) dy dx

The outer integral always uses the quadrature rule. With the
``"subtraction"`` strategy the inner integral splits ``g_k`` into
``1/(4 pi R) - k^2 R/(8 pi)``, integrated in closed form, plus a smooth
remainder integrated with the same rule. The one-sided result is averaged
with the transpose of the swapped evaluation, which makes the pair matrices
exactly reciprocal and the global matrix complex-symmetric.

The batched ``_raw_*`` routines accept dual-number coordinates; the AD
backend in :mod:`efieshape.shapederiv` reuses them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dual as dn
from .kernel import green_smooth, singular_coefficients, FOUR_PI
from .mesh import DofMap, PairClass, SurfaceMesh, classify_pair
from .quadrature import QuadratureRule, triangle_frame, triangle_moments

STRATEGIES = ("subtraction", "plain")


@dataclass(frozen=True)
class MaterialParams:
    omega: float = 1.0
    epsilon: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        for name in ("omega", "epsilon", "mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive real, got {v}")

    @property
    def k(self) -> float:
        return self.omega * math.sqrt(self.mu * self.epsilon)

    @property
    def charge_coef(self) -> complex:
        return 1j / (self.omega * self.epsilon)

    @property
    def current_coef(self) -> complex:
        return 1j * self.omega * self.mu


@dataclass(frozen=True)
class PlaneWave:
    """Incident field ``E0 exp(i k khat . x)``."""

    E0: tuple
    khat: tuple

    def __post_init__(self):
        khat = np.asarray(self.khat, dtype=float)
        E0 = np.asarray(self.E0, dtype=complex)
        if abs(np.linalg.norm(khat) - 1.0) > 1e-12:
            raise ValueError("khat must be a unit vector")
        if abs(np.dot(E0, khat)) > 1e-12 * max(1.0, np.linalg.norm(E0)):
            raise ValueError("plane wave must be transverse (E0 . khat = 0)")


@dataclass
class PairIntegralResult:
    I1: np.ndarray
    I2: np.ndarray


def _pair_points(xtri, ytri, rule):
    X = rule.map(xtri)
    Y = rule.map(ytri)
    _, ax, _ = triangle_frame(xtri)
    _, ay, _ = triangle_frame(ytri)
    return X, Y, ax, ay


def _singular_inner(X, ytri, k, in_plane, order=1):
    """Closed-form inner integrals of the subtracted kernel.

    Returns ``S[b, x] = int g_s dy`` and ``U[b, x, j, :] = int g_s u_j dy``
    together with the moment object (reused by the derivative path).
    """
    a, b = singular_coefficients(k)
    mom = triangle_moments(X, dn.expand(ytri, -3), order=order, in_plane=in_plane)
    dn_ = dn.expand(mom.d, -1) * mom.n
    v_m1 = mom[1, -1] - dn_ * dn.expand(mom[0, -1], -1)
    v_p1 = mom[1, 1] - dn_ * dn.expand(mom[0, 1], -1)
    S = a * mom[0, -1] - b * mom[0, 1]
    V = a * v_m1 - b * v_p1  # int g_s (y - x) dy
    _, ay, _ = triangle_frame(ytri)
    # int g_s (y - P_j) = V + (x - P_j) S
    offset = dn.expand(X, -2) - dn.expand(ytri, -3)  # (B, x, j, 3)
    U = (dn.expand(V, -2) + offset * dn.expand(dn.expand(S, -1), -1)) \
        / dn.expand(dn.expand(dn.expand(2.0 * ay, -1), -1), -1)
    return S, U, mom


def _raw_inner(xtri, ytri, k, rule, subtract, same):
    """Inner integrals ``S[b, x]`` and ``U[b, x, j, :]`` at the outer points."""
    X, Y, ax, ay = _pair_points(xtri, ytri, rule)
    w = rule.weights
    r = dn.expand(X, -2) - dn.expand(Y, -3)  # (B, x, y, 3)
    R = dn.norm(r)
    if subtract:
        g = green_smooth(k, R)
    else:
        g = dn.exp(1j * k * R) / (FOUR_PI * R)
    # 0.5 * sum_y w_y g (Y - P_j); the trial area cancels against u_j's 1/(2|Tp|)
    yoff = dn.expand(Y, -3) - dn.expand(ytri, -2)  # (B, j, y, 3)
    U = 0.5 * dn.einsum("y,bxy,bjyc->bxjc", w, g, yoff)
    S = dn.einsum("y,bxy->bx", w, g) * dn.expand(ay, -1)
    if subtract:
        in_plane = np.broadcast_to(np.asarray(same)[:, None], dn.value(X).shape[:2])
        S_s, U_s, _ = _singular_inner(X, ytri, k, in_plane)
        S = S + S_s
        U = U + U_s
    return X, ax, ay, S, U


def _raw_pairs(xtri, ytri, k, rule, subtract=True, same=None):
    """One-sided pair integrals for a batch: test on ``xtri``, trial on ``ytri``.

    Returns ``I1`` (B, 3, 3) and the common value of all ``I2`` entries,
    ``int int g / (|Tq| |Tp|)`` (B,).
    """
    if same is None:
        same = np.zeros(dn.value(xtri).shape[0], dtype=bool)
    X, ax, ay, S, U = _raw_inner(xtri, ytri, k, rule, subtract, same)
    w = rule.weights
    xoff = dn.expand(X, -3) - dn.expand(xtri, -2)  # (B, i, x, 3)
    I1 = 0.5 * dn.einsum("x,bixc,bxjc->bij", w, xoff, U)
    # outer area cancels against div v = 1/|Tq|
    scalar = dn.einsum("x,bx->b", w, S) / ay
    return I1, scalar


def _i2_matrix(scalar):
    return dn.expand(dn.expand(scalar, -1), -1) * np.ones((3, 3))


def _symmetrize(I1_xy, s_xy, I1_yx, s_yx):
    """Average a one-sided evaluation with the transpose of the swapped one."""
    I1 = 0.5 * (I1_xy + dn.einsum("bij->bji", I1_yx))
    I2 = _i2_matrix(0.5 * (s_xy + s_yx))
    return I1, I2


def batched_pair_integrals(tq, tp, k, rule, subtract=True, same=None):
    """Symmetrised ``(I1, I2)`` for batches of test ``tq`` / trial ``tp`` triangles."""
    I1a, sa = _raw_pairs(tq, tp, k, rule, subtract, same)
    I1b, sb = _raw_pairs(tp, tq, k, rule, subtract, same)
    return _symmetrize(I1a, sa, I1b, sb)


def _check_strategy(mesh, p, q, strategy):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    cls = classify_pair(mesh, p, q)
    if strategy == "plain" and cls is not PairClass.NEAR:
        raise ValueError(f"plain quadrature is only valid for non-touching pairs, got {cls.value}")
    return cls


def pair_integrals(mesh: SurfaceMesh, p: int, q: int, params: MaterialParams,
                   rule: QuadratureRule, strategy: str = "subtraction") -> PairIntegralResult:
    """``I1``/``I2`` with trial triangle ``p`` and test triangle ``q``."""
    cls = _check_strategy(mesh, p, q, strategy)
    I1, I2 = batched_pair_integrals(mesh.coords(q)[None], mesh.coords(p)[None], params.k, rule,
                                    strategy == "subtraction", np.array([cls is PairClass.SAME]))
    return PairIntegralResult(I1[0], I2[0])


def combine(params: MaterialParams, I1, I2):
    return params.charge_coef * I2 - params.current_coef * I1


def local_pair_matrix(mesh, p, q, params, rule, strategy="subtraction") -> np.ndarray:
    """``(i/(omega eps)) I2 - i omega mu I1`` for the pair (trial p, test q)."""
    res = pair_integrals(mesh, p, q, params, rule, strategy)
    return combine(params, res.I1, res.I2)


def _pair_list(mesh, near_strategy):
    q_idx, p_idx = np.meshgrid(np.arange(mesh.nt), np.arange(mesh.nt), indexing="ij")
    q_idx, p_idx = q_idx.ravel(), p_idx.ravel()
    shared = np.array([len(set(mesh.triangles[q].tolist()) & set(mesh.triangles[p].tolist()))
                       for q, p in zip(q_idx, p_idx)])
    subtract = (shared > 0) | (near_strategy == "subtraction")
    return q_idx, p_idx, shared == 3, subtract


def local_matrices(coords, q_idx, p_idx, same, subtract, params, rule):
    """Local matrices for the listed (test, trial) pairs; ``coords`` may be dual."""
    k = params.k
    out = None
    for flag in (True, False):
        sel = np.flatnonzero(subtract == flag)
        if sel.size == 0:
            continue
        tq = coords[q_idx[sel]]
        tp = coords[p_idx[sel]]
        I1, I2 = batched_pair_integrals(tq, tp, k, rule, flag, same[sel])
        loc = combine(params, I1, I2)
        if out is None:
            out = _empty_like(loc, len(q_idx))
        out = _scatter_rows(out, sel, loc)
    return out


def _empty_like(x, n):
    if isinstance(x, dn.Dual):
        return dn.Dual(np.zeros((n, 3, 3), complex), np.zeros((n, 3, 3), complex))
    return np.zeros((n, 3, 3), complex)


def _scatter_rows(out, sel, loc):
    if isinstance(out, dn.Dual):
        out.val[sel] = dn.value(loc)
        out.der[sel] = dn.derivative(loc)
        return out
    out[sel] = loc
    return out


def accumulate(dofmap: DofMap, q_idx, p_idx, loc):
    """Scatter sign-weighted local 3x3 blocks into a dense matrix, in list order."""
    n = dofmap.ndof
    A = np.zeros((n, n), complex)
    rows = dofmap.dof[q_idx]  # (P, 3)
    cols = dofmap.dof[p_idx]
    weight = dofmap.sign[q_idx][:, :, None] * dofmap.sign[p_idx][:, None, :]
    R = np.broadcast_to(rows[:, :, None], weight.shape)
    C = np.broadcast_to(cols[:, None, :], weight.shape)
    keep = (R >= 0) & (C >= 0)
    np.add.at(A, (R[keep], C[keep]), (weight * loc)[keep])
    return A


def assemble_system(mesh: SurfaceMesh, dofmap: DofMap, params: MaterialParams,
                    rule: QuadratureRule, near_strategy: str = "subtraction") -> np.ndarray:
    """Dense EFIE matrix ``A[test dof, trial dof]``."""
    if dofmap.ndof == 0:
        raise ValueError("mesh has no interior edges")
    if near_strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {near_strategy!r}")
    q_idx, p_idx, same, subtract = _pair_list(mesh, near_strategy)
    loc = local_matrices(mesh.coords(), q_idx, p_idx, same, subtract, params, rule)
    return accumulate(dofmap, q_idx, p_idx, loc)


def _rhs_local(coords, wave, k, rule):
    """``int_T f_i . E_inc`` for every triangle and local index (nt, 3)."""
    E0 = np.asarray(wave.E0, dtype=complex)
    khat = np.asarray(wave.khat, dtype=float)
    X = rule.map(coords)  # (nt, x, 3)
    phase = dn.exp(1j * k * dn.einsum("c,txc->tx", khat, X))
    xoff = dn.expand(X, -3) - dn.expand(coords, -2)  # (nt, i, x, 3)
    # area of the triangle cancels against the 1/(2|T|) of the basis
    return 0.5 * dn.einsum("x,tixc,c,tx->ti", rule.weights, xoff, E0, phase)


def scatter_rhs(dofmap: DofMap, loc):
    b = np.zeros(dofmap.ndof, complex)
    keep = dofmap.dof >= 0
    np.add.at(b, dofmap.dof[keep], (dofmap.sign * loc)[keep])
    return b


def rhs_plane_wave(mesh: SurfaceMesh, dofmap: DofMap, wave: PlaneWave,
                   rule: QuadratureRule, params: MaterialParams | None = None) -> np.ndarray:
    """``b[g] = sum sign * int_T f . E0 exp(i k khat . x) dx``."""
    k = (params or MaterialParams()).k
    return scatter_rhs(dofmap, _rhs_local(mesh.coords(), wave, k, rule))
