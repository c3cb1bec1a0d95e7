"""Objectives over the EFIE solution and their shape gradients.

For a real objective ``J(x)`` with ``A x = b`` the sensitivity to a design
variable ``alpha`` is

    dJ/dalpha = Re[gamma^H (db - dA x)],      A^H gamma = grad_x J,

where ``grad_x J = grad_{Re x} J + i grad_{Im x} J`` so that
``dJ = Re[(grad_x J)^H dx]``. One adjoint solve serves every variable. The
direct route solves ``A dx = db - dA x`` per variable and is kept as a
cross-check.

Design variables are ``(node, axis)`` pairs: the hat-function deformation
of one vertex along one Cartesian axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import MaterialParams, PlaneWave, assemble_system, rhs_plane_wave
from .mesh import DofMap, ShapePerturbation, SurfaceMesh, build_dofmap, deform_mesh
from .quadrature import QuadratureRule
from .shapederiv import d_assemble

RESIDUAL_TOL = 1e-10
# reciprocal condition estimate below which solve() warns
RCOND_WARN = 1e-13
AXES = "xyz"


class SingularSystemError(np.linalg.LinAlgError):
    """LU factorisation hit an exactly singular pivot."""


def _factor(A):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(A, check_finite=True)
        except (sla.LinAlgWarning, np.linalg.LinAlgError) as exc:
            raise SingularSystemError(f"singular system matrix: {exc}") from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.size and diag.min() == 0:
        raise SingularSystemError("singular system matrix")
    gecon, = sla.get_lapack_funcs(("gecon",), (lu[0],))
    rcond, _ = gecon(lu[0], np.linalg.norm(A, 1), norm="1")
    if rcond < RCOND_WARN:
        warnings.warn(f"system matrix is ill-conditioned (rcond ~ {rcond:.1e})", RuntimeWarning)
    return lu


class LinearSolver:
    """Dense LU with partial pivoting; counts the solves it performs."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=complex)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("system matrix must be square")
        self._lu = _factor(self.A)
        self.solves = 0

    def solve(self, b, adjoint=False):
        self.solves += 1
        return sla.lu_solve(self._lu, np.asarray(b, dtype=complex), trans=2 if adjoint else 0)


def solve(A, b) -> np.ndarray:
    """Solve ``A x = b`` and check the relative residual."""
    x = LinearSolver(A).solve(b)
    b = np.asarray(b, dtype=complex)
    scale = np.linalg.norm(b)
    if scale > 0 and np.linalg.norm(np.asarray(A) @ x - b) > RESIDUAL_TOL * scale:
        warnings.warn("relative residual exceeds 1e-10", RuntimeWarning)
    return x


@dataclass(frozen=True)
class ObjectiveSpec:
    """``kind="quadratic-power"``: ``J = x^H W x``; ``"linear-functional-magnitude"``: ``J = |c^H x|^2``."""

    kind: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if self.kind == "quadratic-power":
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise ValueError("W must be a square matrix")
            if not np.allclose(data, data.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(data).max())):
                raise ValueError("W must be Hermitian")
        elif self.kind == "linear-functional-magnitude":
            if data.ndim != 1:
                raise ValueError("c must be a vector")
        else:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        object.__setattr__(self, "data", data)

    @classmethod
    def quadratic_power(cls, W):
        return cls("quadratic-power", W)

    @classmethod
    def linear_functional(cls, c):
        return cls("linear-functional-magnitude", c)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=complex)
        if self.kind == "quadratic-power":
            return float(np.real(np.vdot(x, self.data @ x)))
        return float(abs(np.vdot(self.data, x)) ** 2)


def objective_gradient_x(spec: ObjectiveSpec, x) -> np.ndarray:
    """``grad_x J`` with the ``Re + i Im`` convention."""
    x = np.asarray(x, dtype=complex)
    if spec.kind == "quadratic-power":
        return 2.0 * (spec.data @ x)
    return 2.0 * np.vdot(spec.data, x) * spec.data


@dataclass
class SystemState:
    """Assembled and solved EFIE system for one mesh and incident wave."""

    mesh: SurfaceMesh
    dofmap: DofMap
    params: MaterialParams
    rule: QuadratureRule
    wave: PlaneWave
    A: np.ndarray
    b: np.ndarray
    x: np.ndarray
    solver: LinearSolver = field(repr=False)


def build_state(mesh, params, rule, wave, dofmap=None) -> SystemState:
    dofmap = dofmap or build_dofmap(mesh)
    A = assemble_system(mesh, dofmap, params, rule)
    b = rhs_plane_wave(mesh, dofmap, wave, rule, params)
    solver = LinearSolver(A)
    x = solver.solve(b)
    return SystemState(mesh, dofmap, params, rule, wave, A, b, x, solver)


def design_perturbation(node: int, axis: int) -> ShapePerturbation:
    tau = [0.0, 0.0, 0.0]
    tau[axis] = 1.0
    return ShapePerturbation(int(node), tuple(tau))


@dataclass
class GradientResult:
    variables: list  # (node, axis)
    dJ: np.ndarray
    gamma: np.ndarray


def _derivatives(state, perturbation):
    md = d_assemble(state.mesh, state.dofmap, state.params, state.rule, perturbation, state.wave)
    return md.dA, md.db


def adjoint_sensitivities(solver: LinearSolver, x, grad_x, derivatives):
    """``Re[gamma^H (db - dA x)]`` for each ``(dA, db)`` after one adjoint solve.

    ``derivatives`` may be any iterable (e.g. a generator assembling dA
    lazily); the adjoint vector is shared by all entries.
    """
    gamma = solver.solve(grad_x, adjoint=True)
    out = [float(np.real(np.vdot(gamma, db - dA @ x))) for dA, db in derivatives]
    return np.array(out), gamma


def direct_sensitivity(solver: LinearSolver, x, grad_x, dA, db) -> float:
    """``Re[(grad_x J)^H dx]`` with ``A dx = db - dA x``."""
    dx = solver.solve(db - dA @ x)
    return float(np.real(np.vdot(grad_x, dx)))


def gradient_adjoint(state: SystemState, spec: ObjectiveSpec, variables) -> GradientResult:
    """Shape gradient for each ``(node, axis)`` through one adjoint solve.

    The explicit ``dJ/dalpha`` term is zero for the supported objectives,
    which do not depend on the geometry directly.
    """
    derivs = (_derivatives(state, design_perturbation(m, a)) for m, a in variables)
    dJ, gamma = adjoint_sensitivities(state.solver, state.x, objective_gradient_x(spec, state.x),
                                      derivs)
    return GradientResult(list(variables), dJ, gamma)


def gradient_direct(state: SystemState, spec: ObjectiveSpec, variable) -> float:
    """Direct-differentiation shape derivative for one ``(node, axis)``."""
    dA, db = _derivatives(state, design_perturbation(*variable))
    return direct_sensitivity(state.solver, state.x, objective_gradient_x(spec, state.x), dA, db)


def objective_pipeline(mesh, params, rule, wave, spec, dofmap=None) -> float:
    """``J(solve(assemble(mesh)))``."""
    return spec.value(build_state(mesh, params, rule, wave, dofmap).x)


def gradient_fd(state: SystemState, spec: ObjectiveSpec, variable, h=1e-6) -> float:
    """Central difference of the whole pipeline along one design variable."""
    node, axis = variable
    vals = []
    for sign in (1.0, -1.0):
        tau = [0.0, 0.0, 0.0]
        tau[axis] = sign
        msh = deform_mesh(state.mesh, ShapePerturbation(int(node), tuple(tau)), h)
        vals.append(objective_pipeline(msh, state.params, state.rule, state.wave, spec, state.dofmap))
    return (vals[0] - vals[1]) / (2.0 * h)
