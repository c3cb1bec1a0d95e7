import warnings

import numpy as np
import pytest

from efieshape.adjoint import (LinearSolver, ObjectiveSpec, SingularSystemError,
                               adjoint_sensitivities, build_state, direct_sensitivity,
                               gradient_adjoint, gradient_direct, gradient_fd,
                               objective_gradient_x, solve)
from efieshape.assembly import MaterialParams, PlaneWave
from efieshape.mesh import plate_mesh
from efieshape.quadrature import dunavant_rule

PARAMS = MaterialParams()
RULE = dunavant_rule(7)
WAVE = PlaneWave((1.0, 0.0, 0.0), (0.0, 0.5, -np.sqrt(0.75)))


@pytest.fixture(scope="module")
def small_state():
    return build_state(plate_mesh(2, 1), PARAMS, RULE, WAVE)


def random_specs(n, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    W = B.conj().T @ B / n
    c = rng.normal(size=n) + 1j * rng.normal(size=n)
    return [ObjectiveSpec.quadratic_power(0.5 * (W + W.conj().T)), ObjectiveSpec.linear_functional(c)]


def test_identity_solve():
    b = np.array([1.0 + 2j, -3.0, 0.5j])
    assert np.array_equal(solve(np.eye(3), b), b)


def test_scalar_solve():
    assert solve(np.array([[2.0 - 1j]]), np.array([3.0 + 1j]))[0] == pytest.approx((3 + 1j) / (2 - 1j))


def test_singular_and_ill_conditioned():
    with pytest.raises(SingularSystemError):
        LinearSolver(np.zeros((2, 2)))
    with pytest.warns(RuntimeWarning):
        LinearSolver(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]]))
    with pytest.raises(ValueError):
        LinearSolver(np.ones((2, 3)))


def test_adjoint_solve_uses_conjugate_transpose():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    g = rng.normal(size=4) + 1j * rng.normal(size=4)
    gamma = LinearSolver(A).solve(g, adjoint=True)
    assert np.allclose(A.conj().T @ gamma, g, rtol=1e-13)


def test_plate_residual():
    state = build_state(plate_mesh(), PARAMS, RULE, WAVE)
    assert np.linalg.norm(state.A @ state.x - state.b) <= 1e-10 * np.linalg.norm(state.b)


def test_objective_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec.quadratic_power(np.array([[1.0, 1j], [1j, 1.0]]))
    with pytest.raises(ValueError):
        ObjectiveSpec.linear_functional(np.eye(2))
    with pytest.raises(ValueError):
        ObjectiveSpec("peak", np.eye(2))


def test_objective_gradient_simple_cases():
    spec = ObjectiveSpec.quadratic_power(np.eye(3))
    e1 = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(objective_gradient_x(spec, e1), 2 * e1)
    assert not np.any(objective_gradient_x(spec, np.zeros(3)))


@pytest.mark.parametrize("which", [0, 1])
def test_objective_gradient_directional_difference(which):
    n = 5
    spec = random_specs(n, seed=4)[which]
    rng = np.random.default_rng(5)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    delta = rng.normal(size=n) + 1j * rng.normal(size=n)
    h = 1e-6
    fd = (spec.value(x + h * delta) - spec.value(x - h * delta)) / (2 * h)
    got = np.real(np.vdot(objective_gradient_x(spec, x), delta))
    assert abs(got - fd) <= 1e-7 * abs(fd)


def test_zero_objective_gradient_gives_zero(small_state):
    n = small_state.dofmap.ndof
    res = gradient_adjoint(small_state, ObjectiveSpec.linear_functional(np.zeros(n)), [(0, 2), (3, 0)])
    assert not np.any(res.dJ)


def test_direct_with_zero_derivatives():
    solver = LinearSolver(np.diag([2.0, 3.0]))
    assert direct_sensitivity(solver, np.ones(2), np.ones(2), np.zeros((2, 2)), np.zeros(2)) == 0.0


def test_one_adjoint_solve_for_all_variables(small_state):
    spec = random_specs(small_state.dofmap.ndof)[0]
    variables = [(m, a) for m in range(small_state.mesh.nv) for a in range(3)]
    before = small_state.solver.solves
    res = gradient_adjoint(small_state, spec, variables)
    assert small_state.solver.solves - before == 1
    assert len(res.dJ) == len(variables)


def test_adjoint_equals_direct(small_state):
    for spec in random_specs(small_state.dofmap.ndof):
        variables = [(m, a) for m in range(small_state.mesh.nv) for a in range(3)]
        adj = gradient_adjoint(small_state, spec, variables).dJ
        direct = np.array([gradient_direct(small_state, spec, v) for v in variables])
        floor = 1e-12 * np.abs(direct).max()
        assert np.all(np.abs(adj - direct) <= 1e-12 * np.maximum(np.abs(direct), floor))


def test_hermitian_toy_closed_form():
    # A(alpha) = diag(a + alpha d), J = |x|^2, x = b / (a + alpha d)
    a = np.array([2.0, 3.0, 5.0])
    d = np.array([0.5, -1.0, 2.0])
    b = np.array([1.0 + 1j, -2.0, 0.5j])
    solver = LinearSolver(np.diag(a))
    x = solver.solve(b)
    grad_x = objective_gradient_x(ObjectiveSpec.quadratic_power(np.eye(3)), x)
    exact = np.sum(-2.0 * np.abs(b) ** 2 * d / a**3)
    dJ, _ = adjoint_sensitivities(solver, x, grad_x, [(np.diag(d), np.zeros(3))])
    direct = direct_sensitivity(solver, x, grad_x, np.diag(d), np.zeros(3))
    assert abs(dJ[0] - exact) <= 1e-12 * abs(exact)
    assert abs(direct - exact) <= 1e-12 * abs(exact)


def test_end_to_end_against_central_difference(small_state):
    for spec in random_specs(small_state.dofmap.ndof, seed=1):
        variables = [(m, a) for m in range(small_state.mesh.nv) for a in range(3)]
        adj = gradient_adjoint(small_state, spec, variables).dJ
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fd = np.array([gradient_fd(small_state, spec, v, 1e-6) for v in variables])
        assert np.all(np.abs(adj - fd) <= 1e-5 * np.abs(fd))
