import numpy as np
import pytest

from efieshape import shapederiv as sd
from efieshape.assembly import MaterialParams, PlaneWave, local_pair_matrix, rhs_plane_wave
from efieshape.fixtures import FIXTURE_NAMES, default_perturbation, fixture
from efieshape.kernel import green
from efieshape.mesh import ShapePerturbation, SurfaceMesh, build_dofmap, deform_mesh, plate_mesh
from efieshape.quadrature import SUPPORTED_N, dunavant_rule, triangle_frame

PARAMS = MaterialParams()
RULE7 = dunavant_rule(7)
WAVE = PlaneWave((1.0, 0.0, 0.0), (0.0, 0.6, -0.8))
SQUARE = SurfaceMesh([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (2, 0, 0.2), (2, 1, 0.1)],
                     [(0, 1, 2), (0, 2, 3), (1, 4, 2), (4, 5, 2)])

# Im of the summed local derivative, default perturbations, n = 1, 3, 4, 6, 7, 12, 13, 16
GOLDEN = {
    "near": (2.160698165822e-02, 1.979393952805e-02, 1.974303417995e-02, 1.969093136909e-02,
             1.968928361843e-02, 1.968895290535e-02, 1.968890851348e-02, 1.968888958923e-02),
    "point": (1.033197644932e-02, 1.583985195496e-02, 1.511299938190e-02, 1.618324505322e-02,
              1.607470087015e-02, 1.612923261004e-02, 1.612311783683e-02, 1.613423763345e-02),
    "edge": (3.087824844944e-02, 3.677352622408e-02, 3.704834132076e-02, 4.140617896828e-02,
             4.310064225300e-02, 4.359786972149e-02, 4.374551673817e-02, 4.477686468992e-02),
    "same": (1.535654516041e+00, 1.313784410378e+00, 1.304624123701e+00, 1.287015182718e+00,
             1.284924558961e+00, 1.280763964910e+00, 1.280464515238e+00, 1.277981093142e+00),
}


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_distance_derivative_against_differences():
    rng = np.random.default_rng(0)
    h = 1e-7
    for _ in range(20):
        x, y, tau = rng.normal(size=(3, 3))
        lx, ly = rng.uniform(size=2)
        got = sd.distance_shape_derivative(x, y, tau, lx, ly)
        fd = (np.linalg.norm(x + h * lx * tau - y - h * ly * tau) - np.linalg.norm(x - y)) / h
        assert abs(got - fd) <= 1e-6 * abs(got) + 1e-12


def test_distance_derivative_rejects_coincident_points():
    with pytest.raises(ValueError):
        sd.distance_shape_derivative(np.ones(3), np.ones(3), np.ones(3), 1.0, 0.0)


def test_jacobian_term_against_differences():
    mesh = fixture("edge").mesh
    tau = np.array([0.3, -0.5, 0.8])
    m, tq, tp = 1, 0, 1
    T = sd.jacobian_shape_term(mesh, tq, tp, m, tau)
    rng = np.random.default_rng(1)
    v, u = rng.normal(size=(2, 3))

    def jac(t, s):
        # F_s' restricted to the plane of triangle t, extended by the identity normally
        _, _, grads = triangle_frame(mesh.coords(t))
        i = mesh.triangles[t].tolist().index(m)
        return np.eye(3) + s * np.outer(tau, grads[i])

    h = 1e-7
    fd = (v @ jac(tq, h).T @ jac(tp, h) @ u - v @ u) / h
    assert abs(v @ T @ u - fd) <= 1e-6 * abs(fd)
    # swapping the triangles transposes the term
    assert np.allclose(sd.jacobian_shape_term(mesh, tp, tq, m, tau), T.T)


@pytest.mark.parametrize("form", ["gradient", "product"])
def test_kernel_derivative_against_differences(form):
    rng = np.random.default_rng(2)
    k, h = 1.7, 1e-7
    for _ in range(10):
        x, y, tau = rng.normal(size=(3, 3))
        lx, ly = rng.uniform(size=2)
        got = sd.kernel_shape_derivative(x, y, tau, lx, ly, k, form)
        moved = np.linalg.norm(x + h * lx * tau - y - h * ly * tau)
        fd = (green(k, moved) - green(k, np.linalg.norm(x - y))) / h
        assert abs(got - fd) <= 1e-6 * abs(fd)
    with pytest.raises(ValueError):
        sd.kernel_shape_derivative(x, y, tau, lx, ly, k, "other")


def test_locality_exact_zero():
    mesh = plate_mesh()
    pert = ShapePerturbation(24, (0.2, 0.3, 0.9))
    for p, q in ((0, 1), (3, 3), (0, 10)):
        d = sd.pair_derivative(mesh, p, q, pert, PARAMS, RULE7)
        assert not np.any(d.dI1) and not np.any(d.dI2) and not np.any(d.dA_local)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_ad_value_bit_identical(name):
    fx = fixture(name)
    _, value = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, default_perturbation(fx), PARAMS,
                                       RULE7, return_value=True)
    assert np.array_equal(value, local_pair_matrix(fx.mesh, fx.p, fx.q, PARAMS, RULE7))


def test_edge_fixture_matches_forward_difference():
    fx = fixture("edge")
    pert = default_perturbation(fx)
    an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7)
    fd = sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7)
    assert 1e-9 <= _rel(fd, an) <= 1e-6
    central = sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7, h=1e-5,
                                      scheme="central")
    assert _rel(central, an) <= 1e-8


def test_same_fixture_matches_ad_n12():
    fx = fixture("same")
    rule = dunavant_rule(12)
    for tau in ((1.0, 0.0, 0.0), (0.2, 0.7, 0.1)):
        pert = ShapePerturbation(fx.shared_node, tau)
        an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, rule)
        ad = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, rule)
        assert _rel(ad, an) <= 1e-12


def test_same_fixture_normal_motion_has_zero_derivative():
    fx = fixture("same")
    d = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, ShapePerturbation(0, (0, 0, 1)), PARAMS, RULE7)
    assert np.abs(d).max() <= 1e-14


def test_plain_strategy_derivative():
    fx = fixture("near")
    pert = default_perturbation(fx)
    an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7, "plain")
    ad = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7, "plain")
    assert _rel(ad, an) <= 1e-12
    with pytest.raises(ValueError):
        sd.d_local_pair_matrix(fixture("edge").mesh, 1, 0, pert, PARAMS, RULE7, "plain")


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_golden_derivative_sums(name):
    fx = fixture(name)
    pert = default_perturbation(fx)
    got = [np.imag(sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS,
                                          dunavant_rule(n)).sum()) for n in SUPPORTED_N]
    assert np.allclose(got, GOLDEN[name], rtol=1e-10, atol=0)


def test_rhs_derivative():
    dm = build_dofmap(SQUARE)
    for node in range(SQUARE.nv):
        pert = ShapePerturbation(node, (0.3, -0.4, 0.5))
        an = sd.d_rhs_plane_wave(SQUARE, dm, WAVE, RULE7, pert, PARAMS)
        ad = sd.ad_assemble(SQUARE, dm, PARAMS, RULE7, pert, WAVE).db
        h = 1e-8
        fd = (rhs_plane_wave(deform_mesh(SQUARE, pert, h), dm, WAVE, RULE7)
              - rhs_plane_wave(SQUARE, dm, WAVE, RULE7)) / h
        assert _rel(ad, an) <= 1e-12
        assert _rel(fd, an) <= 1e-6


def test_rhs_derivative_static_limit_orthogonal_motion():
    # k = 0 and tau orthogonal to E0: only the Jacobian term remains and it vanishes
    dm = build_dofmap(SQUARE)
    wave = PlaneWave((1.0, 0.0, 0.0), (0.0, 0.0, -1.0))
    db = sd.d_rhs_plane_wave(SQUARE, dm, wave, RULE7, ShapePerturbation(2, (0.0, 1.0, 0.0)),
                             MaterialParams(omega=1e-300))
    assert np.abs(db).max() <= 1e-300


def test_assembled_derivative_against_backends():
    dm = build_dofmap(SQUARE)
    for node in range(SQUARE.nv):
        pert = ShapePerturbation(node, (1 / 3, 2 / 3, 2 / 3))
        an = sd.d_assemble(SQUARE, dm, PARAMS, RULE7, pert, WAVE)
        ad = sd.ad_assemble(SQUARE, dm, PARAMS, RULE7, pert, WAVE)
        fd = sd.fd_assemble(SQUARE, dm, PARAMS, RULE7, pert, WAVE)
        assert _rel(ad.dA, an.dA) <= 1e-12
        assert 1e-10 <= _rel(fd.dA, an.dA) <= 1e-6
        assert _rel(fd.db, an.db) <= 1e-6
        central = sd.fd_assemble(SQUARE, dm, PARAMS, RULE7, pert, h=1e-5, scheme="central")
        assert _rel(central.dA, an.dA) <= 1e-8


def test_global_translation_invariance():
    dm = build_dofmap(SQUARE)
    for tau in np.eye(3):
        total = sum(sd.d_assemble(SQUARE, dm, PARAMS, RULE7, ShapePerturbation(m, tuple(tau))).dA
                    for m in range(SQUARE.nv))
        A_scale = max(np.linalg.norm(sd.d_assemble(SQUARE, dm, PARAMS, RULE7,
                                                   ShapePerturbation(m, tuple(tau))).dA)
                      for m in range(SQUARE.nv))
        assert np.linalg.norm(total) <= 1e-12 * A_scale


def test_invalid_arguments():
    fx = fixture("edge")
    pert = default_perturbation(fx)
    with pytest.raises(ValueError):
        sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7, h=0.0)
    with pytest.raises(ValueError):
        sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7, scheme="backward")
    with pytest.raises(ValueError):
        sd.d_assemble(fx.mesh, build_dofmap(fx.mesh), PARAMS, RULE7, ShapePerturbation(9, (0, 0, 1)))


def test_skew_hook_breaks_agreement_only_inside_context():
    fx = fixture("edge")
    pert = default_perturbation(fx)
    ad = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7)
    with sd.skewed_subtraction(1.5):
        skewed = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7)
    clean = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, PARAMS, RULE7)
    assert _rel(skewed, ad) > 1e-6
    assert _rel(clean, ad) <= 1e-12


def test_distance_derivative_trivial_cases():
    x, y = np.array([1.0, 2.0, 0.5]), np.array([-0.3, 0.4, 1.0])
    assert sd.distance_shape_derivative(x, y, np.array([0.1, 0.2, 0.3]), 0.4, 0.4) == 0.0
    tau = np.cross(x - y, [0.0, 0.0, 1.0])
    assert abs(sd.distance_shape_derivative(x, y, tau, 1.0, 0.0)) <= 1e-15


def test_rhs_derivative_local_support():
    mesh = plate_mesh()
    dm = build_dofmap(mesh)
    wave = PlaneWave((1.0, 0.0, 0.0), (0.0, 0.0, -1.0))
    node = 12  # plate centre
    db = sd.d_rhs_plane_wave(mesh, dm, wave, RULE7, ShapePerturbation(node, (0.6, 0.8, 0.0)))
    star = mesh.star(node)
    touched = set(dm.dof[star][dm.dof[star] >= 0].tolist())
    away = [g for g in range(dm.ndof) if g not in touched]
    assert away and not np.any(db[away])
    assert np.any(db[sorted(touched)])
