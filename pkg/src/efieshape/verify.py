"""Invariant suites behind ``efieshape verify`` and the acceptance tests.

Every check returns a :class:`Check` carrying the measured quantity and the
tolerance it is held to, so reports can show how close each one is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import shapederiv as sd
from .adjoint import ObjectiveSpec, build_state, gradient_adjoint, gradient_direct, gradient_fd
from .assembly import MaterialParams, PlaneWave, assemble_system, pair_integrals
from .fixtures import FIXTURE_NAMES, default_perturbation, fixture, probe_perturbations
from .mesh import ShapePerturbation, build_dofmap, plate_mesh
from .oracles import potentials_reference, random_potential_case
from .quadrature import SUPPORTED_N, analytic_potentials, dunavant_rule

H_SWEEP = tuple(10.0 ** -e for e in range(4, 13))
# oblique unit direction with no zero component
OBLIQUE = (1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tolerance: str
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.suite}: {self.name}  measured={self.measured:.3e}  required {self.tolerance}"


def _rel(a, b):
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def default_wave():
    """Oblique plane wave used by the system-level suites."""
    angle = math.radians(30.0)
    return PlaneWave((1.0, 0.0, 0.0), (0.0, math.sin(angle), -math.cos(angle)))


# ---------------------------------------------------------------------------
# pair-level derivative suites
# ---------------------------------------------------------------------------


def derivative_sweep(n_list=SUPPORTED_N, params=None, h=sd.FD_STEP):
    """Analytical, AD and forward-FD local derivatives over fixtures x n x probes.

    Returns two arrays of relative Frobenius differences (AD, FD) against the
    analytical result.
    """
    params = params or MaterialParams()
    ad_err, fd_err = [], []
    for name in FIXTURE_NAMES:
        fx = fixture(name)
        for n in n_list:
            rule = dunavant_rule(n)
            for pert in probe_perturbations(fx):
                an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule)
                ad = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule)
                fd = sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule, h=h)
                ad_err.append(_rel(ad, an))
                fd_err.append(_rel(fd, an))
    return np.array(ad_err), np.array(fd_err)


def check_triple_agreement(n_list=SUPPORTED_N, params=None, h=sd.FD_STEP):
    ad_err, fd_err = derivative_sweep(n_list, params, h)
    median = float(np.median(fd_err))
    return [
        Check("shapederiv", "AD vs analytical, max rel. Frobenius", float(ad_err.max()),
              "<= 1e-12", bool(ad_err.max() <= 1e-12)),
        Check("shapederiv", "forward FD vs analytical, max rel.", float(fd_err.max()),
              "<= 1e-5", bool(fd_err.max() <= 1e-5)),
        Check("shapederiv", "forward FD vs analytical, min rel.", float(fd_err.min()),
              ">= 1e-9", bool(fd_err.min() >= 1e-9)),
        Check("shapederiv", "forward FD vs analytical, median rel.", median,
              "in [1e-8, 1e-6]", bool(1e-8 <= median <= 1e-6)),
    ]


def check_translation_invariance(rule=None, params=None):
    """Sum over all vertices of the local derivative vanishes for a fixed direction."""
    rule = rule or dunavant_rule(7)
    params = params or MaterialParams()
    worst = 0.0
    ok = True
    for name in FIXTURE_NAMES:
        fx = fixture(name)
        for tau in np.eye(3):
            ds = [sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, ShapePerturbation(m, tuple(tau)),
                                         params, rule) for m in range(fx.mesh.nv)]
            total = np.linalg.norm(sum(ds))
            scale = max(np.linalg.norm(d) for d in ds)
            ok &= bool(total <= 1e-12 * scale)
            if scale > 0:
                worst = max(worst, total / scale)
    return [Check("shapederiv", "rigid translation, |sum_m dA| / max_m |dA|", worst, "<= 1e-12", ok)]


def check_locality(rule=None, params=None):
    """Bitwise-zero derivative for a node outside both triangles."""
    rule = rule or dunavant_rule(7)
    params = params or MaterialParams()
    mesh = plate_mesh()
    # triangle pairs far from node 24 (top-right corner)
    largest = 0.0
    for p, q in ((0, 1), (0, 5), (2, 9)):
        for tau in (np.eye(3).tolist() + [list(OBLIQUE)]):
            d = sd.d_local_pair_matrix(mesh, p, q, ShapePerturbation(24, tuple(tau)), params, rule)
            largest = max(largest, float(np.abs(d).max()))
    return [Check("shapederiv", "node outside both triangles, max |dA|", largest, "== 0 exactly",
                  largest == 0.0)]


def check_kernel_forms(count=1000, k=1.0, seed=0):
    """Product and gradient forms of the kernel shape derivative agree pointwise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(count, 3))
    y = rng.normal(size=(count, 3))
    tau = rng.normal(size=3)
    lx, ly = rng.uniform(size=count), rng.uniform(size=count)
    a = sd.kernel_shape_derivative(x, y, tau, lx, ly, k, form="gradient")
    b = sd.kernel_shape_derivative(x, y, tau, lx, ly, k, form="product")
    err = float(np.max(np.abs(a - b) / np.abs(b)))
    return [Check("shapederiv", "kernel derivative, product vs gradient form", err, "<= 1e-14",
                  err <= 1e-14)]


def check_h_sweep(params=None, rule=None):
    """Forward-FD error over h in 1e-4..1e-12 has an interior minimum."""
    params = params or MaterialParams()
    rule = rule or dunavant_rule(7)
    checks = []
    for name in FIXTURE_NAMES:
        fx = fixture(name)
        pert = default_perturbation(fx)
        an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule)
        err = np.array([_rel(sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule, h=h),
                             an) for h in H_SWEEP])
        i = int(np.argmin(err))
        interior = 0 < i < len(err) - 1
        monotone = bool(np.all(np.diff(err) <= 0) or np.all(np.diff(err) >= 0))
        checks.append(Check("shapederiv", f"h-sweep {name}: best h = {H_SWEEP[i]:.0e}", float(err[i]),
                            "interior minimum, non-monotone", interior and not monotone))
    return checks


# ---------------------------------------------------------------------------
# quadrature / assembly suites
# ---------------------------------------------------------------------------


def check_quadrature_rules():
    worst = max(abs(dunavant_rule(n).weights.sum() - 1.0) for n in SUPPORTED_N)
    return [Check("quadrature", "weight sums, max |sum - 1|", float(worst), "<= 1e-13", worst <= 1e-13)]


def check_potentials(cases=100, seed=0):
    """Closed-form potentials vs adaptive subdivision, off-plane points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    pou = 0.0
    for _ in range(cases):
        tri, x = random_potential_case(rng)
        ana = analytic_potentials(x, tri)
        ref = potentials_reference(x, tri)
        for key, val in ref.items():
            worst = max(worst, _rel(np.asarray(getattr(ana, key)), val))
        pou = max(pou, abs(ana.lam_inv_r.sum() - ana.inv_r) / abs(ana.inv_r))
    return [
        Check("quadrature", f"analytic potentials vs subdivision oracle ({cases} cases)", worst,
              "<= 1e-8", worst <= 1e-8),
        Check("quadrature", "moment partition of unity", float(pou), "<= 1e-12", pou <= 1e-12),
    ]


def check_subtraction_consistency(params=None):
    """Near fixture: subtraction vs plain quadrature at n = 16."""
    params = params or MaterialParams()
    fx = fixture("near")
    rule = dunavant_rule(16)
    sub = pair_integrals(fx.mesh, fx.p, fx.q, params, rule, "subtraction")
    plain = pair_integrals(fx.mesh, fx.p, fx.q, params, rule, "plain")
    e1 = _rel(sub.I1, plain.I1)
    e2 = _rel(sub.I2, plain.I2)
    return [
        Check("assembly", "near pair I1, subtraction vs plain (n=16)", e1, "<= 1e-9", e1 <= 1e-9),
        Check("assembly", "near pair I2, subtraction vs plain (n=16)", e2, "<= 1e-9", e2 <= 1e-9),
    ]


def check_symmetry(params=None, rule=None):
    """``A`` and ``dA`` complex-symmetric on the 32-triangle plate."""
    params = params or MaterialParams()
    rule = rule or dunavant_rule(7)
    mesh = plate_mesh()
    dofmap = build_dofmap(mesh)
    A = assemble_system(mesh, dofmap, params, rule)
    sa = _rel(A, A.T)
    sd_worst = 0.0
    for node in (12, 6, 0):
        dA = sd.d_assemble(mesh, dofmap, params, rule, ShapePerturbation(node, OBLIQUE)).dA
        sd_worst = max(sd_worst, _rel(dA, dA.T))
    return [
        Check("assembly", "plate |A - A^T| / |A|", sa, "<= 1e-12", sa <= 1e-12),
        Check("shapederiv", "plate |dA - dA^T| / |dA|", sd_worst, "<= 1e-12", sd_worst <= 1e-12),
    ]


def check_system_derivatives(params=None, rule=None):
    """Assembled dA, db against the AD backend and forward differences."""
    params = params or MaterialParams()
    rule = rule or dunavant_rule(7)
    mesh = plate_mesh(2, 1)
    dofmap = build_dofmap(mesh)
    wave = default_wave()
    ad_worst = fd_worst = 0.0
    for node in range(mesh.nv):
        pert = ShapePerturbation(node, OBLIQUE)
        an = sd.d_assemble(mesh, dofmap, params, rule, pert, wave)
        ad = sd.ad_assemble(mesh, dofmap, params, rule, pert, wave)
        fd = sd.fd_assemble(mesh, dofmap, params, rule, pert, wave)
        ad_worst = max(ad_worst, _rel(ad.dA, an.dA), _rel(ad.db, an.db))
        fd_worst = max(fd_worst, _rel(fd.dA, an.dA), _rel(fd.db, an.db))
    return [
        Check("shapederiv", "4-triangle dA, db: AD vs analytical", ad_worst, "<= 1e-12",
              ad_worst <= 1e-12),
        Check("shapederiv", "4-triangle dA, db: forward FD vs analytical", fd_worst, "<= 1e-5",
              fd_worst <= 1e-5),
    ]


# ---------------------------------------------------------------------------
# adjoint suite
# ---------------------------------------------------------------------------


def random_design_variables(mesh, count, rng):
    pool = [(m, a) for m in range(mesh.nv) for a in range(3)]
    pick = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(pick)]


def adjoint_errors(params=None, rule=None, count=10, seed=0, fd_step=1e-6):
    """Per-variable relative errors adjoint vs direct and adjoint vs central FD."""
    params = params or MaterialParams()
    rule = rule or dunavant_rule(7)
    rng = np.random.default_rng(seed)
    mesh = plate_mesh()
    state = build_state(mesh, params, rule, default_wave())
    n = state.dofmap.ndof
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    W = B.conj().T @ B / n
    W = 0.5 * (W + W.conj().T)
    c = rng.normal(size=n) + 1j * rng.normal(size=n)
    variables = random_design_variables(mesh, count, rng)
    direct_err, fd_err = [], []
    for spec in (ObjectiveSpec.quadratic_power(W), ObjectiveSpec.linear_functional(c)):
        adj = gradient_adjoint(state, spec, variables).dJ
        direct = np.array([gradient_direct(state, spec, v) for v in variables])
        fd = np.array([gradient_fd(state, spec, v, fd_step) for v in variables])
        floor = 1e-12 * np.abs(direct).max()
        direct_err.extend(np.abs(adj - direct) / np.maximum(np.abs(direct), floor))
        fd_err.extend(np.abs(adj - fd) / np.maximum(np.abs(fd), floor))
    return np.array(direct_err), np.array(fd_err)


def check_adjoint(params=None, rule=None):
    de, fe = adjoint_errors(params, rule)
    return [
        Check("adjoint", "adjoint vs direct, max rel.", float(de.max()), "<= 1e-12", de.max() <= 1e-12),
        Check("adjoint", "adjoint vs central FD (h=1e-6), max rel.", float(fe.max()), "<= 1e-5",
              fe.max() <= 1e-5),
    ]


# ---------------------------------------------------------------------------


def run_all(n_list=SUPPORTED_N, params=None, h=sd.FD_STEP, extra=()):
    """All suites in a fixed order; ``extra`` appends caller-provided checks."""
    params = params or MaterialParams()
    checks = []
    checks += check_quadrature_rules()
    checks += check_potentials()
    checks += check_subtraction_consistency(params)
    checks += check_symmetry(params)
    checks += check_triple_agreement(n_list, params, h)
    checks += check_translation_invariance(params=params)
    checks += check_locality(params=params)
    checks += check_kernel_forms(k=params.k)
    checks += check_h_sweep(params)
    checks += check_system_derivatives(params)
    checks += check_adjoint(params)
    for fn in extra:
        checks += fn()
    return checks
