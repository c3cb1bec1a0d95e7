import numpy as np
import pytest

from efieshape.fixtures import FIXTURE_NAMES, expected_class, fixture
from efieshape.mesh import (MeshError, PairClass, ShapePerturbation, SurfaceMesh, build_dofmap,
                            classify_pair, deform_mesh, hat_surface_gradient, hat_value, load_mesh,
                            octahedron_mesh, plate_mesh, rt_div, rt_eval, write_mesh)
from efieshape.quadrature import triangle_frame

SQUARE = ([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], [(0, 1, 2), (0, 2, 3)])


@pytest.mark.parametrize("verts, tris", [
    ([(0, 0, 0), (1, 0, 0), (2, 0, 0)], [(0, 1, 2)]),  # collinear
    ([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 1)]),  # repeated index
    ([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 3)]),  # out of range
    ([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2), (2, 1, 0)]),  # coincident triangles
    ([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 0)], [(0, 1, 2), (3, 1, 2)]),  # duplicate vertex
    ([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, -1)],
     [(0, 1, 2), (0, 1, 3), (0, 1, 4)]),  # junction edge
    ([(0, 0, np.nan), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)]),
])
def test_invalid_meshes_rejected(verts, tris):
    with pytest.raises(MeshError):
        SurfaceMesh(verts, tris)


def test_mesh_is_read_only():
    mesh = SurfaceMesh(*SQUARE)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_load_write_round_trip(tmp_path):
    mesh = plate_mesh(3, 2)
    path = tmp_path / "plate.txt"
    write_mesh(mesh, path)
    again = load_mesh(path)
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.triangles, mesh.triangles)


def test_load_accepts_comments(tmp_path):
    path = tmp_path / "sq.txt"
    path.write_text("# unit square\n4 2\n0 0 0\n1 0 0 # corner\n1 1 0\n0 1 0\n\n0 1 2\n0 2 3\n")
    mesh = load_mesh(path)
    assert mesh.nv == 4 and mesh.nt == 2


@pytest.mark.parametrize("text", ["3 1\n0 0 0\n1 0 0\n0 1 0\n", "2 1\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n",
                                  "3 1\n0 0\n1 0 0\n0 1 0\n0 1 2\n", "x y\n"])
def test_load_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(MeshError):
        load_mesh(path)


def test_dofmap_signs_and_counts():
    mesh = SurfaceMesh(*SQUARE)
    dm = build_dofmap(mesh)
    assert dm.ndof == 1
    # shared edge (0, 2) is opposite vertex 1 in triangle 0 and vertex 3 in triangle 1
    assert dm.dof[0].tolist() == [-1, 0, -1] and dm.dof[1].tolist() == [-1, -1, 0]
    assert dm.sign[0, 1] == 1.0 and dm.sign[1, 2] == -1.0


def test_closed_surface_dofs():
    mesh = octahedron_mesh()
    dm = build_dofmap(mesh)
    assert dm.ndof == 12
    # each dof appears exactly twice with opposite signs
    for g in range(dm.ndof):
        signs = dm.sign[dm.dof == g]
        assert sorted(signs.tolist()) == [-1.0, 1.0]


def test_plate_counts():
    mesh = plate_mesh()
    assert (mesh.nv, mesh.nt) == (25, 32)
    assert build_dofmap(mesh).ndof == 40


def test_hat_functions():
    mesh = SurfaceMesh(*SQUARE)
    assert hat_value(mesh, 0, 1, (0.2, 0.5, 0.3)) == 0.5
    assert hat_value(mesh, 1, 1, (0.2, 0.5, 0.3)) == 0.0
    g = hat_surface_gradient(mesh, 0, 1)
    tri = mesh.coords(0)
    assert np.isclose(g @ (tri[1] - tri[0]), 1.0) and np.isclose(g @ (tri[2] - tri[0]), 0.0)
    assert np.all(hat_surface_gradient(mesh, 0, 3) == 0)


def test_rt_normal_flux_and_continuity():
    mesh = plate_mesh(2, 2)
    dm = build_dofmap(mesh)
    for e in dm.edge_of_dof:
        edge = mesh.edges[e]
        a, b = mesh.vertices[list(edge.vertices)]
        mid = 0.5 * (a + b)
        length = np.linalg.norm(b - a)
        fluxes = []
        for t in edge.triangles:
            i = int(np.flatnonzero(dm.dof[t] == np.flatnonzero(dm.edge_of_dof == e)[0])[0])
            n, _, _ = triangle_frame(mesh.coords(t))
            # outward in-plane normal of the edge for triangle t
            nu = np.cross(b - a, n)
            nu /= np.linalg.norm(nu)
            if nu @ (mid - mesh.coords(t).mean(axis=0)) < 0:
                nu = -nu
            for point in (a, mid, b):
                f = dm.sign[t, i] * rt_eval(mesh, t, i, point)
                assert np.isclose(f @ nu * length, 1.0 if dm.sign[t, i] > 0 else -1.0)
            fluxes.append(dm.sign[t, i] * rt_eval(mesh, t, i, mid) @ nu)
        # normal component continuous: outward on one side equals inward on the other
        assert np.isclose(fluxes[0], -fluxes[1])


def test_rt_divergence():
    mesh = SurfaceMesh(*SQUARE)
    _, area, _ = triangle_frame(mesh.coords(0))
    assert rt_div(mesh, 0, 2) == pytest.approx(1.0 / area)


def test_deform_mesh():
    mesh = plate_mesh(2, 2)
    moved = deform_mesh(mesh, ShapePerturbation(4, (0.0, 0.0, 1.0)), 0.25)
    diff = moved.vertices - mesh.vertices
    assert np.array_equal(diff[4], [0.0, 0.0, 0.25])
    assert np.all(np.delete(diff, 4, axis=0) == 0)
    with pytest.raises(ValueError):
        deform_mesh(mesh, ShapePerturbation(4, (0.0, 0.0, 1.0)), 1.0)
    with pytest.raises(ValueError):
        deform_mesh(mesh, ShapePerturbation(99, (0.0, 0.0, 1.0)), 0.1)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_classes(name):
    fx = fixture(name)
    assert classify_pair(fx.mesh, fx.p, fx.q) == expected_class(name)


def test_unknown_fixture():
    with pytest.raises(KeyError):
        fixture("corner")


def test_classify_on_plate():
    mesh = plate_mesh()
    assert classify_pair(mesh, 0, 0) is PairClass.SAME
    assert classify_pair(mesh, 0, 1) is PairClass.EDGE


def test_deform_zero_step_is_identity():
    mesh = plate_mesh(2, 2)
    same = deform_mesh(mesh, ShapePerturbation(3, (0.3, 0.1, 0.9)), 0.0)
    assert np.array_equal(same.vertices, mesh.vertices)


def test_area_derivative():
    # d|T|/ds = |T| div_s(tau lambda_m) = |T| tau . grad lambda_m for in-plane tau
    mesh = SurfaceMesh(*SQUARE)
    pert = ShapePerturbation(2, (0.3, -0.2, 0.0))
    h = 1e-7
    fd = (deform_mesh(mesh, pert, h).areas - mesh.areas) / h
    exact = [mesh.areas[t] * hat_surface_gradient(mesh, t, 2) @ pert.direction for t in range(2)]
    assert np.allclose(fd, exact, rtol=1e-6)
