"""The four canonical triangle-pair configurations.

``Tq`` (test, triangle 0) stays fixed at the unit right triangle in z = 0;
the trial triangle ``Tp`` (triangle 1) is placed so that the pair is
disjoint, shares a vertex, shares an edge, or coincides. ``point`` and
``edge`` lift the free vertex of ``Tp`` out of plane.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .mesh import PairClass, ShapePerturbation, SurfaceMesh

FIXTURE_NAMES = ("near", "point", "edge", "same")

_TQ = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]


class Fixture(NamedTuple):
    name: str
    mesh: SurfaceMesh
    p: int  # trial triangle id
    q: int  # test triangle id
    shared_node: int  # default perturbed node


def fixture(name: str) -> Fixture:
    if name == "near":
        shift = np.array([1.5, 0.5, 0.25])
        verts = _TQ + [tuple(np.array(v) + shift) for v in _TQ]
        return Fixture(name, SurfaceMesh(verts, [(0, 1, 2), (3, 4, 5)]), 1, 0, 0)
    if name == "point":
        verts = _TQ + [(2.0, 0.0, 0.0), (1.5, 1.0, 0.5)]
        return Fixture(name, SurfaceMesh(verts, [(0, 1, 2), (1, 3, 4)]), 1, 0, 1)
    if name == "edge":
        verts = _TQ + [(1.0, 1.0, 0.5)]
        return Fixture(name, SurfaceMesh(verts, [(0, 1, 2), (1, 2, 3)]), 1, 0, 1)
    if name == "same":
        return Fixture(name, SurfaceMesh(_TQ, [(0, 1, 2)]), 0, 0, 0)
    raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")


def expected_class(name: str) -> PairClass:
    return PairClass(name)


def default_perturbation(fx: Fixture, tau=None) -> ShapePerturbation:
    """Shared (or first) vertex of ``Tq``; lifted in z unless ``tau`` is given.

    A coincident pair is invariant under an out-of-plane motion of one of
    its vertices to first order, so ``same`` defaults to an in-plane
    direction.
    """
    if tau is None:
        tau = (1.0, 0.0, 0.0) if fx.name == "same" else (0.0, 0.0, 1.0)
    return ShapePerturbation(fx.shared_node, tuple(float(t) for t in tau))


def probe_perturbations(fx: Fixture) -> list:
    """Six (node, direction) probes touching the pair with non-trivial effect."""
    tq = fx.mesh.triangles[fx.q].tolist()
    tp = fx.mesh.triangles[fx.p].tolist()
    own_p = [v for v in tp if v not in tq]
    second = own_p[-1] if own_p else tq[2]
    oblique = tuple(np.array([1.0, 2.0, 2.0]) / 3.0)
    dirs = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), oblique]
    return [ShapePerturbation(n, d) for n in (fx.shared_node, second) for d in dirs]
