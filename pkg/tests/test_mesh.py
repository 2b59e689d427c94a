import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgtransport import build_angular_mesh, build_energy_mesh, build_spatial_mesh, angular_quadrature
from dgtransport.errors import InvalidArgument, OutOfDomain
from dgtransport.mesh import build_product_mesh, gauss_legendre


def test_two_by_two_face_counts():
    m = build_spatial_mesh(1.0, 2)
    assert m.n_elements == 4
    assert len([f for f in m.faces if not f.is_boundary]) == 4
    assert len([f for f in m.faces if f.is_boundary]) == 8


@pytest.mark.parametrize("length,n,side", [(10.0, 16, 10 / 16), (20.0, 16, 1.25)])
def test_benchmark_grids(length, n, side):
    m = build_spatial_mesh(length, n)
    assert m.n_elements == 256
    assert m.h == pytest.approx(side)


@pytest.mark.parametrize("length,n", [(0.0, 2), (-1.0, 2), (1.0, 0)])
def test_spatial_mesh_rejects_bad_input(length, n):
    with pytest.raises(InvalidArgument):
        build_spatial_mesh(length, n)


def test_interior_normals_are_opposite():
    m = build_spatial_mesh(3.0, 3)
    nb = m.neighbours
    for face in m.faces:
        own, other = face.elements
        if other < 0:
            continue
        n = np.asarray(face.normal)
        # the neighbour sees this face with the opposite normal
        side_own = [s for s in range(4) if nb[own][s] == other]
        side_other = [s for s in range(4) if nb[other][s] == own]
        assert len(side_own) == len(side_other) == 1
        from dgtransport.mesh import SIDE_NORMALS
        assert np.allclose(SIDE_NORMALS[side_own[0]], n)
        assert np.allclose(SIDE_NORMALS[side_other[0]], -n)


@pytest.mark.parametrize("n_arcs", [8, 16, 64])
def test_angular_tiling(n_arcs):
    am = build_angular_mesh(n_arcs)
    assert am.n_elements == n_arcs
    assert am.measures.sum() == pytest.approx(2 * np.pi, abs=1e-12)


def test_eight_arcs_quarter_pi():
    am = build_angular_mesh(8)
    assert np.allclose(am.measures, np.pi / 4)


@pytest.mark.parametrize("n_arcs", [8, 16, 32])
def test_quadrant_invariant(n_arcs):
    am = build_angular_mesh(n_arcs)
    for arc in am.arcs:
        d, w, _ = angular_quadrature(arc, 7)
        sx, sy = np.sign(d[:, 0]), np.sign(d[:, 1])
        assert sx.min() == sx.max() and sy.min() == sy.max()
        assert (sx[0], sy[0]) == arc.signs


@pytest.mark.parametrize("n_arcs", [0, 4, 12, 9])
def test_angular_mesh_needs_multiple_of_eight(n_arcs):
    with pytest.raises(InvalidArgument):
        build_angular_mesh(n_arcs)


def test_angular_quadrature_integrals():
    am = build_angular_mesh(8)
    total = sq = 0.0
    for arc in am.arcs:
        d, w, _ = angular_quadrature(arc, 4)
        assert w.sum() == pytest.approx(arc.measure, abs=1e-14)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
        total += w.sum()
        sq += np.sum(w * d[:, 0] ** 2)
    assert total == pytest.approx(2 * np.pi, abs=1e-10)
    assert sq == pytest.approx(np.pi, abs=1e-8)


def test_energy_mesh_examples():
    em = build_energy_mesh(10, 1000, 16)
    assert em.n_groups == 16
    assert np.allclose(em.widths, 61.875)
    assert build_energy_mesh(0, 1, 1).groups == [(0.0, 1.0)]
    assert np.allclose(build_energy_mesh(10, 1000, 4).edges, [1000, 752.5, 505, 257.5, 10])


@pytest.mark.parametrize("args", [(5, 5, 2), (10, 1, 2), (-1, 1, 1), (0, 1, 0)])
def test_energy_mesh_rejects_degenerate(args):
    with pytest.raises(InvalidArgument):
        build_energy_mesh(*args)


def test_energy_locate_bounds():
    em = build_energy_mesh(10, 1000, 4)
    assert em.locate(1000) == 0
    assert em.locate(10) == 3
    with pytest.raises(OutOfDomain):
        em.locate(5)


@given(length=st.floats(0.1, 50), n=st.integers(1, 9))
def test_spatial_tiling(length, n):
    m = build_spatial_mesh(length, n)
    assert m.areas.sum() == pytest.approx(length ** 2, rel=1e-12)
    boundary = sum(f.extent for f in m.faces if f.is_boundary)
    assert boundary == pytest.approx(4 * length, rel=1e-12)


@given(x=st.floats(0, 1), y=st.floats(0, 1))
@settings(max_examples=50)
def test_locate_contains_point(x, y):
    m = build_spatial_mesh(1.0, 4)
    k = m.locate(x, y)
    cx, cy = m.corners[k]
    assert cx - 1e-12 <= x <= cx + m.h + 1e-12
    assert cy - 1e-12 <= y <= cy + m.h + 1e-12


@given(e_min=st.floats(0, 100), width=st.floats(1, 1000), n=st.integers(1, 20))
def test_group_widths_sum(e_min, width, n):
    em = build_energy_mesh(e_min, e_min + width, n)
    assert np.all(np.diff(em.edges) < 0)
    assert em.widths.sum() == pytest.approx(width, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_gauss_exactness(n):
    x, w = gauss_legendre(n)
    for k in range(2 * n):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert np.sum(w * x ** k) == pytest.approx(exact, abs=1e-13)


def test_product_mesh_size():
    pm = build_product_mesh(1.0, 3, 16, 10, 1000, 4)
    assert pm.n_elements == 9 * 16 * 4
    assert len(list(pm.elements())) == pm.n_elements
