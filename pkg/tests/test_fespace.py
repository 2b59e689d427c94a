import math

import numpy as np
import pytest

import dgtransport as dt
from dgtransport.errors import InvalidArgument, InvalidData, OutOfDomain
from dgtransport.physics import CrossSectionModel

from conftest import make_ops


def _space(model=None, n=2, arcs=8, degrees=(1, 1, 0), **kw):
    return make_ops(model, n=n, arcs=arcs, degrees=degrees, **kw).space


def _const_model(abar):
    return dt.isotropic_model(abar, 0.0)


@pytest.mark.parametrize("abar,factor", [(1.0, 1.0), (4.0, 0.5)])
def test_constant_basis_value(abar, factor):
    sp = _space(_const_model(abar), n=1, degrees=(0, 0, 0))
    vol = 1.0 * (np.pi / 4)   # unit square times one arc, one unit-width group
    one = np.zeros(sp.layout.shape)
    one[..., 0] = 1.0
    assert sp.evaluate(one, (0.5, 0.5), (1.0, 0.1)) == pytest.approx(factor / math.sqrt(vol), rel=1e-12)


def test_gram_identity_energy_dependent_weight():
    model = CrossSectionModel("mono", lambda x, y, E: 1.0 + 3.0 * E + 0 * x, lambda x, y: 0.0 * x,
                              shape=lambda c: np.zeros(np.shape(c)))
    sp = _space(model, n=1, degrees=(0, 0, 1))
    for g, a, x in sp.mesh.elements():
        assert np.allclose(sp.local_basis(g, a, x).gram, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("basis", ["orthonormal", "raw", "legendre"])
def test_gram_matches_mode(basis):
    sp = _space(dt.linear_anisotropic_model(2.0, 1.0, 0.5), basis=basis)
    G = sp.local_basis(0, 3, 1).gram
    if basis == "orthonormal":
        assert np.allclose(G, np.eye(sp.n_loc), atol=1e-12)
    elif basis == "raw":
        assert np.allclose(G, np.diag(np.diag(G)), atol=1e-12)
    else:
        assert np.allclose(G, sp.raw_gram[0, 3, 1])


def test_nonpositive_alphabar_rejected():
    model = dt.compton_model(absorption=0.0, cutoff_loss=False, n_points=8)
    mesh = dt.build_product_mesh(1.0, 1, 8, 10.0, 1000.0, 4)
    with pytest.raises(InvalidData):
        dt.DGSpace(mesh, (0, 0, 0), model)


@pytest.mark.parametrize("args", [dict(degrees=(-1, 0, 0)), dict(basis="bogus"), dict(quad_mult=0.5)])
def test_space_rejects_bad_options(args):
    with pytest.raises(InvalidArgument):
        _space(**args)


def test_evaluate_constant_and_zero(rng):
    sp = _space(dt.isotropic_model(0.7, 0.2), degrees=(2, 1, 0))
    one = sp.project(lambda x, y, mx, my, E: 1.0 + 0 * x)
    zero = sp.function()
    for _ in range(10):
        x, y = rng.random(2)
        phi = rng.uniform(0, 2 * np.pi)
        mu = (np.cos(phi), np.sin(phi))
        assert one(x, y, mu) == pytest.approx(1.0, abs=1e-12)
        assert zero(x, y, mu) == 0.0


def test_evaluate_outside_domain():
    sp = _space()
    v = sp.function()
    with pytest.raises(OutOfDomain):
        v(1.5, 0.5, (1.0, 0.0))
    with pytest.raises(OutOfDomain):
        sp.evaluate_points(v, -0.1, 0.5, 1.0, 0.0)


def _gauss(x, y, mx, my, E=None):
    return np.exp(-(x * mx + y * my) ** 2)


def test_interpolant_pointwise_accuracy(rng):
    sp = _space(dt.isotropic_model(1.0, 0.0), n=8, arcs=32, degrees=(2, 2, 0))
    u = sp.project(_gauss, extra=2)
    x, y = rng.random(30), rng.random(30)
    phi = rng.uniform(0, 2 * np.pi, 30)
    got = sp.evaluate_points(u, x, y, np.cos(phi), np.sin(phi))
    assert np.max(np.abs(got - _gauss(x, y, np.cos(phi), np.sin(phi)))) < 1e-3


def test_projection_identity_on_space(rng):
    sp = _space(dt.linear_anisotropic_model(1.5, 0.5, 0.3), degrees=(2, 1, 0))
    v = rng.standard_normal(sp.layout.shape)
    w = sp.project(lambda x, y, mx, my, E: sp.evaluate_points(v, x, y, mx, my, E))
    assert np.allclose(w.coeffs, v, atol=1e-12)


def test_projection_of_linear_field(rng):
    sp = _space(degrees=(1, 0, 0))
    u = sp.project(lambda x, y, mx, my, E: 0.5 + x + 2 * y + 0 * mx)
    x, y = rng.random(5), rng.random(5)
    assert np.allclose(sp.evaluate_points(u, x, y, 1.0, 0.0), 0.5 + x + 2 * y, atol=1e-12)


def test_projection_of_zero():
    sp = _space()
    assert np.all(sp.project(lambda x, y, mx, my, E: 0 * x).coeffs == 0)


def test_projection_error_decreases():
    errs = []
    for n in (2, 4):
        sp = _space(dt.isotropic_model(1.0, 0.0), n=n, arcs=16, degrees=(1, 1, 0))
        fine = sp.refined(3)
        u = sp.project(_gauss, extra=2)
        vals = fine.volume_values(u.coeffs)
        X = fine.qx[None, None, :, None, None, :]
        Y = fine.qy[None, None, :, None, None, :]
        MX = fine.dirs[None, :, None, None, :, None, 0]
        MY = fine.dirs[None, :, None, None, :, None, 1]
        diff = vals - _gauss(X, Y, MX, MY)
        errs.append(math.sqrt(np.einsum("gaxeqp,ge,aq,p->", diff ** 2, fine.wE, fine.wa, fine.wx)))
    assert errs[1] < 0.5 * errs[0]


def test_residual_orthogonal_to_space(rng):
    sp = _space(dt.isotropic_model(2.0, 0.0), degrees=(1, 1, 0))
    u = sp.project(_gauss)
    # moments of g minus moments of the projection vanish (same quadrature)
    b = sp.from_raw_moments(sp.moments(_gauss, sp.model.alphabar))
    Mhat = np.einsum("gaxlm,gaxlL,gaxLn->gaxmn", sp.C, sp.raw_gram, sp.C)
    assert np.allclose(np.einsum("gaxmn,gaxn->gaxm", Mhat, u.coeffs), b, atol=1e-12)


def test_dg_norm_zero():
    sp = _space()
    assert sp.dg_norm(sp.function()) == 0.0


def test_dg_norm_of_constant():
    # volume 2 pi; boundary 1/2 * perimeter 4 * int_S |mu.n| = 4, both sides of every face
    sp = _space(_const_model(1.0), n=2, degrees=(0, 0, 0), quad_mult=6)
    one = sp.project(lambda x, y, mx, my, E: 1.0 + 0 * x)
    assert sp.dg_norm(one) ** 2 == pytest.approx(2 * np.pi + 8, rel=1e-9)


def test_dg_norm_of_single_cell_indicator():
    # one cell of side 1/2: volume pi/2, four sides of length 1/2 each carrying a full jump or trace
    sp = _space(_const_model(1.0), n=2, degrees=(0, 0, 0), quad_mult=6)
    v = sp.project(lambda x, y, mx, my, E: ((x < 0.5) & (y < 0.5)).astype(float))
    assert sp.dg_norm(v) ** 2 == pytest.approx(np.pi / 2 + 4, rel=1e-9)


def test_jump_only_face_term():
    sp = _space(_const_model(1.0), n=2, degrees=(0, 0, 0), quad_mult=6)
    ind = sp.project(lambda x, y, mx, my, E: ((x < 0.5) & (y < 0.5)).astype(float))
    # face part equals half the |mu.n|-weighted jump/trace integral: 4 sides * 1/2 * 1/2 * 4
    assert sp.face_terms(ind.coeffs) == pytest.approx(4.0, rel=1e-9)


def test_binary_and_csv_round_trip(tmp_path, rng):
    sp = _space()
    v = sp.function(rng.standard_normal(sp.layout.shape))
    v.to_binary(tmp_path / "v.bin")
    w = dt.FeFunction.from_binary(sp, tmp_path / "v.bin")
    assert np.array_equal(v.coeffs, w.coeffs)
    v.to_csv(tmp_path / "v.csv")
    table = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
    assert np.array_equal(table[:, 4], v.coeffs.ravel())


def test_layout_blocks_partition():
    sp = _space(degrees=(1, 1, 0))
    lay = sp.layout
    seen = np.zeros(lay.size, dtype=int)
    for g, a, x in sp.mesh.elements():
        seen[lay.block(g, a, x)] += 1
    assert np.all(seen == 1)
    assert lay.size == sp.mesh.n_elements * sp.n_loc
    with pytest.raises(InvalidArgument):
        lay.check(np.zeros(lay.size + 1))
