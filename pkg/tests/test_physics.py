import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import dgtransport as dt
from dgtransport.errors import InvalidArgument, InvalidData, UnsupportedOperation
from dgtransport.physics import (CLASSICAL_ELECTRON_RADIUS as RE, WATER_ELECTRON_DENSITY,
                                 ComptonData, compton_inverse, compton_pair_nodes,
                                 export_cross_sections, relaxation_bound)

SIGMA = 10.0


@pytest.mark.parametrize("e_in,cos,expected", [
    (511.0, 0.0, 255.5),
    (300.0, 1.0, 300.0),
    (1000.0, -1.0, 1000.0 / (1.0 + 2000.0 / 511.0)),
])
def test_compton_kinematics(e_in, cos, expected):
    assert float(dt.compton_kinematics(e_in, cos)) == pytest.approx(expected, rel=1e-14)


@given(e=st.floats(1.0, 1000.0), c=st.floats(-1.0, 1.0))
def test_kinematics_loses_energy_and_inverts(e, c):
    e_out = dt.compton_kinematics(e, c)
    assert e_out <= e * (1 + 1e-15)
    assert float(compton_inverse(e_out, c)) == pytest.approx(e, rel=1e-10)


@pytest.mark.parametrize("e_in,e_out,cos,expected", [
    (100.0, 100.0, 1.0, RE ** 2),
    (511.0, 255.5, 0.0, 3.0 / 16.0 * RE ** 2),
    (700.0, 700.0, -1.0, RE ** 2),
])
def test_klein_nishina_values(e_in, e_out, cos, expected):
    assert float(dt.klein_nishina(e_in, e_out, cos)) == pytest.approx(expected, rel=1e-12)


@given(e=st.floats(1.0, 1000.0), c=st.floats(-1.0, 1.0))
def test_compton_jacobian(e, c):
    a = (1.0 - c) / 511.0
    step = 1e-4 * e
    fd = (dt.compton_kinematics(e + step, c) - dt.compton_kinematics(e - step, c)) / (2 * step)
    E = dt.compton_kinematics(e, c)
    assert float(fd) == pytest.approx(float((E / e) ** 2), rel=1e-8)
    assert float((E / e) ** 2) == pytest.approx(1.0 / (1.0 + a * e) ** 2, rel=1e-12)


def test_thomson_limit():
    # E' << mec2: kernel -> r_e^2 (1 + cos^2) / 2, integral over the circle 3 pi r_e^2 / 2
    beta = dt.compton_beta(1e-3)
    assert float(beta) == pytest.approx(1.5 * np.pi * RE ** 2 * WATER_ELECTRON_DENSITY, rel=1e-5)


def test_beta_decreasing():
    E = np.array([10.0, 100.0, 300.0, 600.0, 1000.0])
    assert np.all(np.diff(dt.compton_beta(E)) < 0)
    # with the low-energy cutoff the decrease holds once no outgoing energy is lost
    E = np.array([20.0, 100.0, 300.0, 600.0, 1000.0])
    assert np.all(np.diff(dt.compton_beta(E, e_min=10.0)) < 0)


def test_beta_linear_in_density():
    one = dt.compton_beta(200.0, ComptonData(density=1e23))
    two = dt.compton_beta(200.0, ComptonData(density=2e23))
    assert float(two) == pytest.approx(2 * float(one), rel=1e-14)


def test_gamma_vanishes_at_top_energy():
    assert float(dt.compton_gamma(1000.0, e_max=1000.0)) == pytest.approx(0.0, abs=1e-12)
    # and grows just below it
    assert float(dt.compton_gamma(990.0, e_max=1000.0)) > 0


def test_gamma_below_beta_at_high_energy():
    model = dt.compton_model()
    E = np.linspace(500.0, 1000.0, 9)
    assert np.all(model.gamma(0, 0, E) <= model.beta(0, 0, E))


def test_gamma_exceeds_beta_at_low_energy():
    # measured property of the 2D kernel: in-scatter dominates below a few hundred keV
    model = dt.compton_model()
    assert model.gamma(0, 0, 100.0) > model.beta(0, 0, 100.0)


def test_compton_alphabar_positive():
    model = dt.compton_model()
    E = np.concatenate([np.linspace(10.0, 1000.0, 200), np.linspace(200.0, 207.0, 141)])
    assert np.all(model.alphabar(0, 0, E) > 0.04)
    ab = model.alpha(0, 0, E) + 0.5 * (model.beta(0, 0, E) - model.gamma(0, 0, E))
    assert np.allclose(model.alphabar(0, 0, E), ab, rtol=0, atol=1e-12)


def test_compton_without_floor_is_invalid():
    model = dt.compton_model(absorption=0.05)
    with pytest.raises(InvalidData):
        model.check_alphabar(0.0, 0.0, np.linspace(195, 210, 31))
    model = dt.compton_model(absorption=0.0, cutoff_loss=False)
    with pytest.raises(InvalidData):
        model.check_alphabar(0.0, 0.0, np.linspace(10, 1000, 50))


def test_compton_kernel_downscatter_only():
    model = dt.compton_model()
    cos = np.linspace(-1, 1, 11)[:, None]
    e_in = np.linspace(10, 1000, 7)[None, :]
    e_out = dt.compton_kinematics(e_in, cos)
    assert np.all(model.kernel(cos, e_in, e_out) >= 0)
    assert np.all(model.kernel(cos, e_in, e_in * 1.01) == 0)


def test_pair_nodes_stay_in_groups():
    cos = np.linspace(-1, 1, 9)
    e_in, e_out, w = compton_pair_nodes(cos, (505.0, 752.5), (257.5, 505.0), 8)
    live = w > 0
    assert np.all(e_in[live] >= 505.0 - 1e-9) and np.all(e_in[live] <= 752.5 + 1e-9)
    assert np.all(e_out[live] >= 257.5 - 1e-9) and np.all(e_out[live] <= 505.0 + 1e-9)
    # upscatter pair carries no weight
    _, _, w_up = compton_pair_nodes(cos, (257.5, 505.0), (505.0, 752.5), 8)
    assert np.all(w_up == 0)


@pytest.mark.parametrize("c", [0.1, 0.5, 0.9])
def test_isotropic_scattering_ratio(c):
    model = dt.isotropic_model((1 - c) * SIGMA, c * SIGMA)
    k = dt.contraction_constants(model, 0.0, 0.0, 0.0)
    assert k.c == pytest.approx(c)
    assert k.q_beta == pytest.approx(c) and k.q_gamma == pytest.approx(c)


def test_contraction_constants_c09():
    model = dt.isotropic_model(1.0, 9.0)
    k = dt.contraction_constants(model, 0.0, 0.0, 0.0, omega=0.5)
    assert k.r_gamma == pytest.approx(9.0)
    assert k.r_beta == pytest.approx(9.0)
    assert k.c_mono_omega == pytest.approx(9 / 11)
    assert k.convergent


def test_pure_absorption():
    model = dt.isotropic_model(1.0, 0.0)
    assert model.gamma(0, 0, 0) == 0 and model.alphabar(0, 0, 0) == 1.0
    k = dt.contraction_constants(model, 0.0, 0.0, 0.0)
    assert k.c == 0 and k.r_gamma == 0


def test_no_absorption_gives_infinite_r_beta():
    model = dt.isotropic_model(0.0, 1.0, validate=False)
    k = dt.contraction_constants(model, 0.0, 0.0, 0.0, omega=0.5)
    assert math.isinf(k.r_beta)


def test_isotropic_needs_absorption():
    with pytest.raises(InvalidData):
        dt.isotropic_model(0.0, 1.0)
    with pytest.raises(InvalidArgument):
        dt.isotropic_model(-1.0, 1.0)


@pytest.mark.parametrize("model", [dt.isotropic_model(1.0, 3.0),
                                   dt.linear_anisotropic_model(1.0, 3.0, 0.7)])
def test_kernel_integrates_to_beta(model):
    phi = 2 * np.pi * np.arange(2048) / 2048
    total = model.kernel(np.cos(phi)).sum() * 2 * np.pi / 2048
    assert total == pytest.approx(3.0, abs=1e-12)


def test_isotropic_moments():
    m = dt.kernel_moments(dt.isotropic_model(1.0, 2.0), 6)
    assert m[0] == pytest.approx(2.0)
    assert np.allclose(m[1:], 0.0, atol=1e-12)


def test_cosine_kernel_moment_ratio():
    m = dt.kernel_moments(dt.linear_anisotropic_model(1.0, 2.0, 1.0), 4)
    assert m[1] / m[0] == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(m[2:], 0.0, atol=1e-12)


@pytest.mark.parametrize("omega", [0.0, 0.25, 0.5, 0.75, 0.9])
def test_isotropic_relaxation_bound(omega):
    assert relaxation_bound(dt.isotropic_model(1.0, 2.0), omega) == pytest.approx(max(omega, 1 - omega))


def test_moments_need_mono():
    with pytest.raises(UnsupportedOperation):
        dt.kernel_moments(dt.compton_model(), 3)


def test_cross_section_export(tmp_path):
    model = dt.compton_model()
    E = np.linspace(10, 1000, 5)
    export_cross_sections(model, E, tmp_path / "xs.csv")
    table = np.loadtxt(tmp_path / "xs.csv", delimiter=",", skiprows=1)
    assert table.shape == (5, 5)
    assert np.allclose(table[:, 2], model.beta(0, 0, E), rtol=1e-15)
    assert np.allclose(table[:, 3], model.gamma(0, 0, E), rtol=1e-15)
