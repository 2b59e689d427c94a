import numpy as np
import pytest

import dgtransport as dt


def make_ops(model=None, n=2, arcs=8, degrees=(1, 1, 0), length=1.0, basis="orthonormal",
             groups=1, e_min=0.0, e_max=1.0, quad_mult=1.0):
    model = model if model is not None else dt.isotropic_model(1.0, 1.0)
    mesh = dt.build_product_mesh(length, n, arcs, e_min, e_max, groups)
    space = dt.DGSpace(mesh, degrees, model, basis=basis, quad_mult=quad_mult)
    return dt.TransportOperators(space)


def small_compton(n=1, arcs=8, degrees=(0, 0, 1), groups=3, basis="orthonormal"):
    model = dt.compton_model(n_points=16)
    return make_ops(model, n=n, arcs=arcs, degrees=degrees, length=5.0, basis=basis,
                    groups=groups, e_min=10.0, e_max=1000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def iso_ops():
    return make_ops(dt.isotropic_model(1.0, 9.0))
