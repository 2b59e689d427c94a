"""A posteriori bounds on the algebraic (solver) error in the DG-energy norm.

* :func:`si_estimate`       sqrt(r_gamma) ||sqrt(beta)(u_n - u_{n+1})||
* :func:`gsi_estimate`      r(theta, omega) sqrt(r_beta) ||sqrt(beta)(u_{n+1} - u_n)||
* :func:`residual_estimate` ||sqrt(alphabar) r_h||, r_h the alphabar-weighted
  Riesz representative of the residual functional, split into element
  contributions eta_kappa.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import InvalidArgument
from .fespace import FeFunction
from .mesh import SIDE_NORMALS, LEFT, RIGHT, BOTTOM, TOP
from .physics import contraction_constants

ESTIMATOR_KINDS = ("si", "gsi", "residual")


def _arr(v):
    return v.coeffs if isinstance(v, FeFunction) else np.asarray(v)


def constants_for(space, omega=None):
    """Contraction constants with suprema over the volume quadrature points."""
    X = space.qx[None, :, None, :]
    Y = space.qy[None, :, None, :]
    E = space.qE[:, None, :, None]
    return contraction_constants(space.model, X, Y, E, omega=omega)


def si_estimate(ops, u_prev, u_next, constants):
    d = _arr(u_next) - _arr(u_prev)
    return math.sqrt(constants.r_gamma) * ops.beta_norm(d)


def gsi_estimate(ops, u_prev, u_next, constants):
    d = _arr(u_next) - _arr(u_prev)
    nb = ops.beta_norm(d)
    if nb == 0.0:
        return 0.0
    if not math.isfinite(constants.r_beta):
        return math.inf
    return constants.r_theta_omega * math.sqrt(constants.r_beta) * nb


@dataclass
class LocalEstimates:
    values: np.ndarray   # eta_kappa, shape (groups, arcs, spatial elements)

    @property
    def total(self):
        return float(math.sqrt(np.sum(self.values ** 2)))

    def to_csv(self, path):
        g, a, x = np.indices(self.values.shape)
        rows = np.column_stack([g.ravel(), a.ravel(), x.ravel(), self.values.ravel()])
        np.savetxt(path, rows, delimiter=",", header="group,arc,element,eta", comments="",
                   fmt=["%d", "%d", "%d", "%.17g"])


def residual_vector(ops, u, F):
    u = _arr(u)
    return _arr(F) - ops.apply_A(u) + ops.apply_S(u)


def residual_estimate(ops, u, F):
    """Global residual bound and its element split."""
    r = residual_vector(ops, u, F)
    c = np.linalg.solve(ops.Mhat, r[..., None])[..., 0]
    eta2 = np.maximum(np.einsum("gaxl,gaxl->gax", r, c), 0.0)
    local = LocalEstimates(np.sqrt(eta2))
    return local.total, local


def local_residual(ops, u, element, F):
    """eta_kappa from the strong-form residual on one product element.

    Volume and face terms are evaluated pointwise by quadrature on the
    element; the data f, g_D enter through the load vector block and the
    scattering through its weak form.  ``element`` is (g, a, x).
    """
    g, a, x = element
    sp = ops.space
    u = _arr(u).reshape(ops.layout.shape)
    model = sp.model
    h = sp.h
    Ve, Va = sp.Ve, sp.Va

    def raw(xx):
        return (sp.C[g, a, xx] @ u[g, a, xx]).reshape(sp.nk, sp.nj, sp.nbx)

    def test(tab):
        psi = np.einsum("ek,qj,pi->eqpkji", Ve, Va, tab)
        return psi.reshape(psi.shape[:3] + (-1,)) @ sp.C[g, a, x]

    c = raw(x)
    val = np.einsum("kji,ek,qj,pi->eqp", c, Ve, Va, sp.Vx)
    dx = np.einsum("kji,ek,qj,pi->eqp", c, Ve, Va, sp.dVx_dxi) * (2.0 / h)
    dy = np.einsum("kji,ek,qj,pi->eqp", c, Ve, Va, sp.dVx_deta) * (2.0 / h)
    mu = sp.dirs[a]
    X, Y, E = sp.qx[x][None, None, :], sp.qy[x][None, None, :], sp.qE[g][:, None, None]
    strong = mu[None, :, None, 0] * dx + mu[None, :, None, 1] * dy + model.total(X, Y, E) * val
    w = sp.wE[g][:, None, None] * sp.wa[a][None, :, None] * sp.wx[None, None, :]
    R = -np.einsum("eqp,eqpm->m", w * strong, test(sp.Vx))
    nbrs = sp.mesh.spatial.neighbours[x]
    opposite = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}
    for side in range(4):
        mun = sp.dirs[a] @ SIDE_NORMALS[side]
        inflow = np.maximum(-mun, 0.0)
        if not inflow.any():
            continue
        own = np.einsum("kji,ek,qj,fi->eqf", c, Ve, Va, sp.Vf[side])
        if nbrs[side] >= 0:
            up = np.einsum("kji,ek,qj,fi->eqf", raw(nbrs[side]), Ve, Va, sp.Vf[opposite[side]])
        else:
            up = 0.0   # inflow data enters through F
        wf = sp.wE[g][:, None, None] * (sp.wa[a] * inflow)[None, :, None] * sp.face_w[None, None, :]
        R += np.einsum("eqf,eqfm->m", wf * (up - own), test(sp.Vf[side]))
    R += _arr(F).reshape(ops.layout.shape)[g, a, x] + ops.apply_S(u)[g, a, x]
    cvec = np.linalg.solve(ops.Mhat[g, a, x], R)
    return float(math.sqrt(max(R @ cvec, 0.0)))


def effectivity(estimate, true_error):
    """estimate / true error; NaN when the true error vanishes."""
    if true_error < 0 or estimate < 0:
        raise InvalidArgument("estimate and error must be non-negative")
    if true_error == 0:
        return math.nan
    return estimate / true_error


@dataclass(frozen=True)
class EstimateRecord:
    iteration: int
    estimate: float
    kind: str
    true_error: float = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise InvalidArgument(f"unknown estimator kind {self.kind!r}")

    @property
    def effectivity(self):
        if self.true_error is None:
            return None
        return effectivity(self.estimate, self.true_error)


def reference_solution(ops, F, cap=4096, tol=1e-13):
    """Discrete solution u_h of (A - S) u = F.

    Dense direct solve up to ``cap`` unknowns, otherwise weighted GMRES at
    ``tol``.  Returns (u, exact) with ``exact`` False for the GMRES route.
    """
    F = _arr(F)
    if ops.layout.size <= cap and ops.group is None:
        A = ops.assemble_dense("A", cap=cap)
        S = ops.assemble_dense("S", cap=cap)
        return np.linalg.solve(A - S, F.ravel()).reshape(ops.layout.shape), True
    from .solvers import StoppingRule, gmres_weighted
    u, _ = gmres_weighted(ops, F, StoppingRule(tol=tol, max_iter=500))
    return u, False
