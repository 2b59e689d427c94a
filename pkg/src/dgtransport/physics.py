"""Cross-section models.

Two families are supported, both with a kernel that factorises as

    theta(x, mu'.mu, E' -> E) = density(x) * shape(mu'.mu, E' -> E)

* ``mono``: energy-independent kernel, ``shape`` a function of the cosine
  only (isotropic or linearly anisotropic), scattering keeps the energy.
* ``compton``: Klein-Nishina kernel constrained to the Compton line; the Dirac
  constraint is removed analytically (see :func:`compton_beta`,
  :func:`compton_gamma` and :func:`compton_pair_nodes`).

Units for the Compton model: cm, keV.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import InvalidArgument, InvalidData, UnsupportedOperation
from .mesh import gauss_legendre

WATER_ELECTRON_DENSITY = 3.34281e23  # electrons / cm^3  (3.34281e29 / m^3)
CLASSICAL_ELECTRON_RADIUS = 2.81794e-13  # cm
ELECTRON_REST_ENERGY = 511.0  # keV


@dataclass(frozen=True)
class ComptonData:
    density: float = WATER_ELECTRON_DENSITY
    r_e: float = CLASSICAL_ELECTRON_RADIUS
    mec2: float = ELECTRON_REST_ENERGY

    def __post_init__(self):
        if not (self.density > 0 and self.r_e > 0 and self.mec2 > 0):
            raise InvalidArgument("Compton constants must be strictly positive")


def compton_kinematics(e_in, cos_phi, mec2=ELECTRON_REST_ENERGY):
    """Outgoing photon energy, the root E of F(E', E, cos) = 0."""
    e_in = np.asarray(e_in, dtype=float)
    return e_in / (1.0 + e_in / mec2 * (1.0 - np.asarray(cos_phi, dtype=float)))


def compton_inverse(e_out, cos_phi, mec2=ELECTRON_REST_ENERGY):
    """Incoming energy E' that scatters to ``e_out`` at angle ``cos_phi``.

    Returns ``inf`` where no finite incoming energy exists.
    """
    e_out = np.asarray(e_out, dtype=float)
    den = mec2 - e_out * (1.0 - np.asarray(cos_phi, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, e_out * mec2 / np.where(den > 0, den, 1.0), np.inf)


def klein_nishina(e_in, e_out, cos_phi, r_e=CLASSICAL_ELECTRON_RADIUS):
    """Klein-Nishina differential cross-section per electron (area units)."""
    ratio = np.asarray(e_out, dtype=float) / np.asarray(e_in, dtype=float)
    sin2 = 1.0 - np.asarray(cos_phi, dtype=float) ** 2
    return 0.5 * r_e ** 2 * ratio ** 2 * (ratio + 1.0 / ratio - sin2)


def _half_circle_rule(phi_c, n_points):
    """Gauss nodes on [0, phi_c] (broadcast over phi_c), doubled for symmetry."""
    tau, w = gauss_legendre(n_points)
    phi_c = np.asarray(phi_c, dtype=float)[..., None]
    phi = 0.5 * phi_c * (tau + 1.0)
    return phi, w * phi_c  # factor 2 (symmetry) times phi_c / 2 (map)


def compton_beta(e_in, data=ComptonData(), e_min=None, n_points=64):
    """Macroscopic out-scatter cross-section beta(E') [1/cm].

    The energy integral collapses onto the Compton line with unit Jacobian.
    Outgoing energies below ``e_min`` (if given) fall outside the energy
    domain and are excluded.
    """
    e_in = np.asarray(e_in, dtype=float)
    m = data.mec2
    if e_min is None or e_min <= 0:
        cos_c = np.full_like(e_in, -1.0)
    else:
        with np.errstate(divide="ignore"):
            cos_c = 1.0 - m * (1.0 / e_min - 1.0 / e_in)
    phi_c = np.arccos(np.clip(cos_c, -1.0, 1.0))
    phi, w = _half_circle_rule(phi_c, n_points)
    c = np.cos(phi)
    ep = e_in[..., None]
    kn = klein_nishina(ep, compton_kinematics(ep, c, m), c, data.r_e)
    return data.density * np.sum(w * kn, axis=-1)


def compton_gamma(e_out, data=ComptonData(), e_max=1000.0, n_points=64):
    """Macroscopic in-scatter cross-section gamma(E) [1/cm].

    The incoming-energy integral collapses onto E'(E, cos) with Jacobian
    (E'/E)^2; incoming energies above ``e_max`` are outside the domain.
    """
    e_out = np.asarray(e_out, dtype=float)
    m = data.mec2
    with np.errstate(divide="ignore"):
        cos_c = 1.0 - m * (1.0 / e_out - 1.0 / e_max)
    phi_c = np.arccos(np.clip(cos_c, -1.0, 1.0))
    phi, w = _half_circle_rule(phi_c, n_points)
    c = np.cos(phi)
    e = e_out[..., None]
    ep = compton_inverse(e, c, m)
    ep = np.where(np.isfinite(ep), ep, e)
    integrand = 0.5 * data.r_e ** 2 * (e / ep + ep / e - (1.0 - c ** 2))
    return data.density * np.sum(w * integrand, axis=-1)


def compton_pair_nodes(cos_phi, in_group, out_group, n_points, mec2=ELECTRON_REST_ENERGY):
    """Quadrature over incoming energies of one group pair on the Compton line.

    For fixed scattering cosines (any shape) returns ``(e_in, e_out, w)`` with a
    trailing axis of ``n_points``; only incoming energies in ``in_group`` whose
    outgoing energy lands in ``out_group`` carry weight.  Groups are
    ``(lower, upper)`` tuples.  Since E_out is monotone in E' the admissible
    set is an interval, so the rule is exact up to the smoothness of the
    integrand.
    """
    cos_phi = np.asarray(cos_phi, dtype=float)
    lo = np.maximum(in_group[0], compton_inverse(out_group[0], cos_phi, mec2))
    hi = np.minimum(in_group[1], compton_inverse(out_group[1], cos_phi, mec2))
    length = np.maximum(hi - lo, 0.0)
    lo = np.where(length > 0, lo, in_group[0])
    tau, w = gauss_legendre(n_points)
    e_in = lo[..., None] + 0.5 * length[..., None] * (tau + 1.0)
    weights = 0.5 * length[..., None] * w
    e_out = compton_kinematics(e_in, cos_phi[..., None], mec2)
    return e_in, e_out, weights


def _constant(value):
    def f(*args):
        shape = np.broadcast(*[np.asarray(a) for a in args]).shape
        return np.full(shape, float(value))
    return f


def _circle_integral(fn, n=4096):
    phi = 2 * np.pi * np.arange(n) / n
    return fn(phi).sum() * 2 * np.pi / n


class CrossSectionModel:
    """Absorption, scattering kernel and the derived beta, gamma, alphabar.

    ``absorption(x, y, E)`` and ``density(x, y)`` are vectorised callables.
    For ``kind='mono'`` the angular shape ``shape(cos)`` is per unit density;
    for ``kind='compton'`` the kernel is Klein-Nishina with ``compton`` data
    and the density is the electron density.
    """

    def __init__(self, kind, absorption, density, shape=None, compton=None,
                 e_min=None, e_max=None, truncate_beta=True, cutoff_loss=True,
                 n_points=64, validate=True):
        if kind not in ("mono", "compton"):
            raise InvalidArgument(f"unknown model kind {kind!r}")
        self.kind = kind
        self._absorption = absorption
        self.density = density
        self.shape = shape
        self.compton = compton
        self.e_min = e_min
        self.e_max = e_max
        self.truncate_beta = truncate_beta
        self.cutoff_loss = cutoff_loss
        self.n_points = n_points
        if kind == "mono":
            if shape is None:
                raise InvalidArgument("mono model needs an angular shape")
            self._shape_integral = _circle_integral(lambda p: shape(np.cos(p)))
        else:
            if compton is None or e_max is None:
                raise InvalidArgument("Compton model needs constants and E_max")
        self.validate = validate
        self.isotropic = False

    @property
    def is_mono(self):
        return self.kind == "mono"

    # -- energy factors per unit density --------------------------------
    def beta_hat(self, E):
        E = np.asarray(E, dtype=float)
        if self.is_mono:
            return np.full(E.shape, self._shape_integral)
        unit = ComptonData(1.0, self.compton.r_e, self.compton.mec2)
        e_min = self.e_min if self.truncate_beta else None
        return compton_beta(E, unit, e_min, self.n_points)

    def gamma_hat(self, E):
        E = np.asarray(E, dtype=float)
        if self.is_mono:
            return self.beta_hat(E)
        unit = ComptonData(1.0, self.compton.r_e, self.compton.mec2)
        return compton_gamma(E, unit, self.e_max, self.n_points)

    def cutoff_loss_hat(self, E):
        """Out-scatter to energies below E_min, treated as absorption."""
        E = np.asarray(E, dtype=float)
        if self.is_mono or not (self.cutoff_loss and self.truncate_beta) or not self.e_min:
            return np.zeros(E.shape)
        unit = ComptonData(1.0, self.compton.r_e, self.compton.mec2)
        full = compton_beta(E, unit, None, self.n_points)
        return full - compton_beta(E, unit, self.e_min, self.n_points)

    # -- fields ----------------------------------------------------------
    def alpha(self, x, y, E):
        a = self._absorption(x, y, E)
        if not self.is_mono:
            a = a + self.density(x, y) * self.cutoff_loss_hat(E)
        return a

    def beta(self, x, y, E):
        return self.density(x, y) * self.beta_hat(E)

    def gamma(self, x, y, E):
        return self.density(x, y) * self.gamma_hat(E)

    def total(self, x, y, E):
        return self.alpha(x, y, E) + self.beta(x, y, E)

    def alphabar(self, x, y, E):
        rho = self.density(x, y)
        return self.alpha(x, y, E) + 0.5 * rho * (self.beta_hat(E) - self.gamma_hat(E))

    def check_alphabar(self, x, y, E):
        ab = self.alphabar(x, y, E)
        if self.validate and not np.all(ab > 0):
            raise InvalidData(f"alphabar must be strictly positive (min {np.min(ab):.3e})")
        return ab

    def kernel(self, cos_phi, e_in=None, e_out=None, x=0.0, y=0.0):
        """Smooth part of theta; for Compton the Dirac constraint is implied."""
        rho = self.density(x, y)
        if self.is_mono:
            return rho * self.shape(np.asarray(cos_phi, dtype=float))
        e_in = np.asarray(e_in, dtype=float)
        e_out = np.asarray(e_out, dtype=float)
        kn = klein_nishina(e_in, np.minimum(e_out, e_in), cos_phi, self.compton.r_e)
        return np.where(e_out <= e_in, rho * kn, 0.0)


def isotropic_model(alpha, beta, validate=True):
    """Mono-energetic model with constant data and theta = beta / |S|."""
    if alpha < 0 or beta < 0:
        raise InvalidArgument("cross-sections must be non-negative")
    model = CrossSectionModel("mono", _constant(alpha), _constant(beta),
                              shape=lambda c: np.full(np.shape(c), 1.0 / (2 * np.pi)),
                              validate=validate)
    if validate and not alpha > 0:
        raise InvalidData("alphabar = alpha must be strictly positive")
    model.isotropic = True
    return model


def linear_anisotropic_model(alpha, beta, b=1.0, validate=True):
    """Mono-energetic model with theta = beta (1 + b cos) / (2 pi), |b| <= 1."""
    if abs(b) > 1:
        raise InvalidArgument("anisotropy coefficient must satisfy |b| <= 1")
    if alpha < 0 or beta < 0:
        raise InvalidArgument("cross-sections must be non-negative")
    if validate and not alpha > 0:
        raise InvalidData("alphabar = alpha must be strictly positive")
    return CrossSectionModel("mono", _constant(alpha), _constant(beta),
                             shape=lambda c: (1.0 + b * np.asarray(c)) / (2 * np.pi),
                             validate=validate)


def compton_model(e_min=10.0, e_max=1000.0, absorption=0.1, data=ComptonData(),
                  truncate_beta=True, cutoff_loss=True, n_points=64, validate=True):
    """Photon Compton scattering in a homogeneous medium (water by default).

    ``absorption`` is a constant floor added to alpha; out-scatter below
    ``e_min`` is counted as absorption when ``cutoff_loss`` is set.
    """
    return CrossSectionModel("compton", _constant(absorption), _constant(data.density),
                             compton=data, e_min=e_min, e_max=e_max,
                             truncate_beta=truncate_beta, cutoff_loss=cutoff_loss,
                             n_points=n_points, validate=validate)


def kernel_moments(model, ell_max, x=0.0, y=0.0, n=4096):
    """Cosine moments theta_l(x) = int_0^{2pi} theta(cos phi) cos(l phi) dphi.

    With this normalisation theta_0 = beta and the Fourier modes of the
    scattering operator are exactly theta_l.
    """
    if not model.is_mono:
        raise UnsupportedOperation("kernel moments are defined for mono-energetic kernels only")
    phi = 2 * np.pi * np.arange(n) / n
    vals = model.kernel(np.cos(phi), x=x, y=y)
    ell = np.arange(ell_max + 1)
    return (vals[None, :] * np.cos(ell[:, None] * phi[None, :])).sum(axis=1) * 2 * np.pi / n


def relaxation_bound(model, omega, ell_max=64):
    """r(theta, omega) = sup_l |theta_l / beta - omega| (including l -> inf)."""
    moments = kernel_moments(model, ell_max)
    beta = moments[0]
    if beta == 0:
        return abs(omega)
    return float(max(np.max(np.abs(moments / beta - omega)), abs(omega)))


@dataclass(frozen=True)
class ContractionConstants:
    c: float
    q_beta: float
    q_gamma: float
    r_gamma: float
    q_beta_omega: float = None
    r_beta: float = None
    r_theta_omega: float = None
    c_mono: float = None
    c_mono_omega: float = None
    omega: float = None

    @property
    def convergent(self):
        return self.c < 1


def _sup_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num == 0, 0.0, num / den)
    r = np.where(np.isnan(r), np.inf, r)
    return float(np.max(r))


def contraction_constants(model, x, y, E, omega=None, ell_max=64):
    """Suprema of the ratios entering the contraction and a posteriori bounds.

    ``x, y, E`` are broadcastable sample arrays (typically volume quadrature
    points).  Mono-only constants are filled when ``model.is_mono``.
    """
    alpha = model.alpha(x, y, E)
    beta = model.beta(x, y, E)
    gamma = model.gamma(x, y, E)
    ab = model.alphabar(x, y, E)
    q_beta = _sup_ratio(beta, alpha + beta)
    q_gamma = _sup_ratio(gamma, alpha + beta)
    out = dict(c=math.sqrt(q_beta * q_gamma), q_beta=q_beta, q_gamma=q_gamma,
               r_gamma=_sup_ratio(gamma, ab))
    if model.is_mono:
        w = 0.0 if omega is None else float(omega)
        r = relaxation_bound(model, w, ell_max)
        q_bw = _sup_ratio(beta, alpha + (1 - w) * beta)
        out.update(q_beta_omega=q_bw, r_beta=_sup_ratio(beta, alpha), r_theta_omega=r,
                   c_mono=q_beta, c_mono_omega=r * q_bw, omega=w)
    return ContractionConstants(**out)


def export_cross_sections(model, energies, path, x=0.0, y=0.0):
    """Write alpha, beta, gamma and alphabar at the given energies as CSV."""
    E = np.asarray(energies, dtype=float)
    cols = [E] + [np.broadcast_to(fn(x, y, E), E.shape)
                  for fn in (model.alpha, model.beta, model.gamma, model.alphabar)]
    np.savetxt(path, np.column_stack(cols), delimiter=",", comments="",
               header="energy,alpha,beta,gamma,alphabar", fmt="%.17g")
