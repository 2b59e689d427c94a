"""Source iteration, relaxed source iteration and weighted GMRES.

Richardson schemes are run in residual form,

    u_{n+1} = u_n + r_n,      r_{n+1} = G r_n,     G = P^-1 K,

which needs one application of P^-1 and one of K per step, and gives the
increment u_{n+1} - u_n = r_n for the estimators for free.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, NumericalBreakdown, UnsupportedOperation
from .estimators import EstimateRecord, constants_for, effectivity, residual_vector
from .fespace import FeFunction


@dataclass(frozen=True)
class StoppingRule:
    """Stop at ``max_iter`` iterations or once the estimator drops to ``tol``."""
    max_iter: int = 50
    tol: float = None

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidArgument("iteration cap must be a positive integer")
        if self.tol is not None and not self.tol > 0:
            raise InvalidArgument("tolerance must be positive")

    @classmethod
    def fixed(cls, n):
        return cls(max_iter=n)

    def reached(self, estimate):
        return self.tol is not None and estimate <= self.tol

    def per_group(self, n_groups):
        return StoppingRule(self.max_iter, None if self.tol is None else self.tol / n_groups)


@dataclass
class SolveReport:
    method: str
    kind: str
    estimates: list = field(default_factory=list)
    true_errors: list = field(default_factory=list)
    times: list = field(default_factory=list)
    converged: bool = False
    counts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    constants: object = None
    iterates: list = None

    @property
    def iterations(self):
        return len(self.estimates)

    @property
    def effectivities(self):
        return [effectivity(e, t) for e, t in zip(self.estimates, self.true_errors)]

    @property
    def records(self):
        errs = self.true_errors or [None] * len(self.estimates)
        return [EstimateRecord(i + 1, e, self.kind, t) for i, (e, t) in
                enumerate(zip(self.estimates, errs))]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,estimate,true_error,effectivity\n")
            for i, est in enumerate(self.estimates):
                err = self.true_errors[i] if i < len(self.true_errors) else math.nan
                eff = effectivity(est, err) if not math.isnan(err) else math.nan
                fh.write(f"{i + 1},{est:.17g},{err:.17g},{eff:.17g}\n")


def _arr(v):
    return v.coeffs if isinstance(v, FeFunction) else np.asarray(v, dtype=float)


def _start(ops, u0):
    if u0 is None:
        return np.zeros(ops.layout.shape)
    return ops.layout.check(_arr(u0)).copy()


def _richardson(ops, F, stop, omega, u0, reference, estimate, method, kind, constants,
                form, keep_iterates):
    F = ops.layout.check(_arr(F))
    u = _start(ops, u0)
    report = SolveReport(method, kind, constants=constants,
                         iterates=[u.copy()] if keep_iterates else None)
    before = dict(ops.counts)
    t0 = time.perf_counter()

    def shifted_K(v, Mv):
        return ops.apply_S(v) - omega * Mv if omega else ops.apply_S(v)

    if form == "richardson":
        if np.any(u):
            r = ops.solve_A(residual_vector(ops, u, F), omega=omega)
        else:
            r = ops.solve_A(F, omega=omega)
    elif form != "naive":
        raise InvalidArgument(f"unknown iteration form {form!r}")
    while True:
        if form == "richardson":
            u_new = u + r
            Mr = ops.apply_M(r)
            est = estimate(math.sqrt(max(float(np.vdot(r, Mr)), 0.0)))
        else:
            Mu = ops.apply_M(u) if omega else None
            u_new = ops.solve_A(shifted_K(u, Mu) + F, omega=omega)
            d = u_new - u
            Mr = ops.apply_M(d)
            est = estimate(math.sqrt(max(float(np.vdot(d, Mr)), 0.0)))
        u = u_new
        report.estimates.append(est)
        report.times.append(time.perf_counter() - t0)
        if reference is not None:
            with ops.uncounted():
                report.true_errors.append(ops.dg_norm(reference - u))
        if keep_iterates:
            report.iterates.append(u.copy())
        if not np.all(np.isfinite(u)):
            raise NumericalBreakdown("non-finite iterate")
        if stop.reached(est):
            report.converged = True
            break
        if report.iterations >= stop.max_iter:
            break
        if form == "richardson":
            r = ops.solve_A(shifted_K(r, Mr), omega=omega)
    report.counts = {k: ops.counts[k] - before.get(k, 0) for k in ops.counts}
    return u, report


def source_iteration(ops, F, stop=StoppingRule(), u0=None, reference=None, constants=None,
                     form="richardson", keep_iterates=False):
    """A u_{n+1} = S u_n + F with the sqrt(r_gamma)-weighted increment bound."""
    if constants is None:
        constants = constants_for(ops.space)
    scale = math.sqrt(constants.r_gamma)
    return _richardson(ops, F, stop, 0.0, u0, reference, lambda nb: scale * nb,
                       "si", "si", constants, form, keep_iterates)


def generalised_source_iteration(ops, F, omega=0.5, stop=StoppingRule(), u0=None,
                                 reference=None, constants=None, form="richardson",
                                 keep_iterates=False):
    """(A - omega M) u_{n+1} = (S - omega M) u_n + F (mono-energetic only)."""
    if not ops.space.model.is_mono:
        raise UnsupportedOperation("relaxed source iteration needs a mono-energetic kernel")
    if not 0.0 <= omega < 1.0:
        raise InvalidArgument("relaxation parameter must lie in [0, 1)")
    if constants is None or constants.omega != omega:
        constants = constants_for(ops.space, omega)
    if math.isfinite(constants.r_beta):
        scale = constants.r_theta_omega * math.sqrt(constants.r_beta)
        estimate = lambda nb: scale * nb
    else:
        estimate = lambda nb: math.inf if nb > 0 else 0.0
    u, report = _richardson(ops, F, stop, float(omega), u0, reference, estimate,
                            "gsi", "gsi", constants, form, keep_iterates)
    if not math.isfinite(constants.r_beta):
        report.notes.append("alpha vanishes: r_beta is infinite and the bound is vacuous")
    return u, report


# -- GMRES -----------------------------------------------------------------

@dataclass
class KrylovState:
    V: list
    H: np.ndarray
    cs: np.ndarray
    sn: np.ndarray
    g: np.ndarray
    residuals: list
    reorthogonalised: int = 0
    happy: bool = False

    def basis(self):
        return np.array(self.V)

    def solution(self, x0, k):
        """x_k = x0 + V_k y_k with y_k the current least-squares minimiser."""
        if k == 0:
            return x0.copy()
        y = solve_triangular(self.H[:k, :k], self.g[:k])
        return x0 + np.array(self.V[:k]).T @ y


def gmres(apply_op, b, tol=None, max_iter=50, x0=None, callback=None, reorth=0.7):
    """GMRES without restarts (modified Gram-Schmidt, Givens rotations).

    ``tol`` is an absolute bound on ||b - A x||_2.  ``callback(k, state)`` is
    called after every iteration.  Returns (x, state).
    """
    b = np.asarray(b, dtype=float).ravel()
    x0 = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).ravel()
    r0 = b - apply_op(x0) if np.any(x0) else b.copy()
    beta = float(np.linalg.norm(r0))
    m = max_iter
    st = KrylovState([], np.zeros((m + 1, m)), np.zeros(m), np.zeros(m), np.zeros(m + 1), [beta])
    if beta == 0.0 or (tol is not None and beta <= tol):
        return x0, st
    st.V.append(r0 / beta)
    st.g[0] = beta
    k = 0
    for k in range(m):
        w = apply_op(st.V[k])
        w0 = float(np.linalg.norm(w))
        for i in range(k + 1):
            hik = float(np.dot(st.V[i], w))
            st.H[i, k] += hik
            w -= hik * st.V[i]
        if np.linalg.norm(w) < reorth * w0:
            st.reorthogonalised += 1
            for i in range(k + 1):
                hik = float(np.dot(st.V[i], w))
                st.H[i, k] += hik
                w -= hik * st.V[i]
        hnext = float(np.linalg.norm(w))
        st.H[k + 1, k] = hnext
        for i in range(k):
            a, c = st.H[i, k], st.H[i + 1, k]
            st.H[i, k] = st.cs[i] * a + st.sn[i] * c
            st.H[i + 1, k] = -st.sn[i] * a + st.cs[i] * c
        rho = math.hypot(st.H[k, k], st.H[k + 1, k])
        if rho == 0.0:
            raise NumericalBreakdown("GMRES: singular Hessenberg column")
        st.cs[k], st.sn[k] = st.H[k, k] / rho, st.H[k + 1, k] / rho
        st.H[k, k], st.H[k + 1, k] = rho, 0.0
        st.g[k + 1] = -st.sn[k] * st.g[k]
        st.g[k] = st.cs[k] * st.g[k]
        st.residuals.append(abs(st.g[k + 1]))
        st.happy = hnext <= 1e-14 * max(w0, 1e-300)
        if callback is not None:
            callback(k + 1, st)
        if st.happy or (tol is not None and st.residuals[-1] <= tol):
            break
        st.V.append(w / hnext)
    n = k + 1
    st.V = st.V[:n]
    return st.solution(x0, n), st


def gmres_weighted(ops, F, stop=StoppingRule(), reference=None, keep_iterates=False):
    """Right-preconditioned GMRES in the alphabar-weighted residual norm.

    Solves L^-1 (A - S) A^-1 L z = L^-1 F and returns u = A^-1 L z.  The
    Euclidean residual of the z-system equals the residual estimator, so
    stopping at ``stop.tol`` certifies |||u_h - u|||_DG <= tol.
    """
    F = ops.layout.check(_arr(F))
    shape = ops.layout.shape
    before = dict(ops.counts)
    t0 = time.perf_counter()

    def op(z):
        z = z.reshape(shape)
        return (z - ops.apply_Linv(ops.apply_S(ops.solve_A(ops.apply_L(z))))).ravel()

    def recover(z):
        return ops.solve_A(ops.apply_L(z.reshape(shape)))

    report = SolveReport("gmres", "residual", iterates=[] if keep_iterates else None)
    zero = np.zeros(ops.layout.size)

    def on_iter(k, st):
        report.estimates.append(st.residuals[-1])
        report.times.append(time.perf_counter() - t0)
        if reference is None and not keep_iterates:
            return
        with ops.uncounted():
            u_k = recover(st.solution(zero, k))
            if reference is not None:
                report.true_errors.append(ops.dg_norm(reference - u_k))
            if keep_iterates:
                report.iterates.append(u_k)

    z, st = gmres(op, ops.apply_Linv(F).ravel(), stop.tol, stop.max_iter, callback=on_iter)
    u = recover(z)
    report.converged = st.happy or (stop.tol is not None and st.residuals[-1] <= stop.tol)
    report.counts = {k: ops.counts[k] - before.get(k, 0) for k in ops.counts}
    report.krylov = st
    if st.reorthogonalised:
        report.notes.append(f"re-orthogonalised {st.reorthogonalised} Arnoldi vectors")
    return u, report


# -- poly-energetic outer loop ------------------------------------------------

@dataclass
class GroupSolveReport:
    inner: str
    reports: list
    global_tolerance: float = None
    true_errors: list = None
    global_true_error: float = None
    notes: list = field(default_factory=lambda: [
        "per-group estimators use inexact upstream group fluxes and are not guaranteed bounds"])

    @property
    def iterations(self):
        return [r.iterations for r in self.reports]

    @property
    def group_estimates(self):
        return [r.estimates[-1] if r.estimates else 0.0 for r in self.reports]

    @property
    def global_estimate(self):
        return float(sum(self.group_estimates))

    def table(self):
        return [(g + 1, r.iterations, r.estimates[-1] if r.estimates else 0.0)
                for g, r in enumerate(self.reports)]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("group,iterations,estimate,true_error\n")
            for g, (grp, its, est) in enumerate(self.table()):
                err = self.true_errors[g] if self.true_errors else math.nan
                fh.write(f"{grp},{its},{est:.17g},{err:.17g}\n")


def group_sequential_solve(ops, F, inner="gmres", stop=StoppingRule(tol=1e-6), reference=None,
                           per_group=True):
    """Solve group by group from the highest energy downwards.

    Group g solves (A_g - S_gg) u_g = F_g + sum_{g'<g} S_gg' u_g'.  With
    ``per_group`` the tolerance is split evenly over the groups.
    """
    if inner not in ("si", "gmres"):
        raise InvalidArgument("inner solver must be 'si' or 'gmres'")
    if not ops.is_downscatter():
        raise UnsupportedOperation("group-sequential solve needs a downscatter-only kernel")
    F = ops.layout.check(_arr(F))
    NE = ops.layout.n_groups
    rule = stop.per_group(NE) if per_group else stop
    constants = constants_for(ops.space)
    u = np.zeros(ops.layout.shape)
    reports, errors = [], []
    for g in range(NE):
        view = ops.restrict(g)
        rhs = (F[g] + ops.group_coupling(u, g))[None]
        ref_g = None if reference is None else reference[g][None]
        if inner == "si":
            ug, rep = source_iteration(view, rhs, rule, reference=ref_g, constants=constants)
        else:
            ug, rep = gmres_weighted(view, rhs, rule, reference=ref_g)
        u[g] = ug[0]
        reports.append(rep)
        if reference is not None:
            errors.append(view.dg_norm(reference[g][None] - ug))
    out = GroupSolveReport(inner, reports, stop.tol, errors or None,
                           ops.dg_norm(reference - u) if reference is not None else None)
    return u, out


def richardson_residual(ops, u, F, omega=0.0):
    """P^-1 (F - (A - S) u) with P = A - omega M (for checking the recast)."""
    return ops.solve_A(residual_vector(ops, u, F), omega=omega)
