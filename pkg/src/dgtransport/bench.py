"""Manufactured-solution benchmarks, parameter sweeps and the config format.

Config files are plain ``key = value`` lines; ``#`` starts a comment and
list values (sweeps) are comma separated.  See ``configs/mono.cfg``.
"""
from concurrent.futures import ProcessPoolExecutor
import configparser
from dataclasses import dataclass, asdict, fields, replace
import csv
import itertools
import math
import os

import numpy as np
from scipy.special import i0e

from .errors import InvalidArgument
from .estimators import reference_solution
from .fespace import DGSpace
from .mesh import build_product_mesh, gauss_legendre
from .operators import TransportOperators
from .physics import compton_inverse, compton_model, isotropic_model, linear_anisotropic_model
from .solvers import (StoppingRule, generalised_source_iteration, gmres_weighted,
                      group_sequential_solve, source_iteration)

SOLVERS = ("si", "gsi", "gmres")


@dataclass(frozen=True)
class BenchConfig:
    problem: str = "mono"          # mono | poly
    length: float = 1.0
    sigma: float = 10.0
    c: float = 0.9
    anisotropy: float = 0.0        # b in (1 + b cos)/(2 pi), mono only
    n_per_axis: int = 8
    n_angular: int = 16
    n_groups: int = 1
    e_min: float = 10.0
    e_max: float = 1000.0
    absorption: float = 0.1
    k: float = 0.16
    p: int = 1
    q: int = 1
    r: int = 0
    solver: str = "si"
    omega: float = 0.5
    max_iter: int = 50
    tol: float = 1e-8
    quad_mult: float = 1.0
    basis: str = "orthonormal"
    reference_cap: int = 4096
    output: str = "results"
    seed: int = 0
    initial: str = "zero"          # zero | random

    def validate(self):
        if self.problem not in ("mono", "poly"):
            raise InvalidArgument("problem must be 'mono' or 'poly'")
        if not self.length > 0 or not self.sigma > 0:
            raise InvalidArgument("length and sigma must be positive")
        if not 0 <= self.c < 1:
            raise InvalidArgument("scattering ratio must lie in [0, 1)")
        if self.n_per_axis < 1:
            raise InvalidArgument("n_per_axis must be positive")
        if self.n_angular < 8 or self.n_angular % 8:
            raise InvalidArgument("n_angular must be a positive multiple of 8")
        if min(self.p, self.q, self.r) < 0:
            raise InvalidArgument("degrees must be non-negative")
        if self.solver not in SOLVERS:
            raise InvalidArgument(f"solver must be one of {SOLVERS}")
        if self.problem == "poly" and self.solver == "gsi":
            raise InvalidArgument("relaxed source iteration is mono-energetic only")
        if self.problem == "mono" and (self.n_groups != 1 or self.r != 0):
            raise InvalidArgument("mono problems use one group with r = 0")
        if self.problem == "poly" and not (0 <= self.e_min < self.e_max):
            raise InvalidArgument("need 0 <= e_min < e_max")
        if not 0 <= self.omega < 1:
            raise InvalidArgument("omega must lie in [0, 1)")
        if self.max_iter < 1 or not self.tol > 0:
            raise InvalidArgument("need max_iter >= 1 and tol > 0")
        if self.quad_mult < 1:
            raise InvalidArgument("quad_mult must be >= 1")
        if self.basis not in ("orthonormal", "raw", "legendre"):
            raise InvalidArgument("unknown basis mode")
        if self.initial not in ("zero", "random"):
            raise InvalidArgument("initial must be 'zero' or 'random'")
        if abs(self.anisotropy) > 1:
            raise InvalidArgument("anisotropy must satisfy |b| <= 1")
        return self

    @classmethod
    def mono_default(cls, **kw):
        return cls(**kw).validate()

    @classmethod
    def poly_default(cls, **kw):
        base = dict(problem="poly", length=20.0, n_per_axis=4, n_angular=8, n_groups=4,
                    p=1, q=1, r=1, solver="gmres", tol=1e-6)
        base.update(kw)
        return cls(**base).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(BenchConfig)}


def _convert(key, text):
    kind = _FIELD_TYPES[key]
    if kind is int:
        return int(float(text))
    return kind(text)


def parse_config(text):
    """Parse ``key = value`` text; returns (BenchConfig, sweep dict of lists)."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config: {exc.message}") from None
    values, sweep = {}, {}
    for key, val in parser["run"].items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise InvalidArgument(f"unknown key {key!r}")
        try:
            conv = [_convert(key, v.strip()) for v in val.split(",")]
        except ValueError:
            raise InvalidArgument(f"bad value for {key!r}")
        if len(conv) > 1:
            sweep[key] = conv
        values[key] = conv[0]
    return BenchConfig(**values).validate(), sweep


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


# -- manufactured solutions ---------------------------------------------------

def _chunked(fn, *args, chunk=16384):
    arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    shape = arrays[0].shape
    flat = [a.ravel() for a in arrays]
    out = np.empty(flat[0].size)
    for s in range(0, out.size, chunk):
        out[s:s + chunk] = fn(*[a[s:s + chunk] for a in flat])
    return out.reshape(shape)


@dataclass
class ManufacturedProblem:
    """Closed-form u with its gradient term and scattering source."""
    model: object
    kind: str
    k: float = 0.16
    e_max: float = 1000.0
    n_points: int = 48

    def exact(self, x, y, mx, my, E=None):
        s = x * mx + y * my
        if self.kind == "mono":
            return np.exp(-s ** 2) + 0 * np.asarray(E if E is not None else 0.0)
        eps = E / self.e_max
        return np.exp(-self.k * (eps * s) ** 2) * mollifier(eps)

    def streaming(self, x, y, mx, my, E=None):
        """mu . grad u."""
        s = x * mx + y * my
        u = self.exact(x, y, mx, my, E)
        if self.kind == "mono":
            return -2.0 * s * u
        return -2.0 * self.k * (E / self.e_max) ** 2 * s * u

    def scattering(self, x, y, mx, my, E=None):
        """S[u](x, mu, E) by quadrature over incoming directions."""
        model = self.model
        if self.kind == "mono":
            if model.isotropic:
                # (1/2pi) int exp(-(x.mu')^2) dmu' = exp(-|x|^2/2) I_0(|x|^2/2)
                return model.beta(x, y, 0.0) * i0e(0.5 * (x ** 2 + y ** 2)) \
                    + 0 * (mx + my + (0 if E is None else E))
            return _chunked(self._mono_quadrature, x, y, mx, my, 0.0 if E is None else E)
        return _chunked(self._compton_quadrature, x, y, mx, my, E)

    def _mono_quadrature(self, x, y, mx, my, E):
        n = 4 * self.n_points
        phi = 2 * np.pi * np.arange(n) / n
        c, s = np.cos(phi), np.sin(phi)
        px = mx[:, None] * c - my[:, None] * s
        py = mx[:, None] * s + my[:, None] * c
        u = np.exp(-(x[:, None] * px + y[:, None] * py) ** 2)
        ker = self.model.kernel(c, x=x[:, None], y=y[:, None])
        return (ker * u).sum(axis=1) * 2 * np.pi / n

    def _compton_quadrature(self, x, y, mx, my, E):
        model = self.model
        m, r_e = model.compton.mec2, model.compton.r_e
        cos_c = np.clip(1.0 - m * (1.0 / E - 1.0 / self.e_max), -1.0, 1.0)
        phi_c = np.arccos(cos_c)
        tau, w = gauss_legendre(self.n_points)
        total = np.zeros_like(E)
        for sign in (1.0, -1.0):
            phi = sign * 0.5 * phi_c[:, None] * (tau[None] + 1.0)
            wt = 0.5 * phi_c[:, None] * w[None]
            c, s = np.cos(phi), np.sin(phi)
            px = mx[:, None] * c - my[:, None] * s
            py = mx[:, None] * s + my[:, None] * c
            ep = compton_inverse(E[:, None], c, m)
            ep = np.where(np.isfinite(ep), np.minimum(ep, self.e_max), E[:, None])
            ratio = E[:, None] / ep
            kern = 0.5 * r_e ** 2 * (ratio + 1.0 / ratio - s ** 2)
            u = self.exact(x[:, None], y[:, None], px, py, ep)
            total += (wt * kern * u).sum(axis=1)
        return model.density(x, y) * total

    def source(self, x, y, mx, my, E=None):
        Ev = 0.0 if E is None else E
        return (self.streaming(x, y, mx, my, Ev) + self.model.total(x, y, Ev)
                * self.exact(x, y, mx, my, Ev) - self.scattering(x, y, mx, my, Ev))

    def boundary(self, x, y, mx, my, E=None):
        return self.exact(x, y, mx, my, 0.0 if E is None else E)


def mollifier(s):
    """exp(-1 / (1 - s^2)) on |s| < 1, zero elsewhere."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    safe = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe ** 2)), 0.0)


def manufactured_rhs(problem, model=None):
    """(f, g_D) such that the closed-form u solves the transport problem."""
    if model is not None:
        problem = replace(problem, model=model)
    return problem.source, problem.boundary


# -- problem assembly -----------------------------------------------------------

def build_model(cfg):
    if cfg.problem == "mono":
        alpha, beta = (1 - cfg.c) * cfg.sigma, cfg.c * cfg.sigma
        if cfg.anisotropy:
            return linear_anisotropic_model(alpha, beta, cfg.anisotropy)
        return isotropic_model(alpha, beta)
    return compton_model(cfg.e_min, cfg.e_max, absorption=cfg.absorption)


def build_problem(cfg):
    """Return (space, ops, F, manufactured problem) for a config."""
    cfg.validate()
    model = build_model(cfg)
    if cfg.problem == "mono":
        mesh = build_product_mesh(cfg.length, cfg.n_per_axis, cfg.n_angular)
        problem = ManufacturedProblem(model, "mono")
    else:
        mesh = build_product_mesh(cfg.length, cfg.n_per_axis, cfg.n_angular,
                                  cfg.e_min, cfg.e_max, cfg.n_groups)
        problem = ManufacturedProblem(model, "poly", k=cfg.k, e_max=cfg.e_max)
    space = DGSpace(mesh, (cfg.p, cfg.q, cfg.r), model, cfg.basis, cfg.quad_mult)
    ops = TransportOperators(space)
    f, g = manufactured_rhs(problem)
    F = ops.load_vector(f, g)
    return space, ops, F, problem


def initial_guess(cfg, ops):
    if cfg.initial == "zero":
        return None
    return np.random.default_rng(cfg.seed).standard_normal(ops.layout.shape)


def run_solver(cfg, ops, F, reference=None, stop=None):
    stop = stop or StoppingRule(cfg.max_iter, cfg.tol)
    u0 = initial_guess(cfg, ops)
    if cfg.solver == "si":
        return source_iteration(ops, F, stop, u0=u0, reference=reference)
    if cfg.solver == "gsi":
        return generalised_source_iteration(ops, F, cfg.omega, stop, u0=u0, reference=reference)
    if u0 is not None:
        raise InvalidArgument("GMRES starts from zero")
    return gmres_weighted(ops, F, stop, reference=reference)


def _tag(cfg):
    return (f"{cfg.problem}_{cfg.solver}_L{cfg.length:g}_s{cfg.sigma:g}_c{cfg.c:g}"
            f"_n{cfg.n_per_axis}_a{cfg.n_angular}_p{cfg.p}")


def single_run(cfg, write=True):
    """One solve with a discrete reference; returns a summary dict."""
    space, ops, F, problem = build_problem(cfg)
    reference, exact = reference_solution(ops, F, cap=cfg.reference_cap)
    u, report = run_solver(cfg, ops, F, reference)
    eff = [e for e in report.effectivities if math.isfinite(e)]
    summary = dict(
        tag=_tag(cfg), solver=cfg.solver, length=cfg.length, sigma=cfg.sigma, c=cfg.c,
        n_space=space.layout.n_space, p=cfg.p, dofs=space.layout.size,
        iterations=report.iterations, converged=report.converged,
        final_estimate=report.estimates[-1], final_error=report.true_errors[-1],
        rate=observed_rate(report.true_errors),
        min_effectivity=min(eff) if eff else math.nan,
        max_effectivity=max(eff) if eff else math.nan,
        reference="dense" if exact else "gmres-1e-13",
        discretisation_error=space.dg_norm(space.project(problem.exact).coeffs - reference))
    if write:
        os.makedirs(cfg.output, exist_ok=True)
        report.to_csv(os.path.join(cfg.output, summary["tag"] + ".csv"))
    return summary


def observed_rate(errors, floor=1e-12):
    """Geometric mean of successive error ratios above the round-off floor."""
    e = np.asarray([x for x in errors if x > floor * max(errors[0], 1e-300)])
    if e.size < 3:
        return math.nan
    return float(np.exp(np.mean(np.log(e[2:] / e[1:-1]))))


def _safe_run(cfg):
    try:
        return single_run(cfg), None
    except Exception as exc:   # a failed point must not stop the sweep
        return None, f"{_tag(cfg)}: {type(exc).__name__}: {exc}"


def sweep_configs(base, grid):
    keys = sorted(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield replace(base, **dict(zip(keys, combo)))


def run_mono_sweep(base, grid, jobs=1):
    """Run every grid point; returns (summaries, failures) and writes summary.csv."""
    configs = list(sweep_configs(base, grid))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_run, configs))
    else:
        results = [_safe_run(c) for c in configs]
    summaries = [s for s, _ in results if s is not None]
    failures = [f for _, f in results if f is not None]
    write_rows(os.path.join(base.output, "summary.csv"), summaries)
    if failures:
        with open(os.path.join(base.output, "failures.txt"), "w") as fh:
            fh.write("\n".join(failures) + "\n")
    return summaries, failures


def write_rows(path, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})


def run_poly_benchmark(cfg, inner_counts=(1, 2, 4, 8, 16), tolerances=(1e-2, 1e-4, 1e-6),
                       write=True):
    """Compton benchmark: error/estimate vs inner iterations and tolerance.

    Returns a dict with the three tables (lists of row dicts).
    """
    if cfg.problem != "poly":
        raise InvalidArgument("poly benchmark needs problem = poly")
    space, ops, F, problem = build_problem(cfg)
    reference, exact = reference_solution(ops, F, cap=cfg.reference_cap)
    by_count, by_tol, groups = [], [], []
    for solver in ("si", "gmres"):
        for n in inner_counts:
            u, rep = group_sequential_solve(ops, F, solver, StoppingRule(n), reference)
            by_count.append(dict(solver=solver, inner=n, estimate=rep.global_estimate,
                                 true_error=rep.global_true_error))
        for eps in tolerances:
            u, rep = group_sequential_solve(ops, F, solver, StoppingRule(cfg.max_iter, eps),
                                            reference)
            by_tol.append(dict(solver=solver, tolerance=eps, estimate=rep.global_estimate,
                               true_error=rep.global_true_error,
                               iterations=sum(rep.iterations)))
        u, rep = group_sequential_solve(ops, F, solver, StoppingRule(cfg.max_iter, cfg.tol),
                                        reference)
        for g, its, est in rep.table():
            groups.append(dict(solver=solver, group=g, iterations=its, estimate=est,
                               bound=cfg.tol / cfg.n_groups,
                               true_error=rep.true_errors[g - 1]))
    out = dict(by_inner=by_count, by_tolerance=by_tol, groups=groups,
               reference="dense" if exact else "gmres-1e-13")
    if write:
        for name in ("by_inner", "by_tolerance", "groups"):
            write_rows(os.path.join(cfg.output, f"poly_{name}.csv"), out[name])
    return out


def config_dict(cfg):
    return asdict(cfg)
