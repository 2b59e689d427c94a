"""Discrete DG space on the product mesh.

Raw local basis on kappa = kappa_x x kappa_mu x kappa_g is the tensor product

    psi_{k,j,i}(x, mu, E) = P_k(tau_E) P_j(t) P_{a_i}(xi) P_{b_i}(eta),  a_i + b_i <= p

(Legendre polynomials on reference coordinates; t is the square-edge parameter
of the arc).  Local index ordering is (k, j, i) with i fastest.  Each element
carries a change of basis C with phi = psi C; the mode decides C:

* ``orthonormal``: alphabar-weighted Gram = identity (M-hat = L = I);
* ``raw``: Gram-Schmidt orthogonal but not normalised (L diagonal);
* ``legendre``: C = I, general block Cholesky factor L.

Coefficient vectors have shape (n_groups, n_arcs, n_space, n_loc); flat
storage is group-major, then arc, then spatial element, then local index.
"""
from dataclasses import dataclass
import math

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import InvalidArgument, InvalidData, OutOfDomain
from .mesh import LEFT, RIGHT, BOTTOM, TOP, SIDE_NORMALS, gauss_legendre, angular_quadrature

BASIS_MODES = ("orthonormal", "raw", "legendre")


def legendre_table(n, x):
    """Values and derivatives of P_0..P_n at x; shapes (len(x), n+1)."""
    x = np.asarray(x, dtype=float)
    vals = np.empty(x.shape + (n + 1,))
    ders = np.empty_like(vals)
    for k in range(n + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        vals[..., k] = npleg.legval(x, c)
        ders[..., k] = npleg.legval(x, npleg.legder(c)) if k else 0.0
    return vals, ders


def total_degree_indices(p):
    return [(a, b) for s in range(p + 1) for a in range(s, -1, -1) for b in [s - a]]


def spatial_table(p, xi, eta):
    """Total-degree Legendre basis and its reference gradient at (xi, eta)."""
    px, dpx = legendre_table(p, xi)
    py, dpy = legendre_table(p, eta)
    idx = total_degree_indices(p)
    v = np.stack([px[..., a] * py[..., b] for a, b in idx], axis=-1)
    dxi = np.stack([dpx[..., a] * py[..., b] for a, b in idx], axis=-1)
    deta = np.stack([px[..., a] * dpy[..., b] for a, b in idx], axis=-1)
    return v, dxi, deta


@dataclass(frozen=True)
class DofLayout:
    n_groups: int
    n_arcs: int
    n_space: int
    n_loc: int

    @property
    def shape(self):
        return (self.n_groups, self.n_arcs, self.n_space, self.n_loc)

    @property
    def size(self):
        return self.n_groups * self.n_arcs * self.n_space * self.n_loc

    def block(self, g, a, x):
        start = ((g * self.n_arcs + a) * self.n_space + x) * self.n_loc
        return slice(start, start + self.n_loc)

    def check(self, v):
        v = np.asarray(v.coeffs if isinstance(v, FeFunction) else v, dtype=float)
        if v.size != self.size:
            raise InvalidArgument(f"vector of size {v.size} does not match layout size {self.size}")
        return v.reshape(self.shape)


@dataclass
class LocalBasis:
    degrees: tuple
    n_loc: int
    C: np.ndarray      # raw -> local change of basis, phi = psi C
    gram: np.ndarray   # alphabar-weighted Gram of phi


class FeFunction:
    """Coefficient vector tied to a DG space."""

    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.layout.shape)
        self.coeffs = space.layout.check(coeffs).copy()

    def __call__(self, x, y, mu, E=None):
        return self.space.evaluate(self, (x, y), mu, E)

    def block(self, g, a, x):
        return self.coeffs[g, a, x]

    def to_csv(self, path):
        """One row per coefficient: group, arc, element, local index, value."""
        c = self.coeffs
        g, a, x, l = np.indices(c.shape)
        rows = np.column_stack([g.ravel(), a.ravel(), x.ravel(), l.ravel(), c.ravel()])
        np.savetxt(path, rows, delimiter=",", header="group,arc,element,local,value",
                   comments="", fmt=["%d", "%d", "%d", "%d", "%.17g"])

    def to_binary(self, path):
        """Flat float64 dump in layout order."""
        self.coeffs.astype("<f8").tofile(path)

    @classmethod
    def from_binary(cls, space, path):
        return cls(space, np.fromfile(path, dtype="<f8"))


def _npts(base, mult):
    return max(1, int(math.ceil(base * mult)))


class DGSpace:
    """Tensor DG space V_x (x) V_S (x) V_E with per-element weighted bases."""

    def __init__(self, mesh, degrees, model, basis="orthonormal", quad_mult=1.0):
        p, q, r = degrees
        if min(p, q, r) < 0:
            raise InvalidArgument("degrees must be non-negative")
        if basis not in BASIS_MODES:
            raise InvalidArgument(f"basis mode must be one of {BASIS_MODES}")
        if quad_mult < 1:
            raise InvalidArgument("quadrature multiplier must be >= 1")
        self.mesh, self.model, self.basis_mode = mesh, model, basis
        self.p, self.q, self.r = p, q, r
        self.quad_mult = quad_mult
        sm, am, em = mesh.spatial, mesh.angular, mesh.energy
        self.h = sm.h
        self.nbx = (p + 1) * (p + 2) // 2
        self.nj, self.nk = q + 1, r + 1
        self.n_loc = self.nbx * self.nj * self.nk
        self.layout = DofLayout(em.n_groups, am.n_elements, sm.n_elements, self.n_loc)
        self.n_quad = (_npts(p + 2, quad_mult), _npts(p + 1, quad_mult),
                       _npts(q + 2, quad_mult), _npts(r + 2, quad_mult))
        self._space_rules(*self.n_quad[:2])
        self._angle_rules(self.n_quad[2])
        self._energy_rules(self.n_quad[3])
        self._build_bases()

    # -- reference rules -------------------------------------------------
    def refined(self, extra):
        """Shallow copy with ``extra`` more quadrature points per direction."""
        fine = DGSpace.__new__(DGSpace)
        fine.__dict__.update(self.__dict__)
        fine._space_rules(self.n_quad[0] + extra, self.n_quad[1] + extra)
        fine._angle_rules(self.n_quad[2] + extra)
        fine._energy_rules(self.n_quad[3] + extra)
        fine.n_quad = tuple(n + extra for n in self.n_quad)
        return fine

    def _space_rules(self, nv, nf):
        tau, w = gauss_legendre(nv)
        xi, eta = np.meshgrid(tau, tau, indexing="ij")
        self.ref_xi, self.ref_eta = xi.ravel(), eta.ravel()
        self.ref_wx = np.outer(w, w).ravel()
        self.Vx, self.dVx_dxi, self.dVx_deta = spatial_table(self.p, self.ref_xi, self.ref_eta)
        h = self.h
        corners = self.mesh.spatial.corners
        self.qx = corners[:, None, 0] + 0.5 * h * (self.ref_xi[None] + 1.0)
        self.qy = corners[:, None, 1] + 0.5 * h * (self.ref_eta[None] + 1.0)
        self.wx = self.ref_wx * (0.5 * h) ** 2
        # faces: tangential coordinate is tau for every side
        ft, fw = gauss_legendre(nf)
        one = np.ones_like(ft)
        ref = {LEFT: (-one, ft), RIGHT: (one, ft), BOTTOM: (ft, -one), TOP: (ft, one)}
        self.face_tau = ft
        self.face_w = fw * 0.5 * h
        self.Vf = np.stack([spatial_table(self.p, *ref[s])[0] for s in range(4)])

    def _angle_rules(self, n):
        dirs, wts = [], []
        for arc in self.mesh.angular.arcs:
            d, w, tau = angular_quadrature(arc, n)
            dirs.append(d)
            wts.append(w)
        self.dirs = np.array(dirs)          # (NA, nqa, 2)
        self.wa = np.array(wts)             # (NA, nqa)
        self.angle_tau = tau
        self.Va = legendre_table(self.q, tau)[0]   # (nqa, nj)

    def _energy_rules(self, n):
        tau, w = gauss_legendre(n)
        groups = self.mesh.energy.groups
        lo = np.array([g[0] for g in groups])
        hi = np.array([g[1] for g in groups])
        self.qE = lo[:, None] + 0.5 * (hi - lo)[:, None] * (tau[None] + 1.0)
        self.wE = 0.5 * (hi - lo)[:, None] * w[None]
        self.energy_tau = tau
        self.Ve = legendre_table(self.r, tau)[0]   # (nqe, nk)

    # -- weighted masses in raw basis ---------------------------------------
    def field_at_volume(self, fn):
        """Evaluate fn(x, y, E) at (group, element, energy node, space node)."""
        X = self.qx[None, :, None, :]
        Y = self.qy[None, :, None, :]
        E = self.qE[:, None, :, None]
        return np.broadcast_to(fn(X, Y, E), (self.layout.n_groups, self.layout.n_space,
                                             self.qE.shape[1], self.qx.shape[1]))

    def angle_mass(self, weight=None):
        """Per-arc raw angular mass int_arc w(mu) P_j P_J, shape (NA, nj, nj)."""
        wa = self.wa if weight is None else self.wa * weight
        return np.einsum("aq,qj,qJ->ajJ", wa, self.Va, self.Va)

    def raw_mass(self, fn):
        """Raw local mass weighted by fn(x, y, E): (NE, NA, NX, n_loc, n_loc)."""
        vals = self.field_at_volume(fn)
        xe = np.einsum("gxeq,ge,q,ek,eK,qi,qI->gxkiKI", vals, self.wE, self.wx,
                       self.Ve, self.Ve, self.Vx, self.Vx)
        ma = self.angle_mass()
        blk = np.einsum("gxkiKI,ajJ->gaxkjiKJI", xe, ma)
        n = self.n_loc
        return blk.reshape(blk.shape[:3] + (n, n))

    def _build_bases(self):
        self.alphabar_q = self.model.check_alphabar(
            self.qx[None, :, None, :], self.qy[None, :, None, :], self.qE[:, None, :, None])
        G = self.raw_mass(self.model.alphabar)
        G = 0.5 * (G + np.swapaxes(G, -1, -2))
        self.unweighted = False
        try:
            R = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            if self.model.validate:
                raise InvalidData("alphabar-weighted Gram matrix is not positive definite")
            # unvalidated data with alphabar = 0: fall back to the plain L2 Gram
            self.unweighted = True
            G = self.raw_mass(lambda x, y, E: np.ones(np.broadcast(x, y, E).shape))
            R = np.linalg.cholesky(G)
        eye = np.broadcast_to(np.eye(self.n_loc), G.shape)
        if self.basis_mode == "legendre":
            C = eye.copy()
        else:
            Rinv_T = np.swapaxes(np.linalg.solve(R, eye), -1, -2)
            if self.basis_mode == "orthonormal":
                C = Rinv_T
            else:
                C = Rinv_T * np.diagonal(R, axis1=-2, axis2=-1)[..., None, :]
        self.raw_gram = G
        self.C = C

    def local_basis(self, g, a, x):
        C = self.C[g, a, x]
        return LocalBasis((self.p, self.q, self.r), self.n_loc, C, C.T @ self.raw_gram[g, a, x] @ C)

    # -- conversions ----------------------------------------------------
    def to_raw(self, v):
        """Raw tensor coefficients, shape (NE, NA, NX, nk, nj, nbx)."""
        v = self.layout.check(v)
        raw = np.einsum("gaxlm,gaxm->gaxl", self.C, v)
        return raw.reshape(raw.shape[:3] + (self.nk, self.nj, self.nbx))

    def from_raw_moments(self, b):
        """Apply C^T to raw moment vectors (NE, NA, NX, n_loc)."""
        b = b.reshape(self.layout.shape)
        return np.einsum("gaxlm,gaxl->gaxm", self.C, b)

    def volume_values(self, v):
        """Values at every volume node: (NE, NA, NX, nqe, nqa, nqx)."""
        raw = self.to_raw(v)
        return np.einsum("gaxkji,ek,qj,pi->gaxeqp", raw, self.Ve, self.Va, self.Vx)

    def face_values(self, v, side):
        """Traces on one side of every element: (NE, NA, NX, nqe, nqa, nf)."""
        raw = self.to_raw(v)
        return np.einsum("gaxkji,ek,qj,pi->gaxeqp", raw, self.Ve, self.Va, self.Vf[side])

    # -- user-level operations ------------------------------------------
    def function(self, coeffs=None):
        return FeFunction(self, coeffs)

    def evaluate(self, f, point, mu, E=None):
        """Point value of a DG function; mu is a unit direction."""
        v = f.coeffs if isinstance(f, FeFunction) else self.layout.check(f)
        em = self.mesh.energy
        if E is None:
            E = 0.5 * (em.e_min + em.e_max)
        x = self.mesh.spatial.locate(*point)
        a, t = self.mesh.angular.locate(mu)
        g = em.locate(E)
        arc = self.mesh.angular.arcs[a]
        lo, hi = em.groups[g]
        tx = 2.0 * (t - arc.t0) / (arc.t1 - arc.t0) - 1.0
        te = 2.0 * (E - lo) / (hi - lo) - 1.0
        cx, cy = self.mesh.spatial.corners[x]
        xi = 2.0 * (point[0] - cx) / self.h - 1.0
        eta = 2.0 * (point[1] - cy) / self.h - 1.0
        psi = np.einsum("k,j,i->kji", legendre_table(self.r, te)[0],
                        legendre_table(self.q, tx)[0],
                        spatial_table(self.p, np.array(xi), np.array(eta))[0]).ravel()
        return float(psi @ (self.C[g, a, x] @ v[g, a, x]))

    def evaluate_points(self, f, x, y, mux, muy, E=None):
        """Vectorised point values; the arguments broadcast against each other."""
        v = self.to_raw(f.coeffs if isinstance(f, FeFunction) else f)
        sm, em = self.mesh.spatial, self.mesh.energy
        if E is None:
            E = 0.5 * (em.e_min + em.e_max)
        arrays = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, mux, muy, E)))
        shape_in = arrays[0].shape
        x, y, mux, muy, E = (a.ravel() for a in arrays)
        if (np.any(x < 0) or np.any(y < 0) or np.any(x > sm.length) or np.any(y > sm.length)
                or np.any(E < em.e_min) or np.any(E > em.e_max)):
            raise OutOfDomain("evaluation point outside the domain")
        n = sm.n_per_axis
        ix = np.clip((x / self.h).astype(int), 0, n - 1)
        iy = np.clip((y / self.h).astype(int), 0, n - 1)
        xe = iy * n + ix
        located = [self.mesh.angular.locate((mx, my)) for mx, my in zip(mux, muy)]
        a = np.array([l[0] for l in located], dtype=int)
        t = np.array([l[1] for l in located])
        edges = np.asarray(em.edges)
        g = np.clip(np.searchsorted(-edges, -E, side="right") - 1, 0, em.n_groups - 1)
        t0 = np.array([self.mesh.angular.arcs[i].t0 for i in a])
        t1 = np.array([self.mesh.angular.arcs[i].t1 for i in a])
        lo, hi = edges[g + 1], edges[g]
        xi = 2.0 * (x - ix * self.h) / self.h - 1.0
        eta = 2.0 * (y - iy * self.h) / self.h - 1.0
        Pe = legendre_table(self.r, 2.0 * (E - lo) / (hi - lo) - 1.0)[0]
        Pa = legendre_table(self.q, 2.0 * (t - t0) / (t1 - t0) - 1.0)[0]
        Px = spatial_table(self.p, xi, eta)[0]
        vals = np.einsum("nkji,nk,nj,ni->n", v[g, a, xe], Pe, Pa, Px)
        return vals.reshape(shape_in)

    def moments(self, fn, weight=None, extra=0):
        """Raw moments int w fn psi over every element.

        ``fn(x, y, mux, muy, E)`` is vectorised; ``extra`` adds quadrature
        points in every direction for non-polynomial integrands.
        """
        if extra:
            return self.refined(extra).moments(fn, weight)
        X = self.qx[None, None, :, None, None, :]
        Y = self.qy[None, None, :, None, None, :]
        MX = self.dirs[None, :, None, None, :, None, 0]
        MY = self.dirs[None, :, None, None, :, None, 1]
        E = self.qE[:, None, None, :, None, None]
        vals = fn(X, Y, MX, MY, E)
        if weight is not None:
            vals = vals * weight(X, Y, E)
        vals = np.broadcast_to(vals, (self.layout.n_groups, self.layout.n_arcs, self.layout.n_space,
                                      self.qE.shape[1], self.dirs.shape[1], self.qx.shape[1]))
        b = np.einsum("gaxeqp,ge,aq,p,ek,qj,pi->gaxkji", vals, self.wE, self.wa, self.wx,
                      self.Ve, self.Va, self.Vx)
        return b.reshape(self.layout.shape)

    def project(self, fn, extra=0):
        """alphabar-weighted L2 projection of fn(x, y, mux, muy, E)."""
        b = self.from_raw_moments(self.moments(fn, self.model.alphabar, extra))
        Mhat = np.einsum("gaxlm,gaxlL,gaxLn->gaxmn", self.C, self.raw_gram, self.C)
        return FeFunction(self, np.linalg.solve(Mhat, b[..., None])[..., 0])

    def weighted_l2(self, v, fn):
        """|| sqrt(w) v ||^2 by volume quadrature, w = fn(x, y, E)."""
        vals = self.volume_values(v)
        w = self.field_at_volume(fn)   # (NE, NX, nqe, nqx)
        return float(np.einsum("gaxeqp,gxep,ge,aq,p->", vals ** 2, w, self.wE, self.wa, self.wx))

    def face_terms(self, v):
        """1/2 sum of |mu.n| weighted squared jumps and boundary traces."""
        traces = [self.face_values(v, s) for s in range(4)]
        total = 0.0
        opposite = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}
        for face in self.mesh.spatial.faces:
            n = np.asarray(face.normal)
            side = int(np.flatnonzero((SIDE_NORMALS == n).all(axis=1))[0])
            own, nb = face.elements
            val = traces[side][:, :, own]
            if nb >= 0:
                val = val - traces[opposite[side]][:, :, nb]
            mun = np.abs(self.dirs @ n)  # (NA, nqa)
            total += 0.5 * np.einsum("gaeqp,ge,aq,p->", val ** 2, self.wE, self.wa * mun, self.face_w)
        return total

    def dg_norm(self, v):
        """DG-energy norm by quadrature (independent of the operator blocks)."""
        v = v.coeffs if isinstance(v, FeFunction) else v
        return math.sqrt(self.weighted_l2(v, self.model.alphabar) + self.face_terms(v))
