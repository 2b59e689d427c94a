"""Matrix-free discrete operators A, A^-1, S, M, M-hat, L and a dense oracle.

Blocks are stored per element (group g, arc a, spatial element x) in the
local basis of :class:`~dgtransport.fespace.DGSpace`:

* ``D``   diagonal block of A (advection, collision and outflow faces),
* ``Bx``, ``By`` coupling of an element to its upwind neighbour in x and y,
* ``Msig``, ``Mb``, ``Mhat`` masses weighted by alpha + beta, beta, alphabar.

Every arc lies in one quadrant, so the upwind neighbours of an element are
fixed per arc and A^-1 is an exact wavefront sweep.
"""
from collections import Counter
from contextlib import contextmanager

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, InvalidData, NumericalBreakdown, SizeError, UnsupportedOperation
from .fespace import DofLayout, FeFunction, legendre_table, spatial_table
from .mesh import LEFT, RIGHT, BOTTOM, TOP, SIDE_NORMALS
from .physics import compton_pair_nodes, klein_nishina

OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}
DENSE_CAP = 4096


def _sandwich(Cl, B, Cr):
    return np.swapaxes(Cl, -1, -2) @ B @ Cr


def _kron3(a, b, c):
    return np.kron(np.kron(a, b), c)


class TransportOperators:
    """Discrete operators of the DG transport problem on one space."""

    def __init__(self, space):
        self.space = space
        self.group = None
        self.layout = space.layout
        self.counts = Counter()
        self._setup_geometry(space)
        self._setup_blocks(space)
        self._setup_scattering(space)
        self._setup_sweep()

    # -- setup ---------------------------------------------------------

    @contextmanager
    def uncounted(self):
        """Run diagnostic work without charging it to the operation counters."""
        saved = self.counts.copy()
        try:
            yield
        finally:
            self.counts.clear()
            self.counts.update(saved)
    def _setup_geometry(self, space):
        sm = space.mesh.spatial
        n, NX = sm.n_per_axis, sm.n_elements
        mean_dir = np.einsum("aq,aqd->ad", space.wa, space.dirs)
        self.sx = np.sign(mean_dir[:, 0]).astype(int)
        self.sy = np.sign(mean_dir[:, 1]).astype(int)
        ix, iy = np.arange(NX) % n, np.arange(NX) // n
        self.n_axis = n
        self.ix, self.iy = ix, iy

        def upwind(shift_x, shift_y):
            jx, jy = ix - shift_x, iy - shift_y
            ok = (jx >= 0) & (jx < n) & (jy >= 0) & (jy < n)
            return np.where(ok, jy * n + jx, NX)

        self.upx = np.array([upwind(s, 0) for s in self.sx])   # (NA, NX), NX = none
        self.upy = np.array([upwind(0, s) for s in self.sy])

    def _setup_blocks(self, space):
        h = space.h
        ME = np.einsum("ge,ek,eK->gkK", space.wE, space.Ve, space.Ve)
        Mmu = [space.angle_mass(space.dirs[..., d]) for d in range(2)]
        Gx = np.einsum("q,qi,qI->iI", space.wx, space.dVx_dxi, space.Vx) * (2.0 / h)
        Gy = np.einsum("q,qi,qI->iI", space.wx, space.dVx_deta, space.Vx) * (2.0 / h)
        Fself = np.einsum("f,sfi,sfI->siI", space.face_w, space.Vf, space.Vf)
        Fcross = np.stack([np.einsum("f,fi,fI->iI", space.face_w, space.Vf[s], space.Vf[OPPOSITE[s]])
                           for s in range(4)])
        NE, NA, NX, nl = self.layout.shape
        adv = np.empty((NE, NA, nl, nl))
        bx = np.empty((NE, NA, nl, nl))
        by = np.empty((NE, NA, nl, nl))
        for g in range(NE):
            for a in range(NA):
                sx, sy = self.sx[a], self.sy[a]
                out_x, out_y = (RIGHT if sx > 0 else LEFT), (TOP if sy > 0 else BOTTOM)
                absx, absy = sx * Mmu[0][a], sy * Mmu[1][a]
                adv[g, a] = (-_kron3(ME[g], Mmu[0][a], Gx) - _kron3(ME[g], Mmu[1][a], Gy)
                             + _kron3(ME[g], absx, Fself[out_x]) + _kron3(ME[g], absy, Fself[out_y]))
                bx[g, a] = -_kron3(ME[g], absx, Fcross[OPPOSITE[out_x]])
                by[g, a] = -_kron3(ME[g], absy, Fcross[OPPOSITE[out_y]])
        model = space.model
        C = space.C
        self.C = C
        Msig_raw = space.raw_mass(model.total)
        Mb_raw = space.raw_mass(model.beta)
        self.Msig = _sandwich(C, Msig_raw, C)
        self.Mb = _sandwich(C, Mb_raw, C)
        self.Mhat = _sandwich(C, space.raw_gram, C)
        self.D = _sandwich(C, adv[:, :, None] + Msig_raw, C)
        Cpad = np.concatenate([C, np.zeros_like(C[:, :, :1])], axis=2)
        a_idx = np.arange(NA)[:, None]
        self.Bx = _sandwich(C, bx[:, :, None], Cpad[:, a_idx, self.upx])
        self.By = _sandwich(C, by[:, :, None], Cpad[:, a_idx, self.upy])
        self.Dinv = self._invert(self.D)
        try:
            self.L = np.linalg.cholesky(0.5 * (self.Mhat + np.swapaxes(self.Mhat, -1, -2)))
        except np.linalg.LinAlgError:
            raise InvalidData("weighted mass is not positive definite")
        self.raw_mats = dict(ME=ME, Mmu=Mmu, Gx=Gx, Gy=Gy, Fself=Fself, Fcross=Fcross)

    @staticmethod
    def _invert(D):
        cond = np.linalg.cond(D)
        bad = ~np.isfinite(cond) | (cond > 1e14)
        if bad.any():
            raise NumericalBreakdown(f"singular local block at element {tuple(np.argwhere(bad)[0])}")
        return np.linalg.inv(D)

    def _setup_scattering(self, space):
        model = space.model
        self.Mrho = np.einsum("q,xq,qi,qI->xiI", space.wx,
                              np.broadcast_to(model.density(space.qx, space.qy), space.qx.shape),
                              space.Vx, space.Vx)
        NE, NA = self.layout.n_groups, self.layout.n_arcs
        nk, nj = space.nk, space.nj
        dirs = space.dirs.reshape(-1, 2)
        cos = np.clip(dirs @ dirs.T, -1.0, 1.0)                      # (P, P) node pairs
        wa = space.wa.ravel()
        # angular test/trial tables per node: (NA*nqa, NA, nj), zero off-arc
        nqa = space.Va.shape[0]
        T = np.zeros((NA, nqa, NA, nj))
        T[np.arange(NA), :, np.arange(NA), :] = space.Va[None]
        T = T.reshape(NA * nqa, NA, nj) * wa[:, None, None]
        K = np.zeros((NE, NA, nk, nj, NE, NA, nk, nj))
        if model.is_mono:
            ME = np.einsum("ge,ek,eK->gkK", space.wE, space.Ve, space.Ve)
            ang = np.einsum("paj,pP,PAJ->ajAJ", T, model.shape(cos), T)
            for g in range(NE):
                K[g, :, :, :, g] = np.einsum("kK,ajAJ->akjAKJ", ME[g], ang)
        else:
            groups = space.mesh.energy.groups
            npair = 2 * space.n_quad[3] + 2
            for g in range(NE):
                lo, hi = groups[g]
                for G in range(g + 1):
                    glo, ghi = groups[G]
                    e_in, e_out, w = compton_pair_nodes(cos, (glo, ghi), (lo, hi), npair,
                                                        model.compton.mec2)
                    kn = klein_nishina(e_in, e_out, cos[..., None], model.compton.r_e) * w
                    Pin = legendre_table(space.r, 2 * (e_in - glo) / (ghi - glo) - 1)[0]
                    Pout = legendre_table(space.r, 2 * (e_out - lo) / (hi - lo) - 1)[0]
                    # rows: outgoing (test) node p, columns: incoming (trial) node P
                    core = np.einsum("pPn,pPnk,pPnK->pPkK", kn, Pout, Pin)
                    K[g, :, :, :, G] = np.einsum("paj,pPkK,PAJ->akjAKJ", T, core, T)
        self.K = K
        P = NE * NA * nk * nj
        self.K2 = K.reshape(P, P)

    def _setup_sweep(self):
        """Per-quadrant wavefront ordering with pre-permuted blocks."""
        NX = self.layout.n_space
        n = self.n_axis
        self.quadrants = []
        for sx, sy in sorted({(int(a), int(b)) for a, b in zip(self.sx, self.sy)}):
            arcs = np.flatnonzero((self.sx == sx) & (self.sy == sy))
            ox = self.ix if sx > 0 else n - 1 - self.ix
            oy = self.iy if sy > 0 else n - 1 - self.iy
            wave = ox + oy
            perm = np.lexsort((self.ix, wave))
            pos = np.empty(NX + 1, dtype=int)
            pos[perm] = np.arange(NX)
            pos[NX] = NX
            bounds = np.searchsorted(wave[perm], np.arange(2 * n))
            fronts = list(zip(bounds[:-1], bounds[1:]))
            a0 = arcs[0]
            self.quadrants.append(dict(
                arcs=arcs, perm=perm, fronts=fronts,
                upx=pos[self.upx[a0][perm]], upy=pos[self.upy[a0][perm]],
                Bx=self.Bx[:, arcs][:, :, perm], By=self.By[:, arcs][:, :, perm]))
        self._quad_dinv = {0.0: [self.Dinv[:, q["arcs"]][:, :, q["perm"]] for q in self.quadrants]}

    # -- helpers -----------------------------------------------------------
    def _vec(self, v):
        return self.layout.check(v)

    def _wrap(self, like, out):
        if isinstance(like, FeFunction):
            return FeFunction(like.space, out)
        return out

    @staticmethod
    def _bmv(B, v):
        return np.matmul(B, v[..., None])[..., 0]

    def _neighbours(self, v, up):
        vp = np.concatenate([v, np.zeros_like(v[:, :, :1])], axis=2)
        return vp[:, np.arange(v.shape[1])[:, None], up]

    @property
    def shape(self):
        return self.layout.shape

    def zeros(self):
        return np.zeros(self.layout.shape)

    # -- actions ------------------------------------------------------------
    def apply_A(self, v):
        x = self._vec(v)
        self.counts["A"] += 1
        out = (self._bmv(self.D, x) + self._bmv(self.Bx, self._neighbours(x, self.upx))
               + self._bmv(self.By, self._neighbours(x, self.upy)))
        return self._wrap(v, out)

    def solve_A(self, rhs, omega=0.0, method="wavefront"):
        """Apply (A - omega M)^-1 by a transport sweep."""
        b = self._vec(rhs)
        self.counts["Ainv"] += 1
        if method == "lexicographic":
            return self._wrap(rhs, self._sweep_lexicographic(b, omega))
        if method != "wavefront":
            raise InvalidArgument(f"unknown sweep method {method!r}")
        dinvs = self._shifted_inverses(omega)
        NE, NA, NX, nl = self.layout.shape
        out = np.empty_like(b)
        for quad, dinv in zip(self.quadrants, dinvs):
            arcs, perm = quad["arcs"], quad["perm"]
            rq = b[:, arcs][:, :, perm]
            u = np.zeros((NE, arcs.size, NX + 1, nl))
            for s, e in quad["fronts"]:
                r = (rq[:, :, s:e] - self._bmv(quad["Bx"][:, :, s:e], u[:, :, quad["upx"][s:e]])
                     - self._bmv(quad["By"][:, :, s:e], u[:, :, quad["upy"][s:e]]))
                u[:, :, s:e] = self._bmv(dinv[:, :, s:e], r)
            out[:, arcs[:, None], perm[None, :]] = u[:, :, :NX]
        return self._wrap(rhs, out)

    def _shifted_inverses(self, omega):
        omega = float(omega)
        if omega not in self._quad_dinv:
            dinv = self._invert(self.D - omega * self.Mb)
            self._quad_dinv[omega] = [dinv[:, q["arcs"]][:, :, q["perm"]] for q in self.quadrants]
        return self._quad_dinv[omega]

    def _sweep_lexicographic(self, b, omega):
        """Element-by-element sweep, rows then columns in the arc's direction."""
        D = self.D - omega * self.Mb
        NE, NA, NX, nl = self.layout.shape
        n = self.n_axis
        u = np.zeros((NE, NA, NX + 1, nl))
        for a in range(NA):
            cols = range(n) if self.sx[a] > 0 else range(n - 1, -1, -1)
            rows = range(n) if self.sy[a] > 0 else range(n - 1, -1, -1)
            for iy in rows:
                for ix in cols:
                    x = iy * n + ix
                    r = (b[:, a, x] - self._bmv(self.Bx[:, a, x], u[:, a, self.upx[a, x]])
                         - self._bmv(self.By[:, a, x], u[:, a, self.upy[a, x]]))
                    u[:, a, x] = np.linalg.solve(D[:, a, x], r[..., None])[..., 0]
        return u[:, :, :NX]

    def apply_S(self, v, out_groups=None, in_groups=None):
        """Scattering action; optional group masks select blocks S[out, in]."""
        x = self._vec(v)
        self.counts["S"] += 1
        NE, NA, NX, nl = self.layout.shape
        nk, nj, nbx = self.K.shape[2], self.K.shape[3], self.Mrho.shape[1]
        raw = self._bmv(self.C, x).reshape(NE, NA, NX, nk, nj, nbx)
        if in_groups is not None:
            mask = np.zeros(NE, dtype=bool)
            mask[in_groups] = True
            raw = raw * mask[:, None, None, None, None, None]
        t = np.einsum("xiI,gaxkjI->gakjxi", self.Mrho, raw).reshape(-1, NX * nbx)
        o = (self.K2 @ t).reshape(NE, NA, nk, nj, NX, nbx)
        o = o.transpose(0, 1, 4, 2, 3, 5).reshape(NE, NA, NX, nl)
        out = np.matmul(np.swapaxes(self.C, -1, -2), o[..., None])[..., 0]
        if out_groups is not None:
            mask = np.zeros(NE, dtype=bool)
            mask[out_groups] = True
            out = out * mask[:, None, None, None]
        return self._wrap(v, out)

    def apply_M(self, v):
        self.counts["M"] += 1
        return self._wrap(v, self._bmv(self.Mb, self._vec(v)))

    def apply_Msigma(self, v):
        return self._wrap(v, self._bmv(self.Msig, self._vec(v)))

    def apply_Mhat(self, v):
        return self._wrap(v, self._bmv(self.Mhat, self._vec(v)))

    def apply_L(self, v):
        return self._wrap(v, self._bmv(np.swapaxes(self.L, -1, -2), self._vec(v)))

    def apply_Linv(self, v):
        """L^-1 with M-hat = L L^T; L^T is upper, applied as (L^T)^-1."""
        x = self._vec(v)
        out = np.empty_like(x)
        for idx in np.ndindex(*x.shape[:3]):
            out[idx] = solve_triangular(self.L[idx], x[idx], trans="T", lower=True)
        return self._wrap(v, out)

    # -- norms ---------------------------------------------------------------
    @staticmethod
    def dot(u, v):
        u = u.coeffs if isinstance(u, FeFunction) else u
        v = v.coeffs if isinstance(v, FeFunction) else v
        return float(np.vdot(u, v))

    def a_form(self, w, v):
        return self.dot(v, self.apply_A(w))

    def s_form(self, w, v):
        return self.dot(v, self.apply_S(w))

    def m_form(self, w, v):
        return self.dot(v, self.apply_M(w))

    def a_norm(self, v, omega=0.0):
        """(a - omega m)-energy norm."""
        val = self.a_form(v, v) - omega * self.m_form(v, v)
        return float(np.sqrt(max(val, 0.0)))

    def dg_norm(self, v):
        """DG-energy norm: a(v,v) with the collision mass swapped for M-hat."""
        x = self._vec(v)
        val = (self.dot(x, self.apply_A(x)) - self.dot(x, self.apply_Msigma(x))
               + self.dot(x, self.apply_Mhat(x)))
        return float(np.sqrt(max(val, 0.0)))

    def beta_norm(self, v):
        return float(np.sqrt(max(self.m_form(v, v), 0.0)))

    # -- data ------------------------------------------------------------------
    def load_vector(self, f=None, g_D=None, extra=0):
        """Moments of f(x, y, mux, muy, E) plus inflow boundary data g_D(...)."""
        if self.group is not None:
            raise UnsupportedOperation("assemble the load vector on the full operator set")
        space = self.space
        fine = space.refined(extra) if extra else space
        b = np.zeros(self.layout.shape)
        if f is not None:
            b += fine.moments(f)
        if g_D is not None:
            b += self._boundary_moments(fine, g_D)
        return space.from_raw_moments(b)

    def _boundary_moments(self, sp, g_D):
        NE, NA, NX, nl = self.layout.shape
        out = np.zeros((NE, NA, NX, sp.nk, sp.nj, sp.nbx))
        h = sp.h
        corners = sp.mesh.spatial.corners
        ft = sp.face_tau
        for face in sp.mesh.spatial.boundary_faces():
            n = np.asarray(face.normal)
            side = int(np.flatnonzero((SIDE_NORMALS == n).all(axis=1))[0])
            x = face.elements[0]
            cx, cy = corners[x]
            px = {LEFT: cx + 0 * ft, RIGHT: cx + h + 0 * ft}.get(side, cx + 0.5 * h * (ft + 1))
            py = {BOTTOM: cy + 0 * ft, TOP: cy + h + 0 * ft}.get(side, cy + 0.5 * h * (ft + 1))
            mun = sp.dirs @ n                                  # (NA, nqa)
            inflow = np.where(mun < 0, -mun, 0.0) * sp.wa
            vals = g_D(px[None, None, None, None, :], py[None, None, None, None, :],
                       sp.dirs[None, :, :, None, None, 0], sp.dirs[None, :, :, None, None, 1],
                       sp.qE[:, None, None, :, None])
            vals = np.broadcast_to(vals, (NE, NA, sp.dirs.shape[1], sp.qE.shape[1], ft.size))
            out[:, :, x] += np.einsum("gaqef,aq,ge,f,ek,qj,fi->gakji", vals, inflow, sp.wE,
                                      sp.face_w, sp.Ve, sp.Va, sp.Vf[side])
        return out.reshape(self.layout.shape)

    # -- group restriction ---------------------------------------------------
    def restrict(self, g):
        """View of the diagonal group block (A_g, S_gg, M_g) for group g."""
        if self.group is not None:
            raise UnsupportedOperation("already restricted to one group")
        view = TransportOperators.__new__(TransportOperators)
        view.__dict__.update(self.__dict__)
        view.group = g
        view.parent = self
        view.counts = self.counts
        s = slice(g, g + 1)
        NE, NA, NX, nl = self.layout.shape
        view.layout = DofLayout(1, NA, NX, nl)
        for name in ("C", "D", "Bx", "By", "Msig", "Mb", "Mhat", "L", "Dinv"):
            setattr(view, name, getattr(self, name)[s])
        view.K = self.K[s][:, :, :, :, s]
        view.K2 = view.K.reshape(view.K.shape[0] * NA * view.K.shape[2] * view.K.shape[3], -1)
        view._setup_sweep()
        return view

    def group_coupling(self, u, g):
        """Downscatter source into group g from groups above: sum_{G<g} S_gG u_G."""
        if g == 0:
            return np.zeros(self.layout.shape[1:])
        return self.apply_S(u, out_groups=[g], in_groups=list(range(g)))[g]

    def is_downscatter(self, tol=0.0):
        NE = self.K.shape[0]
        for g in range(NE):
            for G in range(g + 1, NE):
                if np.max(np.abs(self.K[g, :, :, :, G])) > tol:
                    return False
        return True

    # -- dense oracle -------------------------------------------------------
    def assemble_dense(self, which, cap=DENSE_CAP):
        """Dense matrix by direct pointwise quadrature (test oracle).

        ``which`` is one of 'A', 'S', 'M', 'Mhat'.  Entry (i, j) is the form
        evaluated on trial function j and test function i.
        """
        if self.group is not None:
            raise UnsupportedOperation("dense assembly needs the full operator set")
        N = self.layout.size
        if N > cap:
            raise SizeError(f"N = {N} exceeds dense cap {cap}")
        return _DenseAssembler(self.space).build(which)

    @staticmethod
    def export_triplets(matrix, path, tol=0.0):
        rows, cols = np.nonzero(np.abs(matrix) > tol)
        np.savetxt(path, np.column_stack([rows, cols, matrix[rows, cols]]),
                   fmt=["%d", "%d", "%.17g"], header="row col value", comments="")


class _DenseAssembler:
    """Pointwise quadrature assembly over the mesh face list."""

    def __init__(self, space):
        self.sp = space
        self.layout = space.layout

    def _phi(self, g, a, x, xi, eta, tau_e, t_nodes=None):
        """Local basis values on a tensor grid: (n_e, n_a, n_x, n_loc)."""
        sp = self.sp
        Va = sp.Va if t_nodes is None else t_nodes
        Ve = legendre_table(sp.r, tau_e)[0]
        vx = spatial_table(sp.p, xi, eta)[0]
        psi = np.einsum("ek,qj,pi->eqpkji", Ve, Va, vx).reshape(Ve.shape[0], Va.shape[0], vx.shape[0], -1)
        return psi @ sp.C[g, a, x]

    def _grad(self, g, a, x):
        sp = self.sp
        Ve, Va = sp.Ve, sp.Va
        out = []
        for d in (sp.dVx_dxi, sp.dVx_deta):
            psi = np.einsum("ek,qj,pi->eqpkji", Ve, Va, d * (2.0 / sp.h))
            out.append(psi.reshape(Ve.shape[0], Va.shape[0], d.shape[0], -1) @ sp.C[g, a, x])
        return out

    def _index(self, g, a, x):
        return self.layout.block(g, a, x)

    def build(self, which):
        sp = self.sp
        N = self.layout.size
        Mat = np.zeros((N, N))
        NE, NA, NX, nl = self.layout.shape
        model = sp.model
        weight = {"M": model.beta, "Mhat": model.alphabar, "A": model.total}
        if which in weight:
            for g in range(NE):
                for a in range(NA):
                    for x in range(NX):
                        phi = self._phi(g, a, x, sp.ref_xi, sp.ref_eta, sp.energy_tau)
                        X, Y, E = sp.qx[x][None, None, :], sp.qy[x][None, None, :], sp.qE[g][:, None, None]
                        w = (sp.wE[g][:, None, None] * sp.wa[a][None, :, None] * sp.wx[None, None, :]
                             * weight[which](X, Y, E))
                        blk = np.einsum("eqp,eqpi,eqpj->ij", w, phi, phi)
                        if which == "A":
                            dx, dy = self._grad(g, a, x)
                            mu = sp.dirs[a]
                            wv = sp.wE[g][:, None, None] * sp.wa[a][None, :, None] * sp.wx[None, None, :]
                            dmu = mu[None, :, None, 0, None] * dx + mu[None, :, None, 1, None] * dy
                            blk -= np.einsum("eqp,eqpi,eqpj->ij", wv, dmu, phi)
                        s = self._index(g, a, x)
                        Mat[s, s] += blk
            if which == "A":
                self._faces(Mat)
            return Mat
        if which == "S":
            return self._scatter(Mat)
        raise InvalidArgument(f"unknown operator {which!r}")

    def _face_ref(self, side):
        ft = self.sp.face_tau
        one = np.ones_like(ft)
        return {LEFT: (-one, ft), RIGHT: (one, ft), BOTTOM: (ft, -one), TOP: (ft, one)}[side]

    def _faces(self, Mat):
        sp = self.sp
        NE, NA = self.layout.n_groups, self.layout.n_arcs
        for face in sp.mesh.spatial.faces:
            n = np.asarray(face.normal)
            side = int(np.flatnonzero((SIDE_NORMALS == n).all(axis=1))[0])
            own, nb = face.elements
            for g in range(NE):
                for a in range(NA):
                    mun = sp.dirs[a] @ n                     # (nqa,)
                    w = sp.wE[g][:, None, None] * sp.wa[a][None, :, None] * sp.face_w[None, None, :]
                    po = self._phi(g, a, own, *self._face_ref(side), sp.energy_tau)
                    so = self._index(g, a, own)
                    out_w = w * np.maximum(mun, 0)[None, :, None]
                    in_w = w * np.maximum(-mun, 0)[None, :, None]
                    Mat[so, so] += np.einsum("eqf,eqfi,eqfj->ij", out_w, po, po)
                    if nb < 0:
                        continue
                    pn = self._phi(g, a, nb, *self._face_ref(OPPOSITE[side]), sp.energy_tau)
                    sn = self._index(g, a, nb)
                    # owner upwind: nb receives owner's trace
                    Mat[sn, so] -= np.einsum("eqf,eqfi,eqfj->ij", out_w, pn, po)
                    # nb upwind: owner receives nb's trace, nb has outflow
                    Mat[so, sn] -= np.einsum("eqf,eqfi,eqfj->ij", in_w, po, pn)
                    Mat[sn, sn] += np.einsum("eqf,eqfi,eqfj->ij", in_w, pn, pn)

    def _scatter(self, Mat):
        sp = self.sp
        model = sp.model
        NE, NA, NX, nl = self.layout.shape
        groups = sp.mesh.energy.groups
        nqa = sp.Va.shape[0]
        for x in range(NX):
            rho = np.broadcast_to(model.density(sp.qx[x], sp.qy[x]), sp.wx.shape) * sp.wx
            for a in range(NA):
                for A in range(NA):
                    cos = np.clip(sp.dirs[a] @ sp.dirs[A].T, -1, 1)      # (q, Q)
                    wq = sp.wa[a][:, None] * sp.wa[A][None, :]
                    for g in range(NE):
                        for G in range(NE):
                            if model.is_mono:
                                if g != G:
                                    continue
                                pt = self._phi(g, a, x, sp.ref_xi, sp.ref_eta, sp.energy_tau)
                                pr = self._phi(g, A, x, sp.ref_xi, sp.ref_eta, sp.energy_tau)
                                ker = model.shape(cos) * wq
                                blk = np.einsum("e,qQ,p,eqpi,eQpj->ij", sp.wE[g], ker, rho, pt, pr)
                            else:
                                if G > g:
                                    continue
                                blk = self._compton_block(x, a, A, g, G, cos, wq, rho)
                            Mat[self._index(g, a, x), self._index(G, A, x)] += blk
        return Mat

    def _compton_block(self, x, a, A, g, G, cos, wq, rho):
        sp = self.sp
        model = sp.model
        lo, hi = sp.mesh.energy.groups[g]
        glo, ghi = sp.mesh.energy.groups[G]
        npair = 2 * sp.n_quad[3] + 2
        e_in, e_out, w = compton_pair_nodes(cos, (glo, ghi), (lo, hi), npair, model.compton.mec2)
        kn = model.kernel(cos[..., None], e_in, e_out) / model.density(0.0, 0.0) * w
        Vout = legendre_table(sp.r, 2 * (e_out - lo) / (hi - lo) - 1)[0]
        Vin = legendre_table(sp.r, 2 * (e_in - glo) / (ghi - glo) - 1)[0]
        shape = e_in.shape + (sp.Vx.shape[0], sp.n_loc)
        pt = np.einsum("qQnk,qj,pi->qQnpkji", Vout, sp.Va, sp.Vx).reshape(shape) @ sp.C[g, a, x]
        pr = np.einsum("qQnk,Qj,pi->qQnpkji", Vin, sp.Va, sp.Vx).reshape(shape) @ sp.C[G, A, x]
        return np.einsum("qQn,p,qQnpi,qQnpj->ij", wq[..., None] * kn, rho, pt, pr)
