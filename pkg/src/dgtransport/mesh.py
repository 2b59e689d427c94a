"""Spatial, angular and energetic meshes and their product.

The spatial mesh is a uniform Cartesian grid on (0, L)^2.  The angular mesh is
the 2D "cube-sphere": the boundary of [-1, 1]^2 is split into equal parameter
intervals along each edge and radially projected onto the unit circle.  The
energy mesh is a set of groups ordered from the highest energy downwards.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfDomain

# side ids used for neighbour tables and faces
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
SIDE_NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])


def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    if n < 1:
        raise InvalidArgument("need at least one quadrature point")
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class Face:
    elements: tuple  # (owner, neighbour); neighbour is -1 on the boundary
    normal: tuple    # outward unit normal of the owner
    start: tuple
    end: tuple

    @property
    def is_boundary(self):
        return self.elements[1] < 0

    @property
    def extent(self):
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))


@dataclass(frozen=True)
class SpatialMesh:
    length: float
    n_per_axis: int
    faces: tuple = field(repr=False, default=())

    @property
    def h(self):
        return self.length / self.n_per_axis

    @property
    def n_elements(self):
        return self.n_per_axis ** 2

    def index(self, ix, iy):
        return iy * self.n_per_axis + ix

    def ij(self, k):
        return k % self.n_per_axis, k // self.n_per_axis

    @property
    def corners(self):
        """Lower-left corner of every element, shape (n_elements, 2)."""
        n = self.n_per_axis
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        return np.stack([ix.ravel() * self.h, iy.ravel() * self.h], axis=1)

    @property
    def areas(self):
        return np.full(self.n_elements, self.h ** 2)

    @property
    def neighbours(self):
        """(n_elements, 4) table of neighbour ids per side, -1 on the boundary."""
        n = self.n_per_axis
        nb = -np.ones((self.n_elements, 4), dtype=int)
        for k in range(self.n_elements):
            ix, iy = self.ij(k)
            if ix > 0:
                nb[k, LEFT] = k - 1
            if ix < n - 1:
                nb[k, RIGHT] = k + 1
            if iy > 0:
                nb[k, BOTTOM] = k - n
            if iy < n - 1:
                nb[k, TOP] = k + n
        return nb

    def interior_faces(self):
        return [f for f in self.faces if not f.is_boundary]

    def boundary_faces(self):
        return [f for f in self.faces if f.is_boundary]

    def locate(self, x, y):
        L = self.length
        if not (0.0 <= x <= L and 0.0 <= y <= L):
            raise OutOfDomain(f"point ({x}, {y}) outside (0, {L})^2")
        n = self.n_per_axis
        ix = min(int(x / self.h), n - 1)
        iy = min(int(y / self.h), n - 1)
        return self.index(ix, iy)


def build_spatial_mesh(length, n_per_axis):
    if not length > 0:
        raise InvalidArgument("domain side must be positive")
    if int(n_per_axis) != n_per_axis or n_per_axis < 1:
        raise InvalidArgument("n_per_axis must be a positive integer")
    n = int(n_per_axis)
    h = length / n
    faces = []
    idx = lambda i, j: j * n + i
    for j in range(n):
        for i in range(n):
            k = idx(i, j)
            x0, y0 = i * h, j * h
            if i < n - 1:
                faces.append(Face((k, idx(i + 1, j)), (1.0, 0.0), (x0 + h, y0), (x0 + h, y0 + h)))
            if j < n - 1:
                faces.append(Face((k, idx(i, j + 1)), (0.0, 1.0), (x0, y0 + h), (x0 + h, y0 + h)))
            if i == 0:
                faces.append(Face((k, -1), (-1.0, 0.0), (x0, y0), (x0, y0 + h)))
            if i == n - 1:
                faces.append(Face((k, -1), (1.0, 0.0), (x0 + h, y0), (x0 + h, y0 + h)))
            if j == 0:
                faces.append(Face((k, -1), (0.0, -1.0), (x0, y0), (x0 + h, y0)))
            if j == n - 1:
                faces.append(Face((k, -1), (0.0, 1.0), (x0, y0 + h), (x0 + h, y0 + h)))
    return SpatialMesh(float(length), n, tuple(faces))


# -- angular mesh ------------------------------------------------------------

def square_point(edge, t):
    """Point on the boundary of [-1,1]^2 for parameter t in [-1,1] on an edge.

    Edges are numbered counter-clockwise starting from x = 1.
    """
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    if edge == 0:
        return np.stack([one, t], axis=-1)
    if edge == 1:
        return np.stack([-t, one], axis=-1)
    if edge == 2:
        return np.stack([-one, -t], axis=-1)
    if edge == 3:
        return np.stack([t, -one], axis=-1)
    raise InvalidArgument(f"bad edge id {edge}")


def project_to_circle(p):
    """Radial projection mu = p / |p|."""
    p = np.asarray(p, dtype=float)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Arc:
    edge: int
    t0: float
    t1: float

    @property
    def measure(self):
        return float(np.arctan(self.t1) - np.arctan(self.t0))

    @property
    def midpoint(self):
        return project_to_circle(square_point(self.edge, 0.5 * (self.t0 + self.t1)))

    @property
    def signs(self):
        """Constant sign pattern (sign mu_x, sign mu_y) over the arc."""
        return tuple(int(s) for s in np.sign(self.midpoint))


@dataclass(frozen=True)
class AngularMesh:
    arcs: tuple

    @property
    def n_elements(self):
        return len(self.arcs)

    @property
    def measures(self):
        return np.array([a.measure for a in self.arcs])

    @property
    def signs(self):
        return np.array([a.signs for a in self.arcs], dtype=int)

    def locate(self, mu):
        mu = np.asarray(mu, dtype=float)
        psi = np.arctan2(mu[1], mu[0])
        # shift so edge 0 starts at -pi/4
        psi = (psi + np.pi / 4) % (2 * np.pi) - np.pi / 4
        edge = min(int((psi + np.pi / 4) // (np.pi / 2)), 3)
        t = np.tan(psi - edge * np.pi / 2)
        m = self.n_elements // 4
        i = min(max(int((t + 1.0) / 2.0 * m), 0), m - 1)
        return edge * m + i, float(t)


def build_angular_mesh(n_elements):
    if int(n_elements) != n_elements or n_elements < 8 or n_elements % 8:
        raise InvalidArgument("number of angular elements must be a positive multiple of 8")
    m = int(n_elements) // 4
    cuts = np.linspace(-1.0, 1.0, m + 1)
    arcs = tuple(Arc(e, float(cuts[i]), float(cuts[i + 1])) for e in range(4) for i in range(m))
    return AngularMesh(arcs)


def angular_quadrature(arc, n_points):
    """Gauss rule on one curved arc.

    Nodes are Gauss-Legendre in the edge parameter; the weights carry the
    Jacobian dpsi/dt = 1 / (1 + t^2) of the radial projection and are then
    rescaled so they sum to the arc length exactly.  Returns (directions (n, 2), weights (n,), tau (n,)) where
    tau are the reference nodes in [-1, 1].
    """
    tau, w = gauss_legendre(n_points)
    half = 0.5 * (arc.t1 - arc.t0)
    t = arc.t0 + (tau + 1.0) * half
    weights = w * half / (1.0 + t ** 2)
    weights *= arc.measure / weights.sum()
    return project_to_circle(square_point(arc.edge, t)), weights, tau


# -- energy mesh -------------------------------------------------------------

@dataclass(frozen=True)
class EnergyMesh:
    edges: tuple  # strictly decreasing, E_0 = E_max

    @property
    def n_groups(self):
        return len(self.edges) - 1

    @property
    def e_max(self):
        return self.edges[0]

    @property
    def e_min(self):
        return self.edges[-1]

    @property
    def groups(self):
        """(lower, upper) bounds of each group, highest energy first."""
        return [(self.edges[g + 1], self.edges[g]) for g in range(self.n_groups)]

    @property
    def widths(self):
        return -np.diff(np.asarray(self.edges))

    def locate(self, E):
        if not (self.e_min <= E <= self.e_max):
            raise OutOfDomain(f"energy {E} outside [{self.e_min}, {self.e_max}]")
        for g, (lo, hi) in enumerate(self.groups):
            if lo <= E <= hi:
                return g
        raise OutOfDomain(f"energy {E} not found")  # pragma: no cover


def build_energy_mesh(e_min, e_max, n_groups):
    if not (0.0 <= e_min < e_max):
        raise InvalidArgument("need 0 <= E_min < E_max")
    if int(n_groups) != n_groups or n_groups < 1:
        raise InvalidArgument("need at least one energy group")
    edges = np.linspace(e_max, e_min, int(n_groups) + 1)
    edges[0], edges[-1] = e_max, e_min
    return EnergyMesh(tuple(float(e) for e in edges))


@dataclass(frozen=True)
class ProductMesh:
    spatial: SpatialMesh
    angular: AngularMesh
    energy: EnergyMesh

    @property
    def n_elements(self):
        return self.spatial.n_elements * self.angular.n_elements * self.energy.n_groups

    def elements(self):
        """Iterate (group, arc, spatial element) in storage order."""
        for g in range(self.energy.n_groups):
            for a in range(self.angular.n_elements):
                for k in range(self.spatial.n_elements):
                    yield g, a, k


def build_product_mesh(length, n_per_axis, n_angular, e_min=0.0, e_max=1.0, n_groups=1):
    return ProductMesh(build_spatial_mesh(length, n_per_axis),
                       build_angular_mesh(n_angular),
                       build_energy_mesh(e_min, e_max, n_groups))
