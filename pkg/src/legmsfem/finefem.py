"""P1 finite elements on the shared fine mesh.

Stiffness and load assembly against an SPD coefficient field, Dirichlet
elimination with lifting, a deterministic Jacobi-preconditioned CG, and the
energies everything downstream is phrased in.  Coefficient-weighted integrals
use a composite rule over the fine triangles: the coefficient at each
triangle's centroid by default, optionally the 3-point edge-midpoint rule
(quad_order=3).  Energies use the same rule as assembly, so the Galerkin
identity energy(u) = -1/2 rhs.u holds at solver accuracy.

Geometry and eliminated stiffness blocks are cached per patch: every local
solve on an element reuses one factor-free CSR pair (free-free, free-fixed),
so repeated solves with different boundary data only rebuild the right-hand
side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class SolverDivergenceError(RuntimeError):
    """CG failed to reach the requested residual within the iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# coefficient and right-hand-side fields

@dataclass(frozen=True)
class CoefficientField:
    """SPD diffusion coefficient A(x), evaluated pointwise as a 2x2 matrix."""

    name: str
    alpha_min: float
    alpha_max: float
    fn: Callable[[np.ndarray], np.ndarray]

    def matrix_at(self, points: np.ndarray) -> np.ndarray:
        """A at each row of points, shape (n, 2, 2)."""
        return self.fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def matrix(self, x: float, y: float) -> np.ndarray:
        return self.matrix_at(np.array([[x, y]]))[0]


def scalar_field(name: str, a, alpha_min: float, alpha_max: float) -> CoefficientField:
    """Coefficient a(x,y)*I from a vectorized scalar function."""

    def fn(pts):
        v = np.asarray(a(pts[:, 0], pts[:, 1]), dtype=float)
        out = np.zeros((len(pts), 2, 2))
        out[:, 0, 0] = v
        out[:, 1, 1] = v
        return out

    return CoefficientField(name, alpha_min, alpha_max, fn)


def identity_field() -> CoefficientField:
    return scalar_field("identity", lambda x, y: np.ones_like(x), 1.0, 1.0)


def periodic_benchmark(eps: float) -> CoefficientField:
    """The oscillating scalar coefficient a(x/eps, y/eps)*I with
    a(x,y) = (2+1.8 sin 2pi x)/(2+1.8 cos 2pi y) + (2+sin 2pi y)/(2+1.8 sin 2pi x).

    The scalar factor ranges over [1.248, 19.53] (sampled on a 4001^2 grid of
    the periodic cell); declared bounds pad that slightly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def a(x, y):
        X, Y = 2 * np.pi * x / eps, 2 * np.pi * y / eps
        return ((2 + 1.8 * np.sin(X)) / (2 + 1.8 * np.cos(Y))
                + (2 + np.sin(Y)) / (2 + 1.8 * np.sin(X)))

    return scalar_field(f"periodic_benchmark(eps={eps:.12g})", a, 1.2, 20.0)


@dataclass(frozen=True)
class RhsField:
    """Scalar right-hand side with an optional analytic gradient (used only
    for Sobolev norms of f in the estimator)."""

    name: str
    fn: Callable
    grad: Callable | None = None

    def __call__(self, x, y):
        return self.fn(x, y)


def constant_rhs(value: float) -> RhsField:
    v = float(value)
    return RhsField(f"constant({v:.12g})",
                    lambda x, y: np.full_like(np.asarray(x, dtype=float), v),
                    lambda x, y: (np.zeros_like(x), np.zeros_like(x)))


def gaussian_rhs() -> RhsField:
    """f(x,y) = -10 exp(-80((x-1/2)^2 + (y-1/2)^2))."""

    def f(x, y):
        return -10.0 * np.exp(-80.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))

    def g(x, y):
        v = f(x, y)
        return (-160.0 * (x - 0.5) * v, -160.0 * (y - 0.5) * v)

    return RhsField("gaussian_benchmark", f, g)


# ---------------------------------------------------------------------------
# P1 geometry over a triangle subset

class TriGeometry:
    """P1 data for a set of fine triangles: a patch of one coarse element or
    the whole fine mesh.  Vertex indexing is local; vids maps back to global
    fine vertex ids."""

    def __init__(self, points: np.ndarray, tris: np.ndarray, vids: np.ndarray,
                 boundary_local: np.ndarray, label: str):
        self.points = points
        self.tris = tris
        self.vids = vids
        self.boundary_local = boundary_local
        self.label = label
        p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
        det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
               - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
        if np.any(det <= 0):
            raise ValueError(f"{label}: degenerate or misoriented triangle")
        self.areas = 0.5 * det
        self.centroids = (p0 + p1 + p2) / 3.0
        g = np.empty((len(tris), 3, 2))
        g[:, 0, 0] = (p1[:, 1] - p2[:, 1]) / det
        g[:, 0, 1] = (p2[:, 0] - p1[:, 0]) / det
        g[:, 1, 0] = (p2[:, 1] - p0[:, 1]) / det
        g[:, 1, 1] = (p0[:, 0] - p2[:, 0]) / det
        g[:, 2, 0] = (p0[:, 1] - p1[:, 1]) / det
        g[:, 2, 1] = (p1[:, 0] - p0[:, 0]) / det
        self.grads = g
        self._quad: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._stiff: dict[tuple[str, int], tuple] = {}

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def quad_points(self, order: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Composite quadrature: (points, weights) with sum(weights) = area."""
        try:
            return self._quad[order]
        except KeyError:
            pass
        if order == 1:
            out = (self.centroids, self.areas)
        elif order == 3:
            p = self.points[self.tris]  # (nt, 3, 2)
            mids = np.concatenate([(p[:, 1] + p[:, 2]) / 2,
                                   (p[:, 0] + p[:, 2]) / 2,
                                   (p[:, 0] + p[:, 1]) / 2])
            out = (mids, np.tile(self.areas / 3.0, 3))
        else:
            raise ValueError("quad_order must be 1 or 3")
        self._quad[order] = out
        return out

    def coefficient_at_triangles(self, A: CoefficientField, order: int = 1) -> np.ndarray:
        """Per-triangle coefficient matrix for the composite rule (the mean
        of the point values for the 3-point rule)."""
        if order == 1:
            return A.matrix_at(self.centroids)
        pts, _ = self.quad_points(3)
        vals = A.matrix_at(pts)
        nt = len(self.tris)
        return (vals[:nt] + vals[nt:2 * nt] + vals[2 * nt:]) / 3.0

    def _eliminated(self, A: CoefficientField, order: int):
        """Cached (K_ff, K_fc, free_loc, fixed_loc, diag) for this patch."""
        key = (A.name, order)
        try:
            return self._stiff[key]
        except KeyError:
            pass
        Abar = self.coefficient_at_triangles(A, order)
        Kt = np.einsum("tid,tde,tje->tij", self.grads,
                       self.areas[:, None, None] * Abar, self.grads)
        Kt = 0.5 * (Kt + Kt.transpose(0, 2, 1))
        rows = np.repeat(self.tris, 3, axis=1).ravel()
        cols = np.tile(self.tris, (1, 3)).ravel()
        n = self.n_vertices
        K = sp.coo_matrix((Kt.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        # Mirror through the transpose so symmetry is exact by construction.
        K = (K + K.T) * 0.5
        fixed = self.boundary_local
        mask = np.ones(n, dtype=bool)
        mask[fixed] = False
        free = np.flatnonzero(mask)
        K_ff = K[free][:, free].tocsr()
        K_fc = K[free][:, fixed].tocsr()
        out = (K_ff, K_fc, free, fixed, K_ff.diagonal())
        self._stiff[key] = out
        return out


def global_geometry(fine) -> TriGeometry:
    try:
        return fine._geom_cache["global"]
    except KeyError:
        pass
    n = fine.n_vertices
    geom = TriGeometry(fine.vertices, fine.triangles, np.arange(n),
                       fine.boundary_vertex_ids(), "global fine mesh")
    fine._geom_cache["global"] = geom
    return geom


def element_geometry(fine, elem_id: int) -> TriGeometry:
    try:
        return fine._geom_cache[elem_id]
    except KeyError:
        pass
    vids = fine.element_vertex_ids(elem_id)
    tris = np.searchsorted(vids, fine.triangles[fine.element_triangle_ids(elem_id)])
    bnd = np.searchsorted(vids, fine.element_boundary_vertex_ids(elem_id))
    geom = TriGeometry(fine.vertices[vids], tris, vids, bnd,
                       f"element {elem_id} patch")
    fine._geom_cache[elem_id] = geom
    return geom


# ---------------------------------------------------------------------------
# assembly, solve, energies

@dataclass
class FineFunction:
    """Nodal values on a TriGeometry (a patch or the global mesh)."""

    geom: TriGeometry
    values: np.ndarray
    cg_iters: int = 0


@dataclass
class SparseSpdSystem:
    """Eliminated SPD system: free-DOF matrix, lifted right-hand side, and
    the template carrying the Dirichlet values."""

    K: sp.csr_matrix
    rhs: np.ndarray
    free_loc: np.ndarray
    values0: np.ndarray
    geom: TriGeometry
    diag: np.ndarray


def load_vector(geom: TriGeometry, f, quad_order: int = 1) -> np.ndarray:
    """P1 load vector of f by the composite rule, full local length."""
    b = np.zeros(geom.n_vertices)
    pts, w = geom.quad_points(quad_order)
    fv = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
    nt = len(geom.tris)
    if quad_order == 1:
        contrib = w * fv / 3.0
        for i in range(3):
            np.add.at(b, geom.tris[:, i], contrib)
    else:
        # Midpoint opposite vertex i carries hat values (0, 1/2, 1/2).
        for block in range(3):
            fw = w[block * nt:(block + 1) * nt] * fv[block * nt:(block + 1) * nt]
            for i in range(3):
                if i != block:
                    np.add.at(b, geom.tris[:, i], fw / 2.0)
    return b


def assemble(geom: TriGeometry, A: CoefficientField, f=None,
             dirichlet=0.0, quad_order: int = 1) -> SparseSpdSystem:
    """Assemble the Dirichlet-eliminated system on a patch or the global mesh.

    dirichlet is either one value for the whole patch boundary or a map
    {global fine vertex id: value} that must cover exactly the boundary.
    """
    K_ff, K_fc, free, fixed, diag = geom._eliminated(A, quad_order)
    if isinstance(dirichlet, dict):
        fixed_gids = geom.vids[fixed]
        missing = set(map(int, fixed_gids)) - set(dirichlet)
        if missing:
            raise ValueError(
                f"{geom.label}: no Dirichlet data for boundary vertices "
                f"{sorted(missing)[:5]}{'...' if len(missing) > 5 else ''}")
        unknown = set(dirichlet) - set(map(int, fixed_gids))
        if unknown:
            raise ValueError(
                f"{geom.label}: Dirichlet data for non-boundary vertices "
                f"{sorted(unknown)[:5]}")
        xc = np.array([dirichlet[int(g)] for g in fixed_gids])
    else:
        xc = np.full(len(fixed), float(dirichlet))
    b = load_vector(geom, f, quad_order) if f is not None else np.zeros(geom.n_vertices)
    rhs = b[free]
    if len(fixed) and np.any(xc != 0.0):
        rhs = rhs - K_fc @ xc
    values0 = np.zeros(geom.n_vertices)
    values0[fixed] = xc
    return SparseSpdSystem(K_ff, rhs, free, values0, geom, diag)


def pcg(K, b: np.ndarray, rel_tol: float, diag: np.ndarray | None = None,
        cap: int | None = None) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients, deterministic.

    Stops at ||r|| <= rel_tol*||b||; raises SolverDivergenceError past the
    iteration cap (default 50*sqrt(n))."""
    n = K.shape[0]
    if n == 0:
        return np.zeros(0), 0
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), 0
    if cap is None:
        cap = int(math.ceil(50.0 * math.sqrt(n)))
    dinv = 1.0 / (K.diagonal() if diag is None else diag)
    x = np.zeros(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, cap + 1):
        Kp = K @ p
        alpha = rz / float(p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        res = np.linalg.norm(r)
        if res <= rel_tol * nb:
            return x, it
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverDivergenceError(
        f"CG did not reach {rel_tol:g} within {cap} iterations "
        f"(relative residual {res / nb:.3e})", res / nb)


def solve_spd(system: SparseSpdSystem, rel_tol: float = 1e-12) -> FineFunction:
    """Solve the eliminated system and return the full nodal field."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    x, iters = pcg(system.K, system.rhs, rel_tol, diag=system.diag)
    values = system.values0.copy()
    values[system.free_loc] = x
    return FineFunction(system.geom, values, iters)


def energy_inner_matrix(V: np.ndarray, geom: TriGeometry, A: CoefficientField,
                        W: np.ndarray | None = None, quad_order: int = 1
                        ) -> np.ndarray:
    """Gram matrix a(V_i, W_j) of nodal-value rows over one geometry.

    This is the single code path for coefficient-weighted inner products:
    scalar energies, coarse-system blocks and localized errors all call it.
    """
    V = np.atleast_2d(V)
    Abar = geom.coefficient_at_triangles(A, quad_order)
    AW = geom.areas[:, None, None] * Abar
    gV = np.einsum("bti,tid->btd", V[:, geom.tris], geom.grads)
    if W is None:
        gW = gV
    else:
        W = np.atleast_2d(W)
        gW = np.einsum("bti,tid->btd", W[:, geom.tris], geom.grads)
    M = np.einsum("btd,tde,cte->bc", gV, AW, gW)
    if W is None:
        M = 0.5 * (M + M.T)
    return M


def energy_inner(v: FineFunction, w: FineFunction, A: CoefficientField,
                 quad_order: int = 1) -> float:
    """a(v, w) = integral of (grad v)^T A grad w."""
    if v.geom is not w.geom:
        raise ValueError("energy_inner: functions live on different meshes "
                         f"({v.geom.label} vs {w.geom.label})")
    return float(energy_inner_matrix(v.values[None, :], v.geom, A,
                                     W=w.values[None, :], quad_order=quad_order)[0, 0])


def energy(v: FineFunction, A: CoefficientField, f=None,
           quad_order: int = 1) -> float:
    """E(v) = 1/2 a(v,v) - integral of f v, same quadrature as assemble."""
    e = 0.5 * float(energy_inner_matrix(v.values[None, :], v.geom, A,
                                        quad_order=quad_order)[0, 0])
    if f is not None:
        e -= float(load_vector(v.geom, f, quad_order) @ v.values)
    return e
