"""Legendre polynomials, the internal edge basis, Gauss-Lobatto rules, and
L2 projections on elements and edges.

Everything here lives on reference coordinates: [-1,1] for edges, the unit
square or unit right triangle for element interiors.  The internal functions
eta_k = (L_k - L_{k-2})/sqrt(2(2k-1)) vanish at both endpoints and are
orthonormal in the H^1_0(-1,1) inner product since eta_k' is a multiple of
L_{k-1}; any other normalization would give the same Galerkin solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def legendre_eval(k: int, x) -> np.ndarray:
    """L_k(x) by the three-term recursion (k+1)L_{k+1} = (2k+1)x L_k - k L_{k-1}."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.ones_like(x)
    prev, cur = np.ones_like(x), x.copy()
    for j in range(1, k):
        prev, cur = cur, ((2 * j + 1) * x * cur - j * prev) / (j + 1)
    return cur


def legendre_deriv(k: int, x) -> np.ndarray:
    """L_k'(x), from (1-x^2) L_k' = k (L_{k-1} - x L_k) with endpoint limits."""
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.zeros_like(x)
    Lk, Lkm1 = legendre_eval(k, x), legendre_eval(k - 1, x)
    out = np.empty_like(x)
    interior = np.abs(x) < 1.0
    xi = x[interior]
    out[interior] = k * (Lkm1[interior] - xi * Lk[interior]) / (1.0 - xi * xi)
    # L_k'(+-1) = (+-1)^(k+1) k(k+1)/2
    edge = ~interior
    out[edge] = np.sign(x[edge]) ** (k + 1) * k * (k + 1) / 2.0
    return out


def internal_basis_eval(k: int, x) -> np.ndarray:
    """eta_k(x) = (L_k(x) - L_{k-2}(x)) / sqrt(2(2k-1)), k >= 2.

    Vanishes exactly at +-1 (the recursion gives L_k(+-1) = (+-1)^k without
    rounding).  eta_k' = sqrt((2k-1)/2) L_{k-1}, so the family is orthonormal
    in H^1_0(-1,1).
    """
    if k < 2:
        raise ValueError("internal functions start at degree 2")
    c = 1.0 / math.sqrt(2 * (2 * k - 1))
    return c * (legendre_eval(k, x) - legendre_eval(k - 2, x))


def internal_basis_deriv(k: int, x) -> np.ndarray:
    if k < 2:
        raise ValueError("internal functions start at degree 2")
    return math.sqrt((2 * k - 1) / 2.0) * legendre_eval(k - 1, x)


@dataclass(frozen=True)
class Polynomial1D:
    """Polynomial on [-1,1] stored by Legendre coefficients."""

    coeffs: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, c in enumerate(self.coeffs):
            if c != 0.0:
                out += c * legendre_eval(k, x)
        return out

    def deriv(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, c in enumerate(self.coeffs):
            if c != 0.0 and k > 0:
                out += c * legendre_deriv(k, x)
        return out


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def gauss_lobatto(n: int) -> QuadratureRule:
    """Gauss-Lobatto rule with n points on [-1,1], exact to degree 2n-3.

    Nodes are +-1 plus the roots of L'_{n-1}, found by Newton iteration from
    Chebyshev points to 1e-14; weights are 2/(n(n-1) L_{n-1}(x_i)^2).  Nodes
    come out exactly symmetric (computed on a half interval and mirrored).
    """
    if n < 2:
        raise ValueError("need at least the two endpoints")
    m = n - 1
    # The n-2 interior nodes are the symmetric roots of L'_m; Newton refines
    # the strictly negative half, the rest is the mirror plus 0 for odd n.
    neg = np.array([-math.cos(math.pi * i / m) for i in range(1, m) if 2 * i < m])
    for _ in range(100):
        L = legendre_eval(m, neg)
        dL = legendre_deriv(m, neg)
        # Newton on g = L'_m: g' = (2x g - m(m+1) L_m)/(1-x^2)
        step = dL * (1 - neg * neg) / (2 * neg * dL - m * (m + 1) * L)
        neg -= step
        if np.all(np.abs(step) <= 1e-14):
            break
    mid = [0.0] if n % 2 == 1 else []
    nodes = np.concatenate([[-1.0], neg, mid, -neg[::-1], [1.0]])
    weights = 2.0 / (n * m * legendre_eval(m, nodes) ** 2)
    return QuadratureRule(nodes, weights)


def _lagrange_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the Lagrange basis on `nodes` at points x, shape (len(x), n)."""
    n = len(nodes)
    out = np.ones((len(x), n))
    for i in range(n):
        for j in range(n):
            if j != i:
                out[:, i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def _tri_monomial_gram(M: int, pairs: list[tuple[int, int]]) -> np.ndarray:
    """Exact Gram of monomials x^p y^q on the unit right triangle:
    integral of x^a y^b = a! b! / (a+b+2)!."""
    G = np.empty((len(pairs), len(pairs)))
    for i, (p, q) in enumerate(pairs):
        for j, (r, s) in enumerate(pairs):
            a, b = p + r, q + s
            G[i, j] = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
    return G

# Raw monomial Grams are Hilbert-like; the exact Cholesky below keeps the
# orthonormalized basis well conditioned for the small M used here (cond of
# the raw Gram stays under 1e12 for M <= 8, checked in tests).
MAX_TRIANGLE_DEGREE = 8


class BulkPolyBasis:
    """Bubble right-hand-side basis {P_i} on the reference element.

    Quads: tensor products of 1D Lagrange polynomials at the (M+1)-point
    Gauss-Lobatto nodes, spanning partial degree <= M, dimension (M+1)^2.
    Triangles: monomials of total degree <= M orthonormalized on the unit
    right triangle through the exact Gram's Cholesky factor, dimension
    (M+1)(M+2)/2.
    """

    def __init__(self, kind: str, M: int):
        if M < 0:
            raise ValueError("degree must be nonnegative")
        if kind not in ("quad", "triangle"):
            raise ValueError(f"unknown element kind {kind!r}")
        self.kind = kind
        self.M = int(M)
        if kind == "quad":
            self.dim = (M + 1) ** 2
            # M+1 Lagrange nodes per direction; M=0 degenerates to the constant.
            self._nodes = gauss_lobatto(M + 1).nodes if M >= 1 else np.array([0.0])
        else:
            if M > MAX_TRIANGLE_DEGREE:
                raise ValueError(f"triangle bulk degree capped at {MAX_TRIANGLE_DEGREE}")
            self.dim = (M + 1) * (M + 2) // 2
            self._pairs = [(d - q, q) for d in range(M + 1) for q in range(d + 1)]
            G = _tri_monomial_gram(M, self._pairs)
            self._C = np.linalg.inv(np.linalg.cholesky(G))

    def eval_ref(self, ref_points: np.ndarray) -> np.ndarray:
        """Basis values at reference coordinates, shape (npoints, dim)."""
        pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
        if self.kind == "quad":
            # Reference square is [0,1]^2; the 1D nodes live on [-1,1].
            lx = _lagrange_matrix(self._nodes, 2.0 * pts[:, 0] - 1.0)
            ly = _lagrange_matrix(self._nodes, 2.0 * pts[:, 1] - 1.0)
            return np.einsum("pa,pb->pba", lx, ly).reshape(len(pts), self.dim)
        mono = np.column_stack([pts[:, 0] ** p * pts[:, 1] ** q
                                for p, q in self._pairs])
        return mono @ self._C.T


def l2_project_element(f, element, geom, M: int, quad_order: int = 1
                       ) -> tuple[np.ndarray, BulkPolyBasis]:
    """L2 projection of f onto the degree-M bulk space of one element.

    Solves the Gram system G c = b with both sides computed by the composite
    fine-patch quadrature in `geom` (a finefem.TriGeometry restricted to the
    element), so the residual f - sum c_i P_i is orthogonal to the basis in
    the discrete inner product.  Returns (coefficients, basis).
    """
    basis = BulkPolyBasis(element.kind, M)
    pts, w = geom.quad_points(quad_order)
    P = basis.eval_ref(element.to_ref(pts))
    fv = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
    G = P.T @ (w[:, None] * P)
    b = P.T @ (w * fv)
    try:
        c = np.linalg.solve(G, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular bulk Gram matrix on element {element.id}") from exc
    return c, basis


def l2_project_edge_zero(g, N: int, n_quad: int = 64) -> np.ndarray:
    """L2(-1,1) projection of a trace onto span{eta_2..eta_N}.

    g is a callable of the edge coordinate in [-1,1].  Returns the N-1
    coefficients (empty for N = 1, where the internal space is empty).  A
    dense Gauss-Legendre rule stands in for exact integration.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if N == 1:
        return np.zeros(0)
    x, w = np.polynomial.legendre.leggauss(max(n_quad, 2 * N))
    E = np.column_stack([internal_basis_eval(k, x) for k in range(2, N + 1)])
    G = E.T @ (w[:, None] * E)
    b = E.T @ (w * np.asarray(g(x), dtype=float))
    return np.linalg.solve(G, b)
