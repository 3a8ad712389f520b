"""Offline enrichment basis: coefficient-adapted nodal functions, edge
enrichments with internal Legendre traces, and per-element bubbles.

Every basis function is a collection of fine nodal fields, one per support
element, living on the shared fine mesh restricted to that element.  Traces
on coarse edges are sampled at the fine vertices of the edge chain, always
through the edge's own orientation (v0 to v1), so the two adjacent patches
impose bit-identical Dirichlet data and reconstructions glue exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import finefem, polybasis
from .mesh import CoarseMesh, DegreeAssignment, FineMesh


@dataclass(frozen=True)
class BasisFunction:
    """One enrichment function as per-element fine nodal fields.

    kind/key: ("nodal", (vertex,)), ("edge", (edge_id, k)) or
    ("bubble", (elem_id, i)) with i starting at 1.
    """

    kind: str
    key: tuple
    support: tuple[int, ...]
    values: dict[int, np.ndarray]
    trace: str


def _edge_parameters(n: int) -> np.ndarray:
    # t = 0..1 along the chain; endpoints exact.
    return np.arange(n + 1) / n


def _hat_dirichlet(coarse: CoarseMesh, fine: FineMesh, elem_id: int,
                   vertex: int) -> dict[int, float]:
    """Trace of the hat at `vertex` on the element boundary: linear on each
    coarse edge, built edge-canonically so neighbours agree bitwise."""
    d: dict[int, float] = {}
    t = _edge_parameters(fine.n_sub)
    for eid in coarse.element_edges[elem_id]:
        e = coarse.edges[eid]
        h0 = 1.0 if e.v0 == vertex else 0.0
        h1 = 1.0 if e.v1 == vertex else 0.0
        vals = h0 * (1.0 - t) + h1 * t
        for g, val in zip(fine.edge_vertex_chain(eid), vals):
            d[int(g)] = float(val)
    return d


def _enrichment_dirichlet(coarse: CoarseMesh, fine: FineMesh, elem_id: int,
                          edge_id: int, k: int) -> dict[int, float]:
    """eta_k along edge_id (in its own orientation), zero on the rest of the
    element boundary.  eta_k(+-1) = 0 exactly, so corners are consistent."""
    d: dict[int, float] = {}
    t = _edge_parameters(fine.n_sub)
    for eid in coarse.element_edges[elem_id]:
        chain = fine.edge_vertex_chain(eid)
        if eid == edge_id:
            vals = polybasis.internal_basis_eval(k, -1.0 + 2.0 * t)
        else:
            vals = np.zeros(len(chain))
        for g, val in zip(chain, vals):
            d[int(g)] = float(val)
    return d


def compute_nodal(vertex: int, coarse: CoarseMesh, fine: FineMesh,
                  A: finefem.CoefficientField, rel_tol: float = 1e-12,
                  quad_order: int = 1) -> BasisFunction:
    """Coefficient-adapted nodal function: on each element touching the
    vertex, the homogeneous solve with the hat trace on the boundary."""
    if coarse.boundary_vertex_mask[vertex]:
        raise ValueError(f"vertex {vertex} is on the domain boundary; "
                         "no basis function is attached there")
    support = tuple(sorted(coarse.vertex_elements[vertex]))
    values = {}
    for K in support:
        geom = finefem.element_geometry(fine, K)
        data = _hat_dirichlet(coarse, fine, K, vertex)
        values[K] = finefem.solve_spd(
            finefem.assemble(geom, A, None, data, quad_order), rel_tol).values
    return BasisFunction("nodal", (vertex,), support, values,
                         f"hat at vertex {vertex}")


def compute_edge_enrichment(edge_id: int, k: int, coarse: CoarseMesh,
                            fine: FineMesh, A: finefem.CoefficientField,
                            rel_tol: float = 1e-12, quad_order: int = 1
                            ) -> BasisFunction:
    """Edge enrichment: homogeneous solves on the two elements sharing the
    edge, trace eta_k on the edge and zero elsewhere."""
    e = coarse.edges[edge_id]
    if e.boundary:
        raise ValueError(f"edge {edge_id} is a boundary edge")
    if k < 2:
        raise ValueError("edge enrichment degrees start at 2")
    values = {}
    for K in e.element_ids:
        geom = finefem.element_geometry(fine, K)
        data = _enrichment_dirichlet(coarse, fine, K, edge_id, k)
        values[K] = finefem.solve_spd(
            finefem.assemble(geom, A, None, data, quad_order), rel_tol).values
    return BasisFunction("edge", (edge_id, k), tuple(e.element_ids), values,
                         f"eta_{k} on edge {edge_id}")


def compute_bubble(elem_id: int, i: int, coarse: CoarseMesh, fine: FineMesh,
                   A: finefem.CoefficientField, basis: polybasis.BulkPolyBasis,
                   rel_tol: float = 1e-12, quad_order: int = 1) -> BasisFunction:
    """Bubble enrichment: zero-trace solve on one element with the i-th bulk
    polynomial (mapped from reference coordinates) as right-hand side."""
    if basis.M < 1:
        raise ValueError("bubbles need bulk degree M >= 1")
    if not 1 <= i <= basis.dim:
        raise ValueError(f"bubble index {i} outside 1..{basis.dim}")
    element = coarse.elements[elem_id]

    def rhs(x, y):
        pts = np.column_stack([np.asarray(x, dtype=float).ravel(),
                               np.asarray(y, dtype=float).ravel()])
        return basis.eval_ref(element.to_ref(pts))[:, i - 1]

    geom = finefem.element_geometry(fine, elem_id)
    sol = finefem.solve_spd(
        finefem.assemble(geom, A, rhs, 0.0, quad_order), rel_tol)
    return BasisFunction("bubble", (elem_id, i), (elem_id,),
                         {elem_id: sol.values}, "zero")


def _prewarm(coarse: CoarseMesh, fine: FineMesh, A: finefem.CoefficientField,
             elem_ids, quad_order: int) -> None:
    # Build shared caches sequentially before any threads touch them.
    for K in elem_ids:
        geom = finefem.element_geometry(fine, K)
        geom._eliminated(A, quad_order)
        geom.quad_points(quad_order)


def compute_all(coarse: CoarseMesh, fine: FineMesh, A: finefem.CoefficientField,
                degrees: DegreeAssignment, rel_tol: float = 1e-12,
                quad_order: int = 1, workers: int = 1,
                which: str = "all") -> list[BasisFunction]:
    """Full enrichment catalog in deterministic order: nodal functions by
    vertex id, edge enrichments by (edge id, k), bubbles by (element id, i).

    which selects "interface", "bubble" or "all" (sweeps reuse the interface
    part across bubble degrees).  Local solves are independent; with
    workers > 1 they run on a thread pool and are collected in order.
    """
    degrees.validate(coarse)
    tasks = []
    if which in ("all", "interface"):
        for v in coarse.interior_vertex_ids:
            tasks.append(lambda v=int(v): compute_nodal(
                v, coarse, fine, A, rel_tol, quad_order))
        for eid in coarse.interior_edge_ids:
            for k in range(2, degrees.N[int(eid)] + 1):
                tasks.append(lambda e=int(eid), k=k: compute_edge_enrichment(
                    e, k, coarse, fine, A, rel_tol, quad_order))
    if which in ("all", "bubble"):
        bases: dict[int, polybasis.BulkPolyBasis] = {}
        for el in coarse.elements:
            M = degrees.M[el.id]
            if M >= 1:
                basis = bases.setdefault(M, polybasis.BulkPolyBasis(coarse.kind, M))
                for i in range(1, basis.dim + 1):
                    tasks.append(lambda K=el.id, i=i, b=basis: compute_bubble(
                        K, i, coarse, fine, A, b, rel_tol, quad_order))
    if workers > 1:
        _prewarm(coarse, fine, A, range(len(coarse.elements)), quad_order)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda fn: fn(), tasks))
    return [fn() for fn in tasks]


def dump_points(bf: BasisFunction, fine: FineMesh) -> np.ndarray:
    """(x, y, value) rows over the support, one row per fine vertex."""
    rows: dict[int, tuple[float, float, float]] = {}
    for K in bf.support:
        geom = finefem.element_geometry(fine, K)
        for g, p, val in zip(geom.vids, geom.points, bf.values[K]):
            rows[int(g)] = (float(p[0]), float(p[1]), float(val))
    return np.array([rows[g] for g in sorted(rows)])
