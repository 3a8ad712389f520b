"""Experiment drivers: single solves, parameter sweeps, per-edge error
maps, and basis dumps, all emitting deterministic CSV.

Configs are JSON with a versioned schema.  Rows carry 17 significant
digits so 64-bit floats round-trip; runtime_ms is written as 0 unless
timing is requested, keeping repeated runs byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import errors, estimator, finefem, globalsolve, localbasis, mesh

CSV_HEADER = "eps,H,kind,N,M,dofs,E_rel,E_rel_gamma,E_post,runtime_ms,cg_iters"
ERRMAP_HEADER = "edge_id,x0,y0,x1,y1,local_error,local_estimator,log10_ratio"


class ConfigError(Exception):
    """Invalid configuration; messages carry the offending key path."""


# ---------------------------------------------------------------------------
# Configuration


_SAFE_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "log": np.log,
    "pi": np.pi,
}


def _expression(expr: str, where: str):
    """Compile a scalar expression of x and y over a numeric whitelist."""
    try:
        code = compile(expr, where, "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: bad expression: {exc}") from None
    for name in code.co_names:
        if name not in _SAFE_NAMES and name not in ("x", "y"):
            raise ConfigError(f"{where}: unknown name {name!r} in expression")

    def fn(x, y):
        return np.broadcast_to(
            eval(code, {"__builtins__": {}},
                 {"x": x, "y": y, **_SAFE_NAMES}), np.shape(x)).astype(float)

    return fn


def _check_keys(d: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _degrees_field(raw, where: str, minimum: int):
    if isinstance(raw, bool):
        raise ConfigError(f"{where}: expected integer or table")
    if isinstance(raw, int):
        if raw < minimum:
            raise ConfigError(f"{where}: must be >= {minimum}, got {raw}")
        return raw
    if isinstance(raw, dict):
        _check_keys(raw, {"default", "overrides"}, {"default"}, where)
        default = raw["default"]
        overrides = raw.get("overrides", {})
        if not isinstance(default, int) or default < minimum:
            raise ConfigError(f"{where}.default: must be an integer "
                              f">= {minimum}")
        table = {"default": default, "overrides": {}}
        for k, v in overrides.items():
            try:
                key = int(k)
            except ValueError:
                raise ConfigError(f"{where}.overrides: non-integer id "
                                  f"{k!r}") from None
            if not isinstance(v, int) or v < minimum:
                raise ConfigError(f"{where}.overrides[{k}]: must be an "
                                  f"integer >= {minimum}")
            table["overrides"][key] = v
        return table
    raise ConfigError(f"{where}: expected integer or "
                      "{{default, overrides}} table")


@dataclass
class RunConfig:
    """One experiment: mesh, coefficient, load, degrees, solver knobs."""

    kind: str = "quad"
    nx: int = 8
    ny: int = 8
    n_sub: int = 16
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    coefficient: dict = field(default_factory=lambda: {"type": "identity"})
    rhs: dict = field(default_factory=lambda: {"type": "constant",
                                               "value": -1.0})
    N: int | dict = 1
    M: int | dict = 0
    rel_tol: float = 1e-12
    eta: float = 0.0
    ell: int = 0
    strict: bool = False
    seed: int = 0
    out: str | None = None

    _ALLOWED = {"schema", "kind", "nx", "ny", "n_sub", "domain",
                "coefficient", "rhs", "N", "M", "rel_tol", "eta", "ell",
                "strict", "seed", "out"}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        _check_keys(d, cls._ALLOWED, set(), "config")
        if d.get("schema", 1) != 1:
            raise ConfigError(f"config.schema: unsupported version "
                              f"{d.get('schema')!r}")
        c = cls()
        c.kind = d.get("kind", c.kind)
        if c.kind not in ("quad", "triangle"):
            raise ConfigError(f"config.kind: must be quad or triangle, "
                              f"got {c.kind!r}")
        for key in ("nx", "ny", "n_sub"):
            val = d.get(key, getattr(c, key))
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(f"config.{key}: must be a positive integer")
            setattr(c, key, val)
        dom = d.get("domain", list(c.domain))
        if (not isinstance(dom, (list, tuple)) or len(dom) != 4
                or not all(isinstance(v, (int, float)) for v in dom)):
            raise ConfigError("config.domain: must be [x0, x1, y0, y1]")
        c.domain = tuple(float(v) for v in dom)
        if not (c.domain[0] < c.domain[1] and c.domain[2] < c.domain[3]):
            raise ConfigError("config.domain: must be increasing per axis")
        c.coefficient = dict(d.get("coefficient", c.coefficient))
        c.rhs = dict(d.get("rhs", c.rhs))
        _coefficient_field(c.coefficient)
        _rhs_field(c.rhs)
        c.N = _degrees_field(d.get("N", c.N), "config.N", 1)
        c.M = _degrees_field(d.get("M", c.M), "config.M", 0)
        for key, lo, hi in (("rel_tol", 0.0, 1.0), ("eta", 0.0, 0.5)):
            val = d.get(key, getattr(c, key))
            if not isinstance(val, (int, float)) or not lo <= val < hi:
                raise ConfigError(f"config.{key}: must be a number in "
                                  f"[{lo}, {hi})")
            setattr(c, key, float(val))
        if c.rel_tol == 0.0:
            raise ConfigError("config.rel_tol: must be positive")
        ell = d.get("ell", c.ell)
        if not isinstance(ell, int) or isinstance(ell, bool) or ell < 0:
            raise ConfigError("config.ell: must be a non-negative integer")
        c.ell = ell
        c.strict = bool(d.get("strict", c.strict))
        seed = d.get("seed", c.seed)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("config.seed: must be an integer")
        c.seed = seed
        out = d.get("out", c.out)
        if out is not None and not isinstance(out, str):
            raise ConfigError("config.out: must be a path string")
        c.out = out
        return c

    def to_dict(self) -> dict:
        def deg(v):
            if isinstance(v, dict):
                return {"default": v["default"],
                        "overrides": {str(k): n
                                      for k, n in sorted(v["overrides"].items())}}
            return v
        d = {"schema": 1, "kind": self.kind, "nx": self.nx, "ny": self.ny,
             "n_sub": self.n_sub, "domain": list(self.domain),
             "coefficient": self.coefficient, "rhs": self.rhs,
             "N": deg(self.N), "M": deg(self.M), "rel_tol": self.rel_tol,
             "eta": self.eta, "ell": self.ell, "strict": self.strict,
             "seed": self.seed}
        if self.out is not None:
            d["out"] = self.out
        return d

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: "
                              f"{exc.msg}") from None
        return cls.from_dict(d)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @property
    def eps(self) -> float | None:
        if self.coefficient.get("type") == "periodic_benchmark":
            return float(self.coefficient["eps"])
        return None


def _coefficient_field(spec: dict) -> finefem.CoefficientField:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("config.coefficient: needs a type")
    t = spec["type"]
    if t == "identity":
        _check_keys(spec, {"type"}, {"type"}, "config.coefficient")
        return finefem.identity_field()
    if t == "periodic_benchmark":
        _check_keys(spec, {"type", "eps"}, {"type", "eps"},
                    "config.coefficient")
        eps = spec["eps"]
        if not isinstance(eps, (int, float)) or eps <= 0:
            raise ConfigError("config.coefficient.eps: must be positive")
        return finefem.periodic_benchmark(float(eps))
    if t == "expression":
        _check_keys(spec, {"type", "expr", "alpha_min", "alpha_max"},
                    {"type", "expr", "alpha_min", "alpha_max"},
                    "config.coefficient")
        lo, hi = spec["alpha_min"], spec["alpha_max"]
        if not (isinstance(lo, (int, float)) and isinstance(hi, (int, float))
                and 0 < lo <= hi):
            raise ConfigError("config.coefficient: need 0 < alpha_min "
                              "<= alpha_max")
        fn = _expression(spec["expr"], "config.coefficient.expr")
        return finefem.scalar_field(f"expression({spec['expr']})", fn,
                                    float(lo), float(hi))
    raise ConfigError(f"config.coefficient.type: unknown {t!r}")


def _rhs_field(spec: dict) -> finefem.RhsField:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("config.rhs: needs a type")
    t = spec["type"]
    if t == "constant":
        _check_keys(spec, {"type", "value"}, {"type", "value"}, "config.rhs")
        if not isinstance(spec["value"], (int, float)):
            raise ConfigError("config.rhs.value: must be a number")
        return finefem.constant_rhs(float(spec["value"]))
    if t == "gaussian_benchmark":
        _check_keys(spec, {"type"}, {"type"}, "config.rhs")
        return finefem.gaussian_rhs()
    if t == "expression":
        _check_keys(spec, {"type", "expr"}, {"type", "expr"}, "config.rhs")
        fn = _expression(spec["expr"], "config.rhs.expr")
        return finefem.RhsField(f"expression({spec['expr']})", fn)
    raise ConfigError(f"config.rhs.type: unknown {t!r}")


def _degrees_of(config: RunConfig, coarse: mesh.CoarseMesh
                ) -> mesh.DegreeAssignment:
    n_def = config.N if isinstance(config.N, int) else config.N["default"]
    m_def = config.M if isinstance(config.M, int) else config.M["default"]
    deg = mesh.DegreeAssignment.uniform(coarse, n_def, m_def)
    if isinstance(config.N, dict):
        for k, v in config.N["overrides"].items():
            if k not in deg.N:
                raise ConfigError(f"config.N.overrides: {k} is not an "
                                  "interior edge")
            deg.N[k] = v
    if isinstance(config.M, dict):
        for k, v in config.M["overrides"].items():
            if not 0 <= k < len(coarse.elements):
                raise ConfigError(f"config.M.overrides: {k} is not an "
                                  "element id")
            deg.M[k] = v
    return deg


def _column_degree(raw) -> int:
    if isinstance(raw, int):
        return raw
    return max([raw["default"], *raw["overrides"].values()])


# ---------------------------------------------------------------------------
# Drivers


@dataclass
class Problem:
    """Meshes and fields instantiated from a config."""

    coarse: mesh.CoarseMesh
    fine: mesh.FineMesh
    A: finefem.CoefficientField
    f: finefem.RhsField
    degrees: mesh.DegreeAssignment
    gamma: float


def build_problem(config: RunConfig) -> Problem:
    coarse = mesh.build_coarse(config.kind, config.nx, config.ny,
                               config.domain)
    fine = mesh.refine_to_fine(coarse, config.n_sub)
    A = _coefficient_field(config.coefficient)
    f = _rhs_field(config.rhs)
    degrees = _degrees_of(config, coarse)
    gamma = mesh.check_regularity(coarse)
    bad = mesh.check_degree_compat(coarse, degrees, gamma)
    if bad:
        print(f"warning: {len(bad)} edge pairs violate the degree "
              "comparability condition", file=sys.stderr)
    return Problem(coarse, fine, A, f, degrees, gamma)


@dataclass
class RunResult:
    """One solved configuration with its numbers and live objects."""

    config: RunConfig
    problem: Problem
    solution: globalsolve.CoarseSolution
    u_ref: finefem.FineFunction
    E_star: float
    report: errors.ErrorReport
    est: estimator.EstimatorReport
    u_B_ref: finefem.FineFunction | None
    runtime_ms: int

    def row(self, timing: bool = False) -> str:
        c = self.config
        H = (c.domain[1] - c.domain[0]) / c.nx
        cells = [_fmt(c.eps or 0.0), _fmt(H), c.kind,
                 str(_column_degree(c.N)), str(_column_degree(c.M)),
                 str(self.solution.space.n_dofs), _fmt(self.report.E_rel),
                 _fmt(self.report.E_rel_gamma
                      if self.report.E_rel_gamma is not None
                      else float("nan")),
                 _fmt(self.est.value_gamma
                      if self.est.value_gamma is not None
                      else self.est.value),
                 str(self.runtime_ms if timing else 0),
                 str(self.solution.cg_iters)]
        return ",".join(cells)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def run_single(config: RunConfig, problem: Problem | None = None,
               workers: int = 1, shared: dict | None = None) -> RunResult:
    """Offline build, online solve, error report and estimator for one
    config.  shared may carry u_ref/E_star/u_B_ref/space_donor from a
    previous run on the same meshes and fields."""
    t0 = time.perf_counter()
    if problem is None:
        problem = build_problem(config)
    shared = shared or {}
    space = globalsolve.build_space(
        problem.coarse, problem.fine, problem.A, problem.degrees,
        config.rel_tol, workers=workers,
        interface_from=shared.get("space_donor"))
    systems = globalsolve.assemble_coarse(space, problem.A, problem.f)
    solution = globalsolve.solve_coarse(systems, config.rel_tol)
    if "u_ref" in shared:
        u_ref, E_star = shared["u_ref"], shared["E_star"]
    else:
        u_ref, E_star = errors.reference_solve(
            problem.fine, problem.A, problem.f, config.rel_tol,
            eps=config.eps, strict=config.strict)
    u_B_ref = shared.get("u_B_ref")
    if u_B_ref is None and space.n_bubble == 0:
        u_B_ref = errors.bubble_reference(problem.fine, problem.A, problem.f,
                                          config.rel_tol)
    report = errors.evaluate(solution, E_star, u_ref, u_B_ref,
                             config.rel_tol)
    est = estimator.global_estimate(solution, problem.f, problem.degrees,
                                    config.eta, config.ell)
    ms = int(round(1000 * (time.perf_counter() - t0)))
    return RunResult(config, problem, solution, u_ref, E_star, report, est,
                     u_B_ref, ms)


def _emit(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def cmd_solve(config: RunConfig, out: str | None = None,
              workers: int = 1, timing: bool = False) -> int:
    result = run_single(config, workers=workers)
    _emit([CSV_HEADER, result.row(timing)], out)
    return 0


def _failed_row(config: RunConfig, exc: Exception) -> str:
    c = config
    H = (c.domain[1] - c.domain[0]) / c.nx
    print(f"warning: row failed: {exc}", file=sys.stderr)
    return ",".join([_fmt(c.eps or 0.0), _fmt(H), c.kind,
                     str(_column_degree(c.N)), str(_column_degree(c.M)),
                     "0", "nan", "nan", "nan", "0", "0"])


def cmd_sweep(config: RunConfig, axis: str, values: list[float],
              out: str | None = None, workers: int = 1,
              timing: bool = False) -> int:
    """One row per value along the axis; offline work shared where the
    meshes and coefficient stay fixed.  Failed rows are recorded and the
    sweep continues."""
    if axis not in ("H", "N", "M", "eps"):
        raise ConfigError(f"sweep axis must be H, N, M or eps, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = [CSV_HEADER]

    if axis in ("N", "M"):
        for v in values:
            if v != int(v) or int(v) < (1 if axis == "N" else 0):
                raise ConfigError(f"sweep {axis} values must be integers "
                                  f">= {1 if axis == 'N' else 0}")
        problem = build_problem(config)
        shared: dict = {}
        if axis == "N":
            cfg0 = _with(config, N=int(max(values)), M=0)
            shared["space_donor"] = globalsolve.build_space(
                problem.coarse, problem.fine, problem.A,
                _degrees_of(cfg0, problem.coarse), config.rel_tol,
                workers=workers)
        for v in values:
            cfg = _with(config, **{axis: int(v)})
            try:
                res = run_single(cfg, _reprob(problem,
                                              _degrees_of(cfg, problem.coarse)),
                                 workers, shared)
                shared.setdefault("u_ref", res.u_ref)
                shared.setdefault("E_star", res.E_star)
                if res.u_B_ref is not None:
                    shared.setdefault("u_B_ref", res.u_B_ref)
                if axis == "M" and "space_donor" not in shared:
                    shared["space_donor"] = res.solution.space
                rows.append(res.row(timing))
            except (finefem.SolverDivergenceError, np.linalg.LinAlgError,
                    ValueError) as exc:
                rows.append(_failed_row(cfg, exc))
    elif axis == "H":
        Lx = config.domain[1] - config.domain[0]
        Ly = config.domain[3] - config.domain[2]
        fine_cells = config.nx * config.n_sub
        for v in values:
            nx = round(Lx / v)
            ny = round(Ly / v)
            cfg = None
            try:
                if abs(Lx / v - nx) > 1e-9 * nx or nx < 1 or ny < 1:
                    raise ConfigError(f"H={v!r} does not tile the domain")
                if fine_cells % nx:
                    raise ConfigError(f"H={v!r} does not preserve the fine "
                                      f"grid of {fine_cells} cells per side")
                if ny * (fine_cells // nx) != config.ny * config.n_sub:
                    raise ConfigError(f"H={v!r} cannot keep the fine grid "
                                      "on both axes")
                cfg = _with(config, nx=nx, ny=ny, n_sub=fine_cells // nx)
                if cfg.n_sub < 2:
                    raise ConfigError(f"H={v!r} leaves fewer than 2 "
                                      "subdivisions")
                rows.append(run_single(cfg, workers=workers).row(timing))
            except (ConfigError, finefem.SolverDivergenceError,
                    np.linalg.LinAlgError, ValueError) as exc:
                rows.append(_failed_row(cfg or config, exc))
    else:
        if config.coefficient.get("type") != "periodic_benchmark":
            raise ConfigError("eps sweep needs the periodic_benchmark "
                              "coefficient")
        for v in values:
            if not v > 0:
                raise ConfigError("eps values must be positive")
            cfg = _with(config,
                        coefficient={"type": "periodic_benchmark",
                                     "eps": float(v)})
            try:
                rows.append(run_single(cfg, workers=workers).row(timing))
            except (finefem.SolverDivergenceError, np.linalg.LinAlgError,
                    ValueError) as exc:
                rows.append(_failed_row(cfg, exc))
    _emit(rows, out)
    return 0


def _with(config: RunConfig, **kw) -> RunConfig:
    d = config.to_dict()
    d.update(kw)
    return RunConfig.from_dict(d)


def _reprob(problem: Problem, degrees: mesh.DegreeAssignment) -> Problem:
    return Problem(problem.coarse, problem.fine, problem.A, problem.f,
                   degrees, problem.gamma)


def cmd_errmap(config: RunConfig, out: str | None = None,
               workers: int = 1) -> int:
    """Per-edge localized error and estimator with their log10 ratio.
    Interface mode only: bubble degrees must be zero everywhere."""
    if _column_degree(config.M) != 0:
        raise ConfigError("errmap requires M = 0 (interface localization)")
    result = run_single(config, workers=workers)
    est_map = estimator.localize(result.est, result.problem.coarse)
    try:
        err_map, _ = errors.interface_error_map(result.solution, result.u_ref,
                                                result.u_B_ref)
    except ValueError:
        err_map = {e: 0.0 for e in est_map}
    ratios, _ = estimator.effectivity_map(est_map, err_map)
    coarse = result.problem.coarse
    rows = [ERRMAP_HEADER]
    with np.errstate(divide="ignore"):
        for eid in sorted(est_map):
            e = coarse.edges[eid]
            p0, p1 = coarse.vertices[e.v0], coarse.vertices[e.v1]
            rows.append(",".join([
                str(eid), _fmt(p0[0]), _fmt(p0[1]), _fmt(p1[0]), _fmt(p1[1]),
                _fmt(err_map[eid]), _fmt(est_map[eid]),
                _fmt(np.log10(ratios[eid]) if ratios[eid] > 0
                     else float("-inf"))]))
    _emit(rows, out)
    return 0


def cmd_basis_dump(config: RunConfig, selector: str,
                   out: str | None = None, workers: int = 1) -> int:
    """Point cloud of one catalog entry: nodal:V, edge:E:K or bubble:K:I."""
    parts = selector.split(":")
    forms = {"nodal": 2, "edge": 3, "bubble": 3}
    if not parts or parts[0] not in forms or len(parts) != forms[parts[0]]:
        raise ConfigError(f"bad basis selector {selector!r}; use nodal:V, "
                          "edge:E:K or bubble:K:I")
    try:
        key = tuple(int(p) for p in parts[1:])
    except ValueError:
        raise ConfigError(f"bad basis selector {selector!r}: "
                          "indices must be integers") from None
    problem = build_problem(config)
    space = globalsolve.build_space(problem.coarse, problem.fine, problem.A,
                                    problem.degrees, config.rel_tol,
                                    workers=workers)
    for bf in space.catalog:
        if bf.kind == parts[0] and bf.key == key:
            pts = localbasis.dump_points(bf, problem.fine)
            rows = ["x,y,value"]
            rows += [",".join(_fmt(v) for v in row) for row in pts]
            _emit(rows, out)
            return 0
    raise ConfigError(f"selector {selector!r} matches no basis function "
                      "in this configuration")


def cmd_selftest() -> int:
    """Small smoke checks printed as PASS/FAIL lines; exit 0 iff all pass."""
    from . import polybasis
    checks: list[tuple[str, bool]] = []

    rule = polybasis.gauss_lobatto(4)
    exact = [2.0, 0.0, 2.0 / 3.0, 0.0, 0.4, 0.0]
    ok = all(abs(rule.weights @ rule.nodes**d - e) < 1e-12
             for d, e in enumerate(exact))
    checks.append(("gauss-lobatto degree-5 exactness", ok))

    coarse = mesh.build_coarse("quad", 4, 4)
    checks.append(("structured quad mesh counts",
                   len(coarse.elements) == 16 and len(coarse.edges) == 40))

    cfg = RunConfig.from_dict({"schema": 1, "kind": "triangle", "nx": 4,
                               "ny": 4, "n_sub": 4, "N": 1, "M": 0})
    r1 = run_single(cfg)
    r2 = run_single(cfg)
    checks.append(("identity problem deterministic rows",
                   r1.row() == r2.row()))
    checks.append(("round-trip config",
                   RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if not failed else 3


# ---------------------------------------------------------------------------
# Entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="legmsfem",
                                description="Multiscale FEM benchmark runner")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=None, help="output CSV path "
                        "(default stdout)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--strict", action="store_true",
                        help="fail instead of warn on unresolved scales")
        sp.add_argument("--rel-tol", type=float, default=None)
        sp.add_argument("--eta", type=float, default=None)
        sp.add_argument("--timing", action="store_true",
                        help="record wall time (breaks byte-determinism)")

    common(sub.add_parser("solve", help="single run, one CSV row"))
    sp = sub.add_parser("sweep", help="one CSV row per axis value")
    common(sp)
    sp.add_argument("--axis", required=True, choices=["H", "N", "M", "eps"])
    sp.add_argument("--values", required=True,
                    help="comma-separated axis values")
    common(sub.add_parser("errmap", help="per-edge error/estimator map"))
    sp = sub.add_parser("basis-dump", help="dump one basis function")
    common(sp)
    sp.add_argument("--basis", required=True,
                    help="selector: nodal:V, edge:E:K or bubble:K:I")
    sub.add_parser("selftest", help="quick smoke checks")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()
    try:
        config = RunConfig.load(args.config)
        if args.strict:
            config.strict = True
        if args.rel_tol is not None:
            if not 0 < args.rel_tol < 1:
                raise ConfigError("--rel-tol must be in (0, 1)")
            config.rel_tol = args.rel_tol
        if args.eta is not None:
            if not 0 <= args.eta < 0.5:
                raise ConfigError("--eta must be in [0, 0.5)")
            config.eta = args.eta
        out = args.out if args.out is not None else config.out
        if args.command == "solve":
            return cmd_solve(config, out, args.workers, args.timing)
        if args.command == "sweep":
            try:
                values = [float(v) for v in args.values.split(",") if v]
            except ValueError:
                raise ConfigError(f"bad --values {args.values!r}") from None
            return cmd_sweep(config, args.axis, values, out, args.workers,
                             args.timing)
        if args.command == "errmap":
            return cmd_errmap(config, out, args.workers)
        return cmd_basis_dump(config, args.basis, out, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (finefem.SolverDivergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
