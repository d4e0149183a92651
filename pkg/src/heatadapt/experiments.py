"""Experiment drivers: convergence ladders, scheme comparison, inf-sup sweeps, MOR runs.

Every driver takes a :class:`RunConfig`, writes one CSV into ``config.out``
and returns a plain dict of the numbers it computed. Outputs contain no
timestamps, so reruns with the same configuration are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._validation import check_int, check_positive, check_theta
from .errors import InvalidArgumentError
from .fem2d import assemble_fem, load_L2, project_H1, project_L2, unit_square_mesh
from .gelfand import DiscreteSystem
from .laplace_mor import build_reduced_basis, build_snapshots, mor_pipeline, semidiscrete_error
from .petrov import infsup_constant
from .radau import (
    ModalSolution,
    RhsFunction,
    SplineSolution,
    adaptive_loop,
    crank_nicolson_solve,
    estimate,
    solve_time,
    stability_function,
    xnorm_error,
)
from .sinc import DEFAULT_ALPHA, DEFAULT_D, SincGrid, sinc_quadrature
from .time_mesh import dumps_mesh, refine, trisect_level, uniform_mesh

__all__ = [
    "RunConfig",
    "fit_rate",
    "g0_to_G",
    "build_problem",
    "run_convergence",
    "run_grading",
    "run_scheme_comparison",
    "run_infsup_sweep",
    "run_svd_decay",
    "run_mor",
    "oracle_check",
    "write_manifest",
]


def fit_rate(Ns, errs):
    """Negated least-squares slope of ``log err`` against ``log N``."""
    Ns = np.asarray(Ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if Ns.shape != errs.shape or Ns.ndim != 1:
        raise InvalidArgumentError("Ns and errs must be 1-D arrays of equal length")
    if Ns.size < 3:
        raise InvalidArgumentError("at least 3 points are needed to fit a rate")
    if np.any(Ns <= 0) or np.any(errs <= 0):
        raise InvalidArgumentError("sizes and errors must be positive")
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    return float(-slope)


def g0_to_G(g0):
    """Integer grading parameter with ``3^(-1/G) >= g0``."""
    if not 0 < g0 < 1:
        raise InvalidArgumentError(f"g0 must lie in (0, 1), got {g0}")
    return int(math.ceil(math.log(3) / math.log(1 / g0)))


def _tuple(value, cast):
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class RunConfig:
    """Parameters shared by all experiment drivers."""

    n: int = 32
    t_end: float = 1.0
    u0: str = "l2"
    mor_u0: str = "h1"
    f: float = 0.0
    scheme: str = "hybrid"
    theta: float = 0.5
    G: int = 4
    g0: float | None = None
    tol: float = 0.0
    max_iter: int = 30
    n_initial: int = 1
    uniform_levels: int = 6
    M: int = 50
    R: tuple = (5, 10, 15, 20)
    M_list: tuple = (50, 75, 100, 125)
    alpha: float = DEFAULT_ALPHA
    d: float = DEFAULT_D
    lambdas: tuple = (1.0, 10.0, 100.0, 1000.0)
    sizes: tuple = (4, 8, 16, 32, 64)
    ladder: tuple = (16, 32, 64)
    out: str = "results"
    dump_mesh: bool = False

    def __post_init__(self):
        check_int(self.n, name="n", minimum=2)
        check_positive(self.t_end, name="t_end")
        if self.u0 not in ("l2", "h1", "zero"):
            raise InvalidArgumentError("u0 must be 'l2', 'h1' or 'zero'")
        if self.mor_u0 not in ("l2", "h1"):
            raise InvalidArgumentError("mor_u0 must be 'l2' or 'h1'")
        if not np.isfinite(self.f):
            raise InvalidArgumentError("f must be finite")
        if self.scheme not in ("hybrid", "cn"):
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}")
        check_theta(self.theta)
        check_int(self.G, name="G", minimum=1)
        if self.g0 is not None:
            g0_to_G(self.g0)
        check_positive(self.tol, name="tol", strict=False)
        check_int(self.max_iter, name="max_iter", minimum=1)
        check_int(self.n_initial, name="n_initial", minimum=1)
        check_int(self.uniform_levels, name="uniform_levels", minimum=2)
        check_int(self.M, name="M", minimum=0)
        for r in self.R:
            check_int(r, name="R", minimum=1)
        for m in self.M_list:
            check_int(m, name="M", minimum=0)
        if not self.alpha >= 1:
            raise InvalidArgumentError("alpha must be >= 1")
        if not 0 < self.d < math.pi / 2:
            raise InvalidArgumentError("d must lie in (0, pi/2)")
        for lam in self.lambdas:
            check_positive(float(lam), name="lambda")
        for s in tuple(self.sizes) + tuple(self.ladder):
            check_int(s, name="size", minimum=1)

    @property
    def grading(self):
        return g0_to_G(self.g0) if self.g0 is not None else self.G

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    def digest(self):
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_mapping(cls, data):
        """Build from string values (config files, CLI); unknown keys are rejected."""
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in data.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise InvalidArgumentError(f"unknown configuration key {key!r}")
            default = kinds[key].default
            try:
                kwargs[key] = _coerce(key, raw, default)
            except (TypeError, ValueError) as exc:
                raise InvalidArgumentError(f"bad value for {key}: {raw!r} ({exc})") from None
        return cls(**kwargs)


_INT_TUPLES = {"R", "M_list", "sizes", "ladder"}


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    raw = raw.strip()
    if key in _INT_TUPLES:
        return _tuple(raw, int)
    if key == "lambdas":
        return _tuple(raw, float)
    if key == "g0":
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError("expected a boolean")
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


# --------------------------------------------------------------------------
# problem set-up


@dataclass
class Problem:
    """Heat problem on the unit square with constant data."""

    system: DiscreteSystem
    u0: np.ndarray
    F: RhsFunction | None
    steady: np.ndarray
    reference: ModalSolution = field(repr=False)

    def error(self, sol):
        """X-norm error against the exact semi-discrete solution."""
        if not np.any(self.steady):
            return xnorm_error(self.system, sol, self.reference)
        shifted = SplineSolution(sol.breakpoints, sol.values - self.steady, sol.k1, sol.k2, sol.mesh, sol.scheme)
        return xnorm_error(self.system, shifted, self.reference)


def build_problem(config, n=None, u0_kind=None):
    """``u0 = 1`` projected onto P1 (or ``u0 = 0``), constant load ``f``; exact modal reference."""
    n = config.n if n is None else n
    mesh = unit_square_mesh(n)
    system = assemble_fem(mesh)
    one = lambda x, y: np.ones_like(x)  # noqa: E731
    kind = config.u0 if u0_kind is None else u0_kind
    if kind == "zero":
        u0 = np.zeros(system.dim)
    else:
        u0 = project_L2(mesh, one, system) if kind == "l2" else project_H1(mesh, one, system)
    if config.f != 0.0:
        load = config.f * load_L2(mesh, one)[mesh.interior]
        F = RhsFunction.constant(load)
        steady = np.real(system.solve_K(load))
    else:
        F = None
        steady = np.zeros(system.dim)
    reference = ModalSolution(system, u0 - steady)
    return Problem(system, u0, F, steady, reference)


# --------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(config, name, header, rows):
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, name)
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_manifest(config, command, files):
    """Merge ``command -> (config, hash, files)`` into ``manifest.json``."""
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, "manifest.json")
    data = {}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                data = {}
    data[command] = {
        "config": config.as_dict(),
        "config_hash": config.digest(),
        "files": sorted(os.path.basename(f) for f in files),
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# --------------------------------------------------------------------------
# drivers


def _adaptive_rows(problem, config, scheme, G):
    rows = []
    system = problem.system

    def record(rec):
        rows.append({
            "n_elems": rec.n_elements,
            "eta": rec.eta,
            "err": problem.error(rec.solution),
            "marked": len(rec.marked),
            "solves": system.counters["stage_solves"],
            "mesh": rec.mesh,
        })

    adaptive_loop(system, problem.F, problem.u0, theta=config.theta, G=G, tol=config.tol,
                  max_iter=config.max_iter, scheme=scheme, t_end=config.t_end,
                  n_initial=config.n_initial, callback=record)
    cum = 0
    for r in rows:
        cum += r["n_elems"]
        r["cum_elems"] = cum
    return rows


def _safe_rate(Ns, errs):
    Ns, errs = np.asarray(Ns, float), np.asarray(errs, float)
    ok = errs > 0
    if np.count_nonzero(ok) < 3:
        return float("nan")
    return fit_rate(Ns[ok], errs[ok])


def run_convergence(config, window=6):
    """Adaptive and uniform ladders; writes ``convergence.csv`` and ``steps.csv``."""
    problem = build_problem(config)
    rows = _adaptive_rows(problem, config, config.scheme, config.grading)
    solver = solve_time if config.scheme == "hybrid" else crank_nicolson_solve
    uniform = []
    if rows[-1]["eta"] > 0:
        for k in range(1, config.uniform_levels + 1):
            mesh = uniform_mesh(config.t_end, 3**k)
            sol = solver(problem.system, mesh, problem.F, problem.u0)
            uniform.append({"n_elems": 3**k, "eta": estimate(problem.system, sol, problem.F).total,
                            "err": problem.error(sol), "mesh": mesh})
    csv_rows = [("adaptive", i, r["n_elems"], r["cum_elems"], r["eta"], r["err"], r["marked"], r["solves"])
                for i, r in enumerate(rows)]
    cum = 0
    for i, r in enumerate(uniform):
        cum += r["n_elems"]
        csv_rows.append(("uniform", i, r["n_elems"], cum, r["eta"], r["err"], 0, ""))
    files = [_write_csv(config, "convergence.csv",
                        ["kind", "iter", "n_elems", "cum_elems", "eta", "err_X", "n_marked", "stage_solves"],
                        csv_rows)]
    steps = []
    for kind, rec in (("adaptive", rows[-1]), ("uniform", uniform[-1] if uniform else None)):
        if rec is None:
            continue
        pts = np.asarray(rec["mesh"].breakpoints)
        steps += [(kind, i, pts[i], pts[i + 1] - pts[i]) for i in range(pts.size - 1)]
    files.append(_write_csv(config, "steps.csv", ["kind", "index", "t_left", "h"], steps))
    if config.dump_mesh:
        path = os.path.join(config.out, "mesh.txt")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(dumps_mesh(rows[-1]["mesh"]))
        files.append(path)
    tail = rows[-window:]
    result = {
        "adaptive": rows,
        "uniform": uniform,
        "rate_adaptive": _safe_rate([r["n_elems"] for r in tail], [r["err"] for r in tail])
        if len(tail) >= 3 else float("nan"),
        "rate_uniform": _safe_rate([r["n_elems"] for r in uniform], [r["err"] for r in uniform])
        if len(uniform) >= 3 else float("nan"),
        "files": files,
    }
    return result


def run_grading(config, g0_values=(0.9, 0.99), window=6):
    """Adaptive runs with and without grading; writes ``grading.csv``."""
    problem = build_problem(config)
    out_rows, rates = [], {}
    for label, G in [("none", config.G)] + [(f"g0={g0}", g0_to_G(g0)) for g0 in g0_values]:
        problem.system.counters.clear()
        rows = _adaptive_rows(problem, config, config.scheme, G)
        tail = rows[-window:]
        rates[label] = _safe_rate([r["n_elems"] for r in tail], [r["err"] for r in tail])
        out_rows += [(label, G, i, r["n_elems"], r["eta"], r["err"]) for i, r in enumerate(rows)]
    files = [_write_csv(config, "grading.csv", ["grading", "G", "iter", "n_elems", "eta", "err_X"], out_rows)]
    return {"rates": rates, "rows": out_rows, "files": files}


def run_scheme_comparison(config):
    """Hybrid and Crank-Nicolson adaptive runs across the spatial ladder; ``schemes.csv``."""
    curves = {}
    out_rows = []
    for n in config.ladder:
        problem = build_problem(config, n=n)
        for scheme in ("hybrid", "cn"):
            rows = _adaptive_rows(problem, config, scheme, config.grading)
            curves[(n, scheme)] = rows
            out_rows += [(problem.system.dim, scheme, i, r["n_elems"], r["eta"], r["err"])
                         for i, r in enumerate(rows)]
    files = [_write_csv(config, "schemes.csv", ["N_h", "scheme", "iter", "n_elems", "eta", "err_X"], out_rows)]
    return {"curves": curves, "files": files}


def run_infsup_sweep(config):
    """Inf-sup constants on uniform meshes of ``[0, 1]``; writes ``infsup.csv``."""
    out_rows = []
    hybrid, cn_pairs = [], {}
    for n in config.sizes:
        mesh = np.linspace(0.0, 1.0, n + 1)
        for lam in config.lambdas:
            for scheme in ("hybrid", "cn"):
                c0 = infsup_constant(float(lam), mesh, scheme)
                out_rows.append((scheme, float(lam), n, float(lam) / n, c0))
                if scheme == "hybrid":
                    hybrid.append(c0)
        # Crank-Nicolson at fixed lam * tau
        for lt in (1.0, 100.0):
            c0 = infsup_constant(lt * n, mesh, "cn")
            cn_pairs[(n, lt)] = c0
            out_rows.append(("cn", lt * n, n, lt, c0))
    files = [_write_csv(config, "infsup.csv", ["scheme", "lambda", "n", "lambda_tau", "c0"], out_rows)]
    hybrid = np.array(hybrid)
    return {
        "rows": out_rows,
        "hybrid_ratio": float(hybrid.max() / hybrid.min()),
        "hybrid_min": float(hybrid.min()),
        "hybrid_max": float(hybrid.max()),
        "cn_ratio": {n: cn_pairs[(n, 100.0)] / cn_pairs[(n, 1.0)] for n in config.sizes},
        "files": files,
    }


def run_svd_decay(config, n_keep=40):
    """Snapshot singular values for each ``M`` in ``M_list``; writes ``svd.csv``."""
    problem = build_problem(config, u0_kind=config.mor_u0)
    series = {}
    out_rows = []
    for M in config.M_list:
        snaps = build_snapshots(problem.system, None, problem.u0, SincGrid(config.alpha, config.d, M))
        basis = build_reduced_basis(problem.system, snaps, 1, descent_steps=0)
        sv = basis.singular_values[:n_keep]
        series[M] = sv
        out_rows += [(M, k + 1, s) for k, s in enumerate(sv)]
    files = [_write_csv(config, "svd.csv", ["M", "k", "sigma_k"], out_rows)]
    return {"series": series, "files": files}


def run_mor(config, window=6):
    """Reduced adaptive runs for each ``R``; writes ``mor.csv``."""
    if config.f != 0.0:
        raise InvalidArgumentError("the MOR driver supports f = 0 only")
    problem = build_problem(config, u0_kind=config.mor_u0)
    runs = {}
    out_rows = []
    for R in config.R:
        run = mor_pipeline(problem.system, None, None, problem.u0, config.M, R, theta=config.theta,
                           G=config.grading, max_iter=config.max_iter, tol=config.tol, alpha=config.alpha,
                           d=config.d, t_end=config.t_end, reference=problem.reference, reduced_dual=True)
        floor = semidiscrete_error(problem.system, run.basis, problem.u0, config.t_end)
        N = run.n_elements
        tail = slice(-window, None)
        runs[R] = {"run": run, "floor": floor, "eta_rate": _safe_rate(N[tail], run.eta[tail])
                   if N.size >= 3 else float("nan")}
        out_rows += [(R, config.M, i, N[i], run.eta[i], run.err_full_dual[i], run.err_reduced_dual[i],
                      run.solves_full, 2 * int(N[: i + 1].sum()), floor) for i in range(N.size)]
    header = ["R", "M", "iter", "n_elems", "eta", "err_X", "err_X_rdual", "solves_full", "solves_reduced",
              "err_floor"]
    files = [_write_csv(config, "mor.csv", header, out_rows)]
    return {"runs": runs, "files": files}


# --------------------------------------------------------------------------
# oracle checks


def oracle_check(config=None, seed=0):
    """Fast closed-form and dual-route checks; returns ``[(name, ok, detail)]``."""
    rng = np.random.default_rng(seed)
    checks = []

    sys1 = DiscreteSystem(np.eye(1), np.eye(1))
    sol = solve_time(sys1, [0.0, 1.0], None, np.ones(1))
    err = abs(sol.values[-1, 0] - 4 / 11)
    checks.append(("radau scalar step 4/11", err <= 1e-14, f"|u(1) - 4/11| = {err:.2e}"))

    z = -rng.uniform(0, 100, 20)
    steps = np.array([solve_time(DiscreteSystem(np.eye(1), np.eye(1) * -zz), [0.0, 1.0], None, np.ones(1))
                      .values[-1, 0] for zz in z])
    err = float(np.max(np.abs(steps - stability_function(z))))
    checks.append(("radau stability function", err <= 1e-12, f"max error {err:.2e}"))

    q = sinc_quadrature(lambda x: 1 / (1 + x * x), d=1.0, M=100)
    err = abs(q - math.pi)
    checks.append(("sinc quadrature of 1/(1+x^2)", err <= 1e-9, f"error {err:.2e}"))

    A = rng.standard_normal((12, 12))
    K = A @ A.T + 12 * np.eye(12)
    M = np.diag(rng.uniform(0.5, 2.0, 12))
    b = rng.standard_normal(12)
    x1 = DiscreteSystem(M, K, backend="dense").shifted_solve(1 + 3j, b)
    x2 = DiscreteSystem(M, K, backend="spectral").shifted_solve(1 + 3j, b)
    err = float(np.max(np.abs(x1 - x2)) / np.max(np.abs(x1)))
    checks.append(("shifted solve: LU vs eigenbasis", err <= 1e-10, f"relative difference {err:.2e}"))

    mesh = uniform_mesh(1.0, 2)
    agree = True
    for _ in range(20):
        elem = int(rng.integers(len(mesh.levels)))
        # the level-based rule takes the length parameter 3 G h0
        a, b2 = refine(mesh, [elem], 2), trisect_level(mesh, elem, 3 * 2 * mesh.h0)
        agree &= a == b2
        mesh = a
    checks.append(("trisect vs level-based trisect", bool(agree), f"{len(mesh.levels)} elements"))
    return checks
