"""Conic solve layer backed by the Clarabel interior-point engine."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from dpps.model import ConicProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    max_iters: int = 200
    verbosity: int = 0

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    status: str
    objective: float
    x: np.ndarray
    names: tuple[str, ...] = field(repr=False)
    solve_time: float = 0.0
    diagnostics: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def primal(self) -> dict[str, float]:
        return dict(zip(self.names, self.x.tolist()))


class SolveError(RuntimeError):
    def __init__(self, result: SolveResult, context: str = ""):
        self.result = result
        super().__init__(f"{context}: solver returned {result.status} ({result.diagnostics})")


def solve(prog: ConicProgram, extra_linear: np.ndarray | None = None,
          cfg: SolverConfig | None = None, extra_quadratic: np.ndarray | None = None) -> SolveResult:
    """Minimize ``prog`` plus the overlay ``extra_linear . x + sum extra_quadratic * x^2``.

    Never raises on solver outcomes; inspect ``status``.
    """
    cfg = cfg or SolverConfig()
    std = prog.standard_form()
    n = prog.n
    qlin = prog.c if extra_linear is None else prog.c + extra_linear
    qdiag = prog.q if extra_quadratic is None else prog.q + extra_quadratic
    P = sp.diags(2.0 * qdiag, format="csc")
    cones = []
    if std["n_eq"]:
        cones.append(clarabel.ZeroConeT(std["n_eq"]))
    if std["n_nonneg"]:
        cones.append(clarabel.NonnegativeConeT(std["n_nonneg"]))
    cones.extend(clarabel.SecondOrderConeT(d) for d in std["soc_dims"])

    settings = clarabel.DefaultSettings()
    settings.verbose = cfg.verbosity > 0
    settings.max_iter = cfg.max_iters
    settings.tol_feas = cfg.feas_tol
    settings.tol_gap_abs = cfg.opt_tol
    settings.tol_gap_rel = cfg.opt_tol
    settings.presolve_enable = False

    t0 = time.perf_counter()
    try:
        engine = clarabel.DefaultSolver(P, np.asarray(qlin, dtype=float), std["A"], std["b"], cones, settings)
        sol = engine.solve()
    except Exception as exc:  # engine-level failure (e.g. factorization)
        return SolveResult(NUMERICAL_FAILURE, np.nan, np.full(n, np.nan), prog.names,
                           time.perf_counter() - t0, repr(exc))
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    if status.endswith("Solved") and not status.endswith("AlmostSolved"):
        out = OPTIMAL
    elif "PrimalInfeasible" in status:
        out = INFEASIBLE
    elif "DualInfeasible" in status:
        out = UNBOUNDED
    elif "AlmostSolved" in status and prog.residuals(x)["max"] <= 100 * cfg.feas_tol:
        out = OPTIMAL
    else:
        out = NUMERICAL_FAILURE
    obj = prog.const + float(sol.obj_val) if out == OPTIMAL else np.nan
    diag = f"{status} iters={sol.iterations}"
    if out != OPTIMAL:
        log.debug("solve failed: %s", diag)
    return SolveResult(out, obj, x, prog.names, elapsed, diag)
