"""Load-inference adversary against the exchanged iterates, and its scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

import scipy.sparse as sp

from dpps.algorithms import RunTrace
from dpps.model import ConicProgram, SocRow, build_zone_subproblem
from dpps.network import NetworkData
from dpps.partition import ZonePartition
from dpps.solver import SolveError, SolverConfig, solve

DEFAULT_GAMMA = 1e7


class AttackError(RuntimeError):
    pass


@dataclass
class AttackSpec:
    target_zone: int
    target_bus: int
    trace: RunTrace
    gamma: float = DEFAULT_GAMMA
    windows: list[list[int]] = field(default_factory=list)
    demand_cap: float = 5.0  # D in [0, demand_cap * true demand]

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        K = len(self.trace)
        for w in self.windows:
            if not w:
                raise ValueError("empty observation window")
            if min(w) < 1 or max(w) > K:
                raise ValueError(f"window {w[:3]}... outside iterations 1..{K}")


@dataclass
class AttackResult:
    estimates: list[float]
    de_per_window: list[float]
    average_dee: float
    cos: float

    def __post_init__(self):
        assert all(d >= 0 for d in self.de_per_window)


def make_windows(K: int, T: int) -> list[list[int]]:
    """floor(K/T) consecutive disjoint windows of length T over iterations 1..K."""
    if T <= 0:
        raise ValueError("window length must be positive")
    if T > K:
        raise ValueError(f"window length {T} exceeds iteration count {K}")
    return [list(range((t - 1) * T + 1, t * T + 1)) for t in range(1, K // T + 1)]


def observed(trace: RunTrace, part: ZonePartition, z: int, k: int) -> np.ndarray:
    """Adversary's view of zone z at iteration k (1-based): local solution with the
    exchanged (noisy) boundary values in place of the true ones."""
    return np.array(trace.zone_x[k - 1][z], dtype=float)


def adversary_program(net: NetworkData, part: ZonePartition, spec: AttackSpec,
                      window: Sequence[int]) -> ConicProgram:
    """One program over all observed iterations: a copy of the zone's feasible set per
    iteration, every copy sharing the unknown target load D (variable 0)."""
    z, bus = spec.target_zone, spec.target_bus
    if bus not in part.zones[z]:
        raise ValueError(f"bus {bus} is not in zone {z}")
    d_true = net.buses[bus].p_demand
    if d_true == 0:
        raise ValueError("target bus has zero demand")
    if not spec.trace.zone_x:
        raise AttackError("trace holds no local solutions")
    ref = build_zone_subproblem(net, part, z)
    m, n = len(window), ref.n
    y_idx = ref.meta["y_idx"]
    sl = part.zone_slice(z)
    row = ref.meta["p_rows"][bus]
    n_eq = ref.A_eq.shape[0]

    targets = []
    for k in window:
        t = observed(spec.trace, part, z, k)
        t[y_idx] = spec.trace.y_tilde[k - 1][sl]
        targets.append(t)
    targets = np.concatenate(targets)

    d_col = sp.csr_matrix((np.ones(m), (row + n_eq * np.arange(m), np.zeros(m, dtype=int))), shape=(n_eq * m, 1))
    A_eq = sp.hstack([d_col, sp.block_diag([ref.A_eq] * m)], format="csr")
    b_eq = np.tile(ref.b_eq, m)
    b_eq[row + n_eq * np.arange(m)] = 0.0
    A_in = sp.hstack([sp.csr_matrix((ref.A_in.shape[0] * m, 1)), sp.block_diag([ref.A_in] * m)], format="csr")
    socs = []
    for t in range(m):
        for s in ref.socs:
            pad_l, pad_r = 1 + t * n, (m - 1 - t) * n
            socs.append(SocRow(_pad(s.A, pad_l, pad_r), s.b, _pad(s.c, pad_l, pad_r), s.d))
    g = spec.gamma
    lo, hi = sorted((0.0, spec.demand_cap * d_true))
    names = ("D",) + tuple(f"k{k}:{nm}" for k in window for nm in ref.names)
    return ConicProgram(
        names=names,
        lb=np.concatenate([[lo], np.tile(ref.lb, m)]),
        ub=np.concatenate([[hi], np.tile(ref.ub, m)]),
        c=np.concatenate([[0.0], np.tile(ref.c, m) - 2 * g * targets]),
        q=np.concatenate([[0.0], np.tile(ref.q, m) + g]),
        A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=np.tile(ref.b_in, m), socs=tuple(socs),
        const=m * ref.const + g * float(targets @ targets),
        meta={"kind": "adversary", "window": list(window)},
    )


def _pad(A: sp.csr_matrix, left: int, right: int) -> sp.csr_matrix:
    A = A.tocsr()
    return sp.csr_matrix((A.data, A.indices + left, A.indptr), shape=(A.shape[0], left + A.shape[1] + right))


def solve_adversary(net: NetworkData, part: ZonePartition, spec: AttackSpec, window: Sequence[int],
                    cfg: SolverConfig | None = None) -> float:
    """Estimate the target load (p.u.) from the observations in ``window``."""
    prog = adversary_program(net, part, spec, window)
    res = solve(prog, cfg=cfg)
    if not res.ok:
        raise SolveError(res, f"adversary problem over window {window[0]}..{window[-1]}")
    return float(res.x[0])


def demand_error(true_demand: float, estimate: float) -> float:
    if true_demand == 0:
        raise ValueError("demand estimation error undefined for zero demand")
    return 100.0 * abs(true_demand - estimate) / abs(true_demand)


def chance_of_success(de_values: Iterable[float], g_bar: float) -> float:
    de = np.asarray(list(de_values), dtype=float)
    if de.size == 0:
        raise ValueError("no windows to score")
    return 100.0 * float(np.mean(de <= g_bar))


def score(estimates: Sequence[float], true_demand: float, g_bar: float = 1.0) -> AttackResult:
    """DE per window, their mean, and the share of windows within g_bar percent."""
    de = [demand_error(true_demand, e) for e in estimates]
    return AttackResult(list(estimates), de, float(np.mean(de)), chance_of_success(de, g_bar))


def run_attack(net: NetworkData, part: ZonePartition, spec: AttackSpec, g_bar: float = 1.0,
               cfg: SolverConfig | None = None) -> AttackResult:
    est = [solve_adversary(net, part, spec, w, cfg) for w in spec.windows]
    return score(est, net.buses[spec.target_bus].p_demand, g_bar)
