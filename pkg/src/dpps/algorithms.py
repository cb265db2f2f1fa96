"""Differentially private projected subgradient ascent on the zonal Lagrangian dual, plus DP-ADMM."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from dpps.model import ConicProgram, build_centralized_soc, build_zone_subproblem
from dpps.network import NetworkData
from dpps.partition import ZonePartition, project_onto_lambda_space
from dpps.privacy import PrivacyParams, SensitivityCache, compute_sensitivity, draw_noise, perturb
from dpps.solver import SolveError, SolverConfig, solve

log = logging.getLogger(__name__)

DEGENERATE_NORM2 = 1e-14


class DegenerateDirection(RuntimeError):
    pass


@dataclass
class DistributedContext:
    """Network, partition and the per-zone programs (built once, reused every iteration)."""

    net: NetworkData
    part: ZonePartition
    solver: SolverConfig = field(default_factory=SolverConfig)
    sens_cache: SensitivityCache | None = None

    @cached_property
    def zone_programs(self) -> list[ConicProgram]:
        return [build_zone_subproblem(self.net, self.part, z) for z in range(self.part.n_zones)]

    @cached_property
    def z_star(self) -> float:
        res = solve(build_centralized_soc(self.net), cfg=self.solver)
        if not res.ok:
            raise SolveError(res, "centralized SOC")
        return res.objective

    def overlay(self, z: int, lam_z: np.ndarray) -> np.ndarray:
        prog = self.zone_programs[z]
        c = np.zeros(prog.n)
        c[prog.meta["y_idx"]] = lam_z
        return c


@dataclass
class DualEvaluation:
    H: float
    y: np.ndarray
    zone_values: list[float]
    zone_x: list[np.ndarray]
    solve_time: float


def evaluate_dual(lam: np.ndarray, ctx: DistributedContext) -> DualEvaluation:
    """H(lambda) = sum of zone optima with the lambda.y overlay; y is a supergradient."""
    values, ys, xs = [], [], []
    t = 0.0
    for z, prog in enumerate(ctx.zone_programs):
        lam_z = lam[ctx.part.zone_slice(z)]
        res = solve(prog, ctx.overlay(z, lam_z), ctx.solver)
        if not res.ok:
            raise SolveError(res, f"zone {z} subproblem")
        t += res.solve_time
        values.append(res.objective)
        ys.append(res.x[prog.meta["y_idx"]])
        xs.append(res.x)
    return DualEvaluation(float(sum(values)), ctx.part.stack(ys), values, xs, t)


@dataclass(frozen=True)
class RuleConfig:
    rule: int = 3
    a: float = 1.0
    chi: float = 1.5
    target_value: float | None = None
    project_direction: bool = True

    def __post_init__(self):
        if self.rule not in (1, 2, 3):
            raise ValueError(f"unknown rule {self.rule}")
        if self.a <= 0:
            raise ValueError("Rule-1 constant a must be positive")
        if not 0 <= self.chi <= 2:
            raise ValueError("deflection chi must lie in [0, 2]")


@dataclass
class DualState:
    lam: np.ndarray
    prev_direction: np.ndarray
    h_best: float = -math.inf
    k: int = 1

    @classmethod
    def initial(cls, part: ZonePartition) -> DualState:
        return cls(lam=part.zeros(), prev_direction=part.zeros())


def deflection(prev: np.ndarray, g: np.ndarray, chi: float) -> float:
    """zeta = max(0, -chi <s_prev, g> / ||s_prev||^2), zero when s_prev = 0."""
    nrm2 = float(prev @ prev)
    if nrm2 == 0.0:
        return 0.0
    return max(0.0, -chi * float(prev @ g) / nrm2)


def step_rule(state: DualState, g: np.ndarray, h_value: float, cfg: RuleConfig) -> tuple[float, np.ndarray]:
    """Step size and ascent direction from the (noisy) supergradient ``g``."""
    if cfg.rule == 1:
        s = g
    elif cfg.rule == 2:
        s = g
    else:
        s = g + deflection(state.prev_direction, g, cfg.chi) * state.prev_direction
    nrm2 = float(s @ s)
    if nrm2 < DEGENERATE_NORM2:
        raise DegenerateDirection(f"||s||^2 = {nrm2:.3e} at iteration {state.k}")
    if cfg.rule == 1:
        return cfg.a / state.k, s
    if cfg.target_value is None:
        raise ValueError("Polyak-type rules need target_value")
    return (cfg.target_value - h_value) / nrm2, s


@dataclass
class IterationRecord:
    k: int
    H: float
    h_best: float
    alpha: float
    wall: float
    solve_time: float
    n_solves: int
    sens_skipped: int = 0
    objective: float = math.nan  # DP-ADMM: sum of zone generation costs
    residual: float = math.nan   # DP-ADMM: ||phi - y_tilde||


@dataclass
class RunTrace:
    """Everything a run exchanged, plus scalar diagnostics per iteration."""

    meta: dict
    records: list[IterationRecord] = field(default_factory=list)
    lam: list[np.ndarray] = field(default_factory=list)
    y: list[np.ndarray] = field(default_factory=list)
    xi: list[np.ndarray] = field(default_factory=list)
    y_tilde: list[np.ndarray] = field(default_factory=list)
    s: list[np.ndarray] = field(default_factory=list)
    delta: list[np.ndarray] = field(default_factory=list)
    zone_x: list[list[np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = list(asdict(self.records[0]).keys()) if self.records else [f.name for f in IterationRecord.__dataclass_fields__.values()]
        with open(out / "trace.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                fh.write(",".join(repr(float(getattr(r, c))) if isinstance(getattr(r, c), float) else str(getattr(r, c)) for c in cols) + "\n")
        arrays = {}
        for name in ("lam", "y", "xi", "y_tilde", "s", "delta"):
            seq = getattr(self, name)
            arrays[name] = np.array(seq) if seq else np.zeros((0, 0))
        n_zones = len(self.zone_x[0]) if self.zone_x else 0
        for z in range(n_zones):
            arrays[f"x_zone{z}"] = np.array([xs[z] for xs in self.zone_x])
        np.savez_compressed(out / "vectors.npz", **arrays)
        (out / "meta.json").write_text(json.dumps(self.meta, indent=1, default=str))
        return out

    @classmethod
    def load(cls, in_dir: str | Path) -> RunTrace:
        d = Path(in_dir)
        meta = json.loads((d / "meta.json").read_text())
        recs = []
        lines = (d / "trace.csv").read_text().splitlines()
        cols = lines[0].split(",")
        types = {f.name: f.type for f in IterationRecord.__dataclass_fields__.values()}
        for line in lines[1:]:
            vals = line.split(",")
            kw = {c: (int(v) if types[c] in (int, "int") else float(v)) for c, v in zip(cols, vals)}
            recs.append(IterationRecord(**kw))
        with np.load(d / "vectors.npz") as f:
            arr = {k: f[k] for k in f.files}
        tr = cls(meta=meta, records=recs)
        for name in ("lam", "y", "xi", "y_tilde", "s", "delta"):
            setattr(tr, name, list(arr[name]) if arr[name].size else [])
        zkeys = sorted((k for k in arr if k.startswith("x_zone")), key=lambda k: int(k[6:]))
        if zkeys:
            tr.zone_x = [[arr[k][t] for k in zkeys] for t in range(len(recs))]
        return tr


def _privatize(ctx: DistributedContext, k: int, y_parts: list[np.ndarray], params: PrivacyParams, K: int,
               overlays_lin: list[np.ndarray], overlays_quad: list[np.ndarray | None]):
    """Sensitivity + Laplace noise for every zone; returns (xi, delta, skipped, n_solves, time)."""
    xis, deltas = [], []
    skipped = n = 0
    t0 = time.perf_counter()
    for z, prog in enumerate(ctx.zone_programs):
        if params.private:
            key = delta = None
            if ctx.sens_cache is not None:
                key = SensitivityCache.key(ctx.net.name, ctx.part.zones, z, params.beta, overlays_lin[z], overlays_quad[z])
                delta = ctx.sens_cache.get(key)
            if delta is None:
                sens = compute_sensitivity(prog, y_parts[z], params.beta, overlays_lin[z], overlays_quad[z], ctx.solver)
                delta = sens.delta
                skipped += sens.skipped
                n += sens.solves
                if key is not None:
                    ctx.sens_cache.put(key, delta)
        else:
            delta = np.zeros(len(y_parts[z]))
        deltas.append(delta)
        xis.append(draw_noise(delta, params, K, k, z).xi)
    return ctx.part.stack(xis), ctx.part.stack(deltas), skipped, n, time.perf_counter() - t0


def run_dp_ps(ctx: DistributedContext, rule_cfg: RuleConfig, params: PrivacyParams, K: int,
              gap_stop: float | None = None, keep_zone_x: bool = True) -> RunTrace:
    """DP projected subgradient: solve zones, track H_best, perturb y, step, project."""
    if K <= 0:
        raise ValueError("K must be positive")
    if rule_cfg.rule in (2, 3) and rule_cfg.target_value is None:
        from dataclasses import replace
        rule_cfg = replace(rule_cfg, target_value=ctx.z_star)
    part = ctx.part
    state = DualState.initial(part)
    trace = RunTrace(meta={
        "algorithm": "dp-ps", "case": ctx.net.name, "zones": [list(zn) for zn in part.zones],
        "K": K, "rule": asdict(rule_cfg), "privacy": asdict(params),
    })
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        state.k = k
        ev = evaluate_dual(state.lam, ctx)
        if ev.H > state.h_best:
            state.h_best = ev.H
        y_parts = part.split(ev.y)
        lin = [ctx.overlay(z, lam_z) for z, lam_z in enumerate(part.split(state.lam))]
        xi, delta, skipped, n_sens, _ = _privatize(ctx, k, y_parts, params, K, lin, [None] * part.n_zones)
        y_tilde = ev.y + xi
        g = project_onto_lambda_space(y_tilde, part) if rule_cfg.project_direction else y_tilde
        try:
            alpha, s = step_rule(state, g, ev.H, rule_cfg)
        except DegenerateDirection as exc:
            log.info("stopping: %s", exc)
            alpha, s = 0.0, np.zeros_like(g)
        trace.records.append(IterationRecord(
            k=k, H=ev.H, h_best=state.h_best, alpha=alpha, wall=time.perf_counter() - t0,
            solve_time=ev.solve_time, n_solves=part.n_zones + n_sens, sens_skipped=skipped,
        ))
        trace.lam.append(state.lam.copy())
        trace.y.append(ev.y)
        trace.xi.append(xi)
        trace.y_tilde.append(y_tilde)
        trace.s.append(s)
        trace.delta.append(delta)
        if keep_zone_x:
            trace.zone_x.append(ev.zone_x)
        if alpha == 0.0 and not np.any(s):
            break
        state.lam = project_onto_lambda_space(state.lam + alpha * s, part)
        state.prev_direction = s
        if gap_stop is not None and 100 * (ctx.z_star - state.h_best) / abs(ctx.z_star) < gap_stop:
            break
    return trace


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 100.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def run_dp_admm(ctx: DistributedContext, admm_cfg: AdmmConfig, params: PrivacyParams, K: int,
                keep_zone_x: bool = False) -> RunTrace:
    """DP-ADMM baseline: penalized zone solves, noisy y, closed-form consensus update, dual step."""
    if K <= 0:
        raise ValueError("K must be positive")
    part = ctx.part
    rho = admm_cfg.rho
    lam = part.zeros()
    phi = np.zeros(part.n_consensus)
    counts = np.bincount(part.group, minlength=part.n_consensus).astype(float)
    trace = RunTrace(meta={
        "algorithm": "dp-admm", "case": ctx.net.name, "zones": [list(zn) for zn in part.zones],
        "K": K, "admm": asdict(admm_cfg), "privacy": asdict(params),
    })
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        lin, quad, ys, xs = [], [], [], []
        cost = 0.0
        st = 0.0
        phi_stack = phi[part.group]
        for z, prog in enumerate(ctx.zone_programs):
            sl = part.zone_slice(z)
            y_idx = prog.meta["y_idx"]
            c = np.zeros(prog.n)
            c[y_idx] = -lam[sl] - rho * phi_stack[sl]
            qd = np.zeros(prog.n)
            qd[y_idx] = rho / 2
            res = solve(prog, c, ctx.solver, qd)
            if not res.ok:
                raise SolveError(res, f"ADMM zone {z}")
            st += res.solve_time
            cost += prog.objective(res.x)
            lin.append(c)
            quad.append(qd)
            ys.append(res.x[y_idx])
            xs.append(res.x)
        xi, delta, skipped, n_sens, _ = _privatize(ctx, k, ys, params, K, lin, quad)
        y = part.stack(ys)
        y_tilde = y + xi
        phi = np.bincount(part.group, weights=y_tilde - lam / rho, minlength=part.n_consensus) / np.maximum(counts, 1)
        lam = lam + rho * (phi[part.group] - y_tilde)
        resid = float(np.linalg.norm(phi[part.group] - y_tilde))
        trace.records.append(IterationRecord(
            k=k, H=math.nan, h_best=math.nan, alpha=rho, wall=time.perf_counter() - t0, solve_time=st,
            n_solves=part.n_zones + n_sens, sens_skipped=skipped, objective=cost, residual=resid,
        ))
        trace.lam.append(lam.copy())
        trace.y.append(y)
        trace.xi.append(xi)
        trace.y_tilde.append(y_tilde)
        trace.delta.append(delta)
        if keep_zone_x:
            trace.zone_x.append(xs)
    return trace
