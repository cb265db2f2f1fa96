"""Sweep orchestration: runs, metrics and the CSV tables for convergence and privacy plots."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import subprocess
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from dpps import __version__
from dpps.algorithms import AdmmConfig, DistributedContext, RuleConfig, RunTrace, run_dp_admm, run_dp_ps
from dpps.attack import DEFAULT_GAMMA, AttackSpec, make_windows, run_attack
from dpps.network import NetworkData, load_case
from dpps.partition import (ZonePartition, assignment_from_lists, build_partition, fixed_zone_assignment,
                            greedy_partition)
from dpps.privacy import PrivacyParams

log = logging.getLogger(__name__)

GAP_THRESHOLD = 1.0

CONVERGENCE_COLUMNS = ("k", "AE", "gap", "H", "H_best")
ITERATIONS_COLUMNS = ("partition", "epsilon", "seed", "iterations_to_1pct", "final_gap")
DEE_COLUMNS = ("partition", "epsilon", "seed", "T", "n_windows", "average_dee", "cos")
SUMMARY_COLUMNS = ("partition", "epsilon", "median_iterations_to_1pct", "median_final_gap",
                   "median_average_dee_T1", "median_cos")
TIMING_COLUMNS = ("partition", "epsilon", "seed", "run_seconds", "attack_seconds")


@dataclass(frozen=True)
class AttackConfig:
    zone: int  # 1-based
    bus: int  # original bus id
    gamma: float = DEFAULT_GAMMA
    T: tuple[int, ...] = (1, 10, 100)
    g_bar: float = 1.0

    def __post_init__(self):
        if not self.T or min(self.T) <= 0:
            raise ValueError("attack window lengths must be positive")
        if self.gamma <= 0 or self.g_bar < 0:
            raise ValueError("gamma must be positive and g_bar nonnegative")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep. ``partition`` is one of
    {"fixed": true}, {"lists": [[bus ids], ...]} or {"k": int | [ints], "seed": int}."""

    case: str
    epsilons: tuple[float, ...]
    seeds: tuple[int, ...]
    K: int
    out_dir: str
    partition: dict = field(default_factory=lambda: {"fixed": True})
    algorithm: str = "dp-ps"
    rule: int = 3
    a: float = 1.0
    chi: float = 1.5
    beta: float = 0.05
    accountant: str = "iter"
    rho: float = 100.0
    target: float | None = None
    attack: AttackConfig | None = None

    def __post_init__(self):
        if not self.epsilons:
            raise ValueError("epsilon list is empty")
        if not self.seeds:
            raise ValueError("seed list is empty")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if self.algorithm not in ("dp-ps", "dp-admm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not any(key in self.partition for key in ("fixed", "lists", "k")):
            raise ValueError("partition needs one of 'fixed', 'lists', 'k'")
        RuleConfig(rule=self.rule, a=self.a, chi=self.chi)
        PrivacyParams(beta=self.beta, accountant=self.accountant)  # type: ignore[arg-type]

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d.get("config", d))  # a manifest carries its config under "config"
        d["epsilons"] = tuple(_parse_eps(e) for e in d.get("epsilons", ()))
        d["seeds"] = tuple(int(s) for s in d.get("seeds", ()))
        if d.get("attack") is not None:
            att = dict(d["attack"])
            if "T" in att:
                att["T"] = tuple(int(t) for t in att["T"])
            d["attack"] = AttackConfig(**att)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilons"] = [_fmt_eps(e) for e in self.epsilons]
        d["seeds"] = list(self.seeds)
        if self.attack is not None:
            d["attack"]["T"] = list(self.attack.T)
        return d


def load_config(path: str | Path) -> ExperimentConfig:
    """JSON, or YAML when the extension says so."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return ExperimentConfig.from_dict(data)


def _parse_eps(e: Any) -> float:
    if isinstance(e, str) and e.strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    v = float(e)
    if not v > 0:
        raise ValueError(f"epsilon must be positive, got {e!r}")
    return v


def _fmt_eps(e: float) -> str:
    return "inf" if math.isinf(e) else repr(float(e))


@dataclass(frozen=True)
class MetricsRow:
    k: int
    ae: float
    gap: float
    h_best: float
    wall: float

    def __post_init__(self):
        if self.ae < 0:
            raise ValueError("AE must be nonnegative")


def compute_ae(trace: RunTrace | np.ndarray | Sequence[float], z_star: float) -> np.ndarray:
    """AE_k = 100 |Z* - Z^k| / Z*, with Z^k the best dual value so far (objective for ADMM)."""
    if not z_star > 0:
        raise ValueError(f"z_star must be positive, got {z_star}")
    if isinstance(trace, RunTrace):
        zk = trace.column("objective") if trace.meta.get("algorithm") == "dp-admm" else trace.column("h_best")
    else:
        zk = np.asarray(trace, dtype=float)
    return 100.0 * np.abs(z_star - zk) / z_star


def signed_gap(trace: RunTrace, z_star: float) -> np.ndarray:
    """100 (Z* - Z^k) / Z*; negative when Z^k overshoots."""
    zk = trace.column("objective") if trace.meta.get("algorithm") == "dp-admm" else trace.column("h_best")
    return 100.0 * (z_star - zk) / z_star


def metrics_rows(trace: RunTrace, z_star: float) -> list[MetricsRow]:
    ae = compute_ae(trace, z_star)
    gap = signed_gap(trace, z_star)
    return [MetricsRow(r.k, float(a), float(g), r.h_best, r.wall) for r, a, g in zip(trace.records, ae, gap)]


def iterations_to_gap(ae: np.ndarray, threshold: float = GAP_THRESHOLD) -> int | None:
    """First 1-based iteration with AE below ``threshold``; None if never reached."""
    hit = np.flatnonzero(np.asarray(ae) < threshold)
    return int(hit[0]) + 1 if hit.size else None


def resolve_partition(net: NetworkData, spec: dict) -> list[tuple[str, ZonePartition]]:
    """Labelled partitions described by a config's partition entry (several for a k sweep)."""
    if spec.get("fixed"):
        return [("fixed", build_partition(net, fixed_zone_assignment(net)))]
    if "lists" in spec:
        return [("lists", build_partition(net, assignment_from_lists(net, spec["lists"])))]
    ks = spec["k"] if isinstance(spec["k"], (list, tuple)) else [spec["k"]]
    seed = int(spec.get("seed", 0))
    return [(f"k{k}", build_partition(net, greedy_partition(net, int(k), seed))) for k in ks]


def _git_stamp() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _median(vals: Sequence[float | None]) -> float | None:
    """Median with unreached entries (None) ranked above every finite value."""
    if not vals:
        return None
    arr = np.array([math.inf if v is None else v for v in vals], dtype=float)
    m = float(np.median(arr))
    return None if math.isinf(m) else m


@dataclass
class CellResult:
    partition: str
    epsilon: float
    seed: int
    trace: RunTrace | None = None
    iterations: int | None = None
    final_gap: float | None = None
    dee: dict[int, tuple[int, float, float]] = field(default_factory=dict)  # T -> (n, avg DEE, CoS)
    pooled_cos: float | None = None
    run_seconds: float = 0.0
    attack_seconds: float = 0.0
    error: str | None = None


def run_cell(cfg: ExperimentConfig, net: NetworkData, label: str, part: ZonePartition, eps: float, seed: int,
             ctx: DistributedContext | None = None) -> CellResult:
    """One (partition, epsilon, seed) run plus its optional attack evaluation."""
    cell = CellResult(label, eps, seed)
    ctx = ctx or DistributedContext(net, part)
    params = PrivacyParams(epsilon_bar=eps, beta=cfg.beta, accountant=cfg.accountant, seed=seed)  # type: ignore[arg-type]
    need_x = cfg.attack is not None
    t0 = time.perf_counter()
    if cfg.algorithm == "dp-ps":
        rule = RuleConfig(rule=cfg.rule, a=cfg.a, chi=cfg.chi, target_value=cfg.target)
        trace = run_dp_ps(ctx, rule, params, cfg.K, keep_zone_x=need_x)
    else:
        trace = run_dp_admm(ctx, AdmmConfig(rho=cfg.rho), params, cfg.K, keep_zone_x=need_x)
    cell.run_seconds = time.perf_counter() - t0
    cell.trace = trace
    ae = compute_ae(trace, ctx.z_star)
    cell.iterations = iterations_to_gap(ae)
    cell.final_gap = float(ae[-1])
    if cfg.attack is not None:
        t0 = time.perf_counter()
        att = cfg.attack
        z = att.zone - 1
        bus = net.bus_index(att.bus)
        all_de: list[float] = []
        for T in att.T:
            if T > len(trace):
                continue
            spec = AttackSpec(z, bus, trace, gamma=att.gamma, windows=make_windows(len(trace), T))
            res = run_attack(net, part, spec, att.g_bar, ctx.solver)
            cell.dee[T] = (len(spec.windows), res.average_dee, res.cos)
            all_de.extend(res.de_per_window)
        if all_de:
            cell.pooled_cos = 100.0 * float(np.mean(np.asarray(all_de) <= att.g_bar))
        cell.attack_seconds = time.perf_counter() - t0
    return cell


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every cell, write the CSV tables and a manifest; returns the output directory.

    A failing cell is logged and recorded in failures.csv; the sweep carries on.
    """
    out = Path(cfg.out_dir)
    conv_dir = out / "convergence"
    conv_dir.mkdir(parents=True, exist_ok=True)
    net = load_case(cfg.case)
    parts = resolve_partition(net, cfg.partition)
    cells: list[CellResult] = []
    z_stars: dict[str, float] = {}
    for label, part in parts:
        ctx = DistributedContext(net, part)
        if cfg.target is not None:
            ctx.__dict__["z_star"] = float(cfg.target)
        z_stars[label] = ctx.z_star
        for eps in cfg.epsilons:
            for seed in cfg.seeds:
                try:
                    cell = run_cell(cfg, net, label, part, eps, seed, ctx)
                except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
                    log.error("cell %s eps=%s seed=%d failed: %s", label, eps, seed, exc)
                    cell = CellResult(label, eps, seed, error=f"{type(exc).__name__}: {exc}")
                    log.debug("%s", traceback.format_exc())
                else:
                    rows = metrics_rows(cell.trace, ctx.z_star)
                    _write_csv(conv_dir / f"{label}_eps{_fmt_eps(eps)}_seed{seed}.csv", CONVERGENCE_COLUMNS,
                               [(m.k, m.ae, m.gap, r.H, m.h_best) for m, r in zip(rows, cell.trace.records)])
                    cell.trace = None
                cells.append(cell)
    _write_tables(out, cfg, cells)
    manifest = {
        "format": "dpps-manifest/1", "version": __version__, "git": _git_stamp(),
        "python": platform.python_version(), "config": cfg.to_dict(), "z_star": z_stars,
        "failed_cells": sum(c.error is not None for c in cells),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return out


def _write_tables(out: Path, cfg: ExperimentConfig, cells: list[CellResult]) -> None:
    ok = [c for c in cells if c.error is None]
    _write_csv(out / "iterations_to_gap.csv", ITERATIONS_COLUMNS,
               [(c.partition, c.epsilon, c.seed, c.iterations, c.final_gap) for c in ok])
    if cfg.attack is not None:
        _write_csv(out / "average_dee.csv", DEE_COLUMNS,
                   [(c.partition, c.epsilon, c.seed, T, n, dee, cos)
                    for c in ok for T, (n, dee, cos) in sorted(c.dee.items())])
    summary = []
    for label in dict.fromkeys(c.partition for c in cells):
        for eps in cfg.epsilons:
            grp = [c for c in ok if c.partition == label and c.epsilon == eps]
            if not grp:
                continue
            dee1 = [c.dee[1][1] for c in grp if 1 in c.dee]
            cos = [c.pooled_cos for c in grp if c.pooled_cos is not None]
            summary.append((label, eps, _median([c.iterations for c in grp]),
                            float(np.median([c.final_gap for c in grp])),
                            float(np.median(dee1)) if dee1 else None,
                            float(np.median(cos)) if cos else None))
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    # wall times live apart so the tables above are reproducible bit for bit
    _write_csv(out / "timings.csv", TIMING_COLUMNS,
               [(c.partition, c.epsilon, c.seed, c.run_seconds, c.attack_seconds) for c in ok])
    _write_csv(out / "failures.csv", ("partition", "epsilon", "seed", "error"),
               [(c.partition, c.epsilon, c.seed, c.error) for c in cells if c.error is not None])
