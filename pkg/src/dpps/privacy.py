"""Laplace mechanism on the exchanged boundary solutions: sensitivity, noise, accounting."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from dpps.model import ConicProgram, with_demand
from dpps.solver import SolverConfig, solve

log = logging.getLogger(__name__)

Accountant = Literal["iter", "run"]


@dataclass(frozen=True)
class PrivacyParams:
    epsilon_bar: float = math.inf
    beta: float = 0.05
    accountant: Accountant = "iter"
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon_bar > 0:
            raise ValueError(f"epsilon_bar must be positive, got {self.epsilon_bar}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.accountant not in ("iter", "run"):
            raise ValueError(f"unknown accountant {self.accountant!r}")

    @property
    def private(self) -> bool:
        return math.isfinite(self.epsilon_bar)


@dataclass(frozen=True)
class SensitivityResult:
    delta: np.ndarray
    skipped: int = 0
    solves: int = 0


@dataclass(frozen=True)
class NoiseDraw:
    xi: np.ndarray
    scale_used: np.ndarray


def compute_sensitivity(prog: ConicProgram, base_y: np.ndarray, beta: float,
                        extra_linear: np.ndarray | None = None,
                        extra_quadratic: np.ndarray | None = None,
                        cfg: SolverConfig | None = None,
                        demand: dict[int, float] | None = None) -> SensitivityResult:
    """Largest change of the zone's boundary solution when one load moves to D(1 -/+ beta).

    Each nonzero load contributes its two interval end points; the maximum over those
    2 * |loads| re-solves is the sensitivity of every boundary entry. Infeasible
    perturbed problems are skipped (and counted).
    """
    y_idx = prog.meta["y_idx"]
    delta = np.zeros(len(y_idx))
    if beta == 0 or len(y_idx) == 0:
        return SensitivityResult(delta)
    net_demand = demand if demand is not None else prog.meta["demand"]
    skipped = solves = 0
    for bus, d in net_demand.items():
        if d == 0:
            continue
        for sign in (-1.0, 1.0):
            res = solve(with_demand(prog, {bus: d * (1 + sign * beta)}), extra_linear, cfg, extra_quadratic)
            solves += 1
            if not res.ok:
                skipped += 1
                log.warning("sensitivity: perturbed load at bus %d infeasible (%s)", bus, res.status)
                continue
            np.maximum(delta, np.abs(res.x[y_idx] - base_y), out=delta)
    return SensitivityResult(delta, skipped, solves)


def noise_rng(seed: int, k: int, z: int) -> np.random.Generator:
    """Generator keyed by (seed, iteration, zone); independent of execution order."""
    return np.random.default_rng([seed, k, z])


def laplace_scale(delta: np.ndarray, params: PrivacyParams, K: int) -> np.ndarray:
    if not params.private:
        return np.zeros_like(delta, dtype=float)
    mult = K if params.accountant == "run" else 1
    return mult * np.asarray(delta, dtype=float) / params.epsilon_bar


def draw_noise(delta: np.ndarray, params: PrivacyParams, K: int, k: int, z: int) -> NoiseDraw:
    """Laplace noise for zone z at iteration k; zero where the sensitivity is zero."""
    scale = laplace_scale(delta, params, K)
    if not params.private:
        return NoiseDraw(np.zeros_like(scale), scale)
    xi = noise_rng(params.seed, k, z).laplace(0.0, 1.0, size=scale.shape) * scale
    return NoiseDraw(xi, scale)


def perturb(y: np.ndarray, noise: NoiseDraw) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != noise.xi.shape:
        raise ValueError(f"length mismatch: y {y.shape} vs noise {noise.xi.shape}")
    return y + noise.xi


def accountant_report(params: PrivacyParams, K: int) -> dict:
    """Per-iteration and cumulative privacy loss for K observed iterations."""
    if K <= 0:
        raise ValueError("K must be positive")
    if not params.private:
        return {"private": False, "per_iteration": math.inf, "cumulative": math.inf, "scale_multiplier": 0}
    eps = params.epsilon_bar
    if params.accountant == "iter":
        return {"private": True, "per_iteration": eps, "cumulative": K * eps, "scale_multiplier": 1}
    return {"private": True, "per_iteration": eps / K, "cumulative": eps, "scale_multiplier": K}


def laplace_logpdf(x: np.ndarray, b: float) -> np.ndarray:
    return -np.log(2 * b) - np.abs(x) / b


class SensitivityCache:
    """On-disk store of sensitivity vectors keyed by (case, zones, zone, beta, cost overlay).

    The overlay carries lambda (and the ADMM penalty terms), so a hit means the
    re-solves would be identical. One ``.npy`` file per key.
    """

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hits = self.misses = 0

    @staticmethod
    def key(case: str, zones, z: int, beta: float, lin: np.ndarray | None, quad: np.ndarray | None) -> str:
        h = hashlib.sha256()
        h.update(repr((case, [list(zn) for zn in zones], z, float(beta))).encode())
        for arr in (lin, quad):
            h.update(b"-" if arr is None else np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()

    def get(self, key: str) -> np.ndarray | None:
        p = self.dir / f"{key}.npy"
        if p.exists():
            self.hits += 1
            return np.load(p)
        self.misses += 1
        return None

    def put(self, key: str, delta: np.ndarray) -> None:
        tmp = self.dir / f"{key}.tmp.npy"
        np.save(tmp, delta)
        tmp.replace(self.dir / f"{key}.npy")
