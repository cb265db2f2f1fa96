"""Second-order-cone OPF programs: the centralized relaxation and the per-zone feasible sets.

Per line l = (i, j) the program carries eight variables

    pF, qF, pT, qT        branch flows at both ends
    wRR, wII              split of WR = Re(V_i conj(V_j))
    wRI_ij, wRI_ji        WI = Im(V_i conj(V_j)) = wRI_ji - wRI_ij

and per bus one squared-magnitude variable u_i = |V_i|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from dpps.network import NetworkData
from dpps.partition import CONSENSUS_TAGS, ZonePartition

LINE_TAGS = CONSENSUS_TAGS
_VACUOUS_ANGLE = math.radians(90.0)


@dataclass(frozen=True)
class SocRow:
    """Cone membership ||A x + b|| <= c.x + d."""

    A: sp.csr_matrix
    b: np.ndarray
    c: sp.csr_matrix  # 1 x n
    d: float


@dataclass(frozen=True)
class ConicProgram:
    """min  const + c.x + sum_i q_i x_i^2
       s.t. A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub,  x in every SOC row."""

    names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    q: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    socs: tuple[SocRow, ...]
    const: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)
    _index: dict = field(default_factory=dict, repr=False, compare=False)
    _std: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.names)
        if not self._index:
            self._index.update({nm: k for k, nm in enumerate(self.names)})
        for arr in (self.lb, self.ub, self.c, self.q):
            if arr.shape != (n,):
                raise ValueError("variable-indexed array has wrong length")
        if np.any(self.q < 0):
            raise ValueError("quadratic objective coefficients must be nonnegative")
        if self.A_eq.shape[1] != n or self.A_in.shape[1] != n:
            raise ValueError("constraint matrix column count mismatch")

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def objective(self, x: np.ndarray) -> float:
        return float(self.const + self.c @ x + self.q @ (x * x))

    def with_eq_rhs(self, updates: Mapping[int, float]) -> ConicProgram:
        """Copy with selected equality right-hand sides replaced (cheap: shares matrices)."""
        b_eq = self.b_eq.copy()
        for row, val in updates.items():
            b_eq[row] = val
        std = dict(self.standard_form())
        b = std["b"].copy()
        b[: len(b_eq)] = b_eq
        std["b"] = b
        return replace(self, b_eq=b_eq, _std=std)

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        r = {
            "eq": float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)),
            "ineq": float(np.max(self.A_in @ x - self.b_in, initial=0.0)),
            "bounds": float(max(np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0))),
        }
        soc = 0.0
        for row in self.socs:
            lhs = np.linalg.norm(row.A @ x + row.b)
            rhs = float((row.c @ x)[0]) + row.d
            soc = max(soc, lhs - rhs)
        r["soc"] = soc
        r["max"] = max(0.0, *r.values())
        return r

    def standard_form(self) -> dict:
        """Clarabel form A x + s = b, s in (zero, nonneg, soc...) cones; cached."""
        if "A" not in self._std:
            self._std.update(_standardize(self))
        return self._std

    def dump(self) -> str:
        """Plain-text dump for cross-checking with an external solver."""
        lines = [f"# dpps-conic/1 n={self.n} eq={self.A_eq.shape[0]} in={self.A_in.shape[0]} soc={len(self.socs)}",
                 f"const {self.const!r}"]
        for k, nm in enumerate(self.names):
            lines.append(f"var {nm} {self.lb[k]!r} {self.ub[k]!r} {self.c[k]!r} {self.q[k]!r}")
        for tag, A, b in (("eq", self.A_eq, self.b_eq), ("in", self.A_in, self.b_in)):
            A = A.tocsr()
            for r in range(A.shape[0]):
                cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
                vals = A.data[A.indptr[r]:A.indptr[r + 1]]
                terms = " ".join(f"{v!r}*{self.names[c]}" for c, v in zip(cols, vals))
                lines.append(f"{tag} {terms} | {b[r]!r}")
        for s in self.socs:
            lines.append(f"soc dim={s.A.shape[0] + 1} d={s.d!r}")
        return "\n".join(lines) + "\n"


def _standardize(prog: ConicProgram) -> dict:
    n = prog.n
    finite_lb = np.flatnonzero(np.isfinite(prog.lb))
    finite_ub = np.flatnonzero(np.isfinite(prog.ub))
    eye = sp.identity(n, format="csr")
    blocks = [prog.A_eq, prog.A_in, -eye[finite_lb], eye[finite_ub]]
    rhs = [prog.b_eq, prog.b_in, -prog.lb[finite_lb], prog.ub[finite_ub]]
    soc_dims = []
    for row in prog.socs:
        blocks.append(sp.vstack([-row.c, -row.A]))
        rhs.append(np.concatenate([[row.d], row.b]))
        soc_dims.append(row.A.shape[0] + 1)
    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(rhs)
    n_eq = prog.A_eq.shape[0]
    n_nonneg = prog.A_in.shape[0] + len(finite_lb) + len(finite_ub)
    return {"A": A, "b": b, "n_eq": n_eq, "n_nonneg": n_nonneg, "soc_dims": soc_dims}


class _Builder:
    """Triplet accumulator for ConicProgram assembly."""

    def __init__(self):
        self.names: list[str] = []
        self.idx: dict[str, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.c: list[float] = []
        self.q: list[float] = []
        self.eq: list[dict[int, float]] = []
        self.b_eq: list[float] = []
        self.ineq: list[dict[int, float]] = []
        self.b_in: list[float] = []
        self.socs: list[tuple[list[dict[int, float]], list[float], dict[int, float], float]] = []
        self.const = 0.0

    def var(self, name: str, lb: float = -np.inf, ub: float = np.inf) -> int:
        if name in self.idx:
            return self.idx[name]
        k = len(self.names)
        self.idx[name] = k
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.c.append(0.0)
        self.q.append(0.0)
        return k

    def add_eq(self, terms: dict[int, float], rhs: float) -> int:
        self.eq.append(terms)
        self.b_eq.append(rhs)
        return len(self.eq) - 1

    def add_le(self, terms: dict[int, float], rhs: float) -> None:
        self.ineq.append(terms)
        self.b_in.append(rhs)

    def add_soc(self, rows: list[dict[int, float]], consts: list[float], lin: dict[int, float], d: float) -> None:
        self.socs.append((rows, consts, lin, d))

    def build(self, meta: dict | None = None) -> ConicProgram:
        n = len(self.names)

        def mat(rows):
            data, ri, ci = [], [], []
            for r, terms in enumerate(rows):
                for col, v in terms.items():
                    if v != 0.0:
                        ri.append(r)
                        ci.append(col)
                        data.append(v)
            return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

        socs = tuple(
            SocRow(A=mat(rows), b=np.asarray(consts, dtype=float), c=mat([lin]), d=float(d))
            for rows, consts, lin, d in self.socs
        )
        return ConicProgram(
            names=tuple(self.names), lb=np.array(self.lb, dtype=float), ub=np.array(self.ub, dtype=float),
            c=np.array(self.c, dtype=float), q=np.array(self.q, dtype=float),
            A_eq=mat(self.eq), b_eq=np.array(self.b_eq, dtype=float),
            A_in=mat(self.ineq), b_in=np.array(self.b_in, dtype=float),
            socs=socs, const=self.const, meta=meta or {},
        )


def _add_block(bld: _Builder, net: NetworkData, lines: Sequence[int], balance_buses: Sequence[int],
               u_buses: Sequence[int], prefix: str = "", demand: Mapping[int, float] | None = None,
               demand_var: tuple[int, int] | None = None) -> dict:
    """Add flow/cone/balance/bound rows for one (zone or full) network block.

    ``demand_var`` = (bus, var index) replaces that bus's fixed active demand by a variable.
    Returns variable-index and row-index maps for the block.
    """
    base = net.base_mva
    u = {i: bld.var(f"{prefix}u[{i}]", net.buses[i].v_min**2, net.buses[i].v_max**2) for i in u_buses}
    lv: dict[int, dict[str, int]] = {}
    for l in lines:
        br = net.branches[l]
        i, j = br.from_bus, br.to_bus
        wmax = net.buses[i].v_max * net.buses[j].v_max
        v = {}
        for tag in LINE_TAGS:
            bound = wmax if tag.startswith("w") else np.inf
            v[tag] = bld.var(f"{prefix}{tag}[{l}]", -bound, bound)
        lv[l] = v
        g = br.conductances
        wr = {v["wRR"]: 1.0, v["wII"]: 1.0}
        wi = {v["wRI_ji"]: 1.0, v["wRI_ij"]: -1.0}

        def comb(a_u, ui, a_wr, a_wi):
            t = {ui: a_u}
            for k, s in wr.items():
                t[k] = t.get(k, 0.0) + a_wr * s
            for k, s in wi.items():
                t[k] = t.get(k, 0.0) + a_wi * s
            return t

        # flow definitions, written as expr - flow = 0
        for flow, expr in (
            ("pF", comb(g["G_ff"], u[i], g["G_ft"], g["B_ft"])),
            ("qF", comb(-g["B_ff"], u[i], -g["B_ft"], g["G_ft"])),
            ("pT", comb(g["G_tt"], u[j], g["G_tf"], -g["B_tf"])),
            ("qT", comb(-g["B_tt"], u[j], -g["B_tf"], -g["G_tf"])),
        ):
            expr[v[flow]] = -1.0
            bld.add_eq(expr, 0.0)
        if math.isfinite(br.s_max):
            bld.add_soc([{v["pF"]: 1.0}, {v["qF"]: 1.0}], [0.0, 0.0], {}, br.s_max)
            bld.add_soc([{v["pT"]: 1.0}, {v["qT"]: 1.0}], [0.0, 0.0], {}, br.s_max)
        if abs(br.angle_max) < _VACUOUS_ANGLE:
            t = math.tan(br.angle_max)
            row = {k: s for k, s in wi.items()}
            for k in wr:
                row[k] = -t
            bld.add_le(row, 0.0)
        if abs(br.angle_min) < _VACUOUS_ANGLE:
            t = math.tan(br.angle_min)
            row = {k: -s for k, s in wi.items()}
            for k in wr:
                row[k] = t
            bld.add_le(row, 0.0)
        # ||(2 WR, 2 WI, u_i - u_j)|| <= u_i + u_j
        bld.add_soc(
            [{k: 2.0 for k in wr}, {k: 2.0 * s for k, s in wi.items()}, {u[i]: 1.0, u[j]: -1.0}],
            [0.0, 0.0, 0.0], {u[i]: 1.0, u[j]: 1.0}, 0.0,
        )

    gens: dict[int, tuple[int, int]] = {}
    p_rows: dict[int, int] = {}
    q_rows: dict[int, int] = {}
    line_set = set(lines)
    for i in balance_buses:
        bus = net.buses[i]
        prow: dict[int, float] = {}
        qrow: dict[int, float] = {}
        for l in net.lines_from[i]:
            if l in line_set:
                prow[lv[l]["pF"]] = 1.0
                qrow[lv[l]["qF"]] = 1.0
        for l in net.lines_to[i]:
            if l in line_set:
                prow[lv[l]["pT"]] = 1.0
                qrow[lv[l]["qT"]] = 1.0
        for gi in net.gens_at[i]:
            gen = net.generators[gi]
            pg = bld.var(f"{prefix}pg[{gi}]", gen.p_min, gen.p_max)
            qg = bld.var(f"{prefix}qg[{gi}]", gen.q_min, gen.q_max)
            gens[gi] = (pg, qg)
            prow[pg] = -1.0
            qrow[qg] = -1.0
            bld.q[pg] += gen.c2 * base**2
            bld.c[pg] += gen.c1 * base
            bld.const += gen.c0
        prow[u[i]] = prow.get(u[i], 0.0) + bus.g_shunt
        qrow[u[i]] = qrow.get(u[i], 0.0) - bus.b_shunt
        pd = bus.p_demand if demand is None else demand.get(i, bus.p_demand)
        if demand_var is not None and demand_var[0] == i:
            prow[demand_var[1]] = 1.0
            p_rows[i] = bld.add_eq(prow, 0.0)
        else:
            p_rows[i] = bld.add_eq(prow, -pd)
        q_rows[i] = bld.add_eq(qrow, -bus.q_demand)
    return {"u": u, "lines": lv, "gens": gens, "p_rows": p_rows, "q_rows": q_rows}


def build_centralized_soc(net: NetworkData) -> ConicProgram:
    bld = _Builder()
    all_buses = list(range(net.n_bus))
    info = _add_block(bld, net, list(range(len(net.branches))), all_buses, all_buses)
    return bld.build(meta={"kind": "centralized", "block": info})


@dataclass(frozen=True)
class ZonePrimal:
    x_part: np.ndarray
    y_part: np.ndarray


def zone_blocks(net: NetworkData, part: ZonePartition, z: int) -> tuple[list[int], list[int], list[int]]:
    """(lines, balance buses, voltage buses) that make up zone z's feasible set."""
    return list(part.line_sets[z]), list(part.zones[z]), list(part.extended_nodes[z])


def build_zone_subproblem(net: NetworkData, part: ZonePartition, z: int,
                          demand_override: Mapping[int, float] | Sequence[float] | None = None) -> ConicProgram:
    """Zone z program over its feasible set; lambda terms are applied at solve time.

    ``demand_override`` gives active demand (p.u.) either as {bus: value} or aligned with
    ``part.zones[z]``. ``meta['y_idx']`` lists the boundary variables in C(z) order.
    """
    if not 0 <= z < part.n_zones:
        raise KeyError(f"unknown zone {z}")
    demand = _demand_map(part, z, demand_override)
    bld = _Builder()
    lines, bal, ubus = zone_blocks(net, part, z)
    info = _add_block(bld, net, lines, bal, ubus, demand=demand)
    y_idx = np.array([info["lines"][l][tag] for l in part.cuts[z] for tag in LINE_TAGS], dtype=int)
    mask = np.ones(len(bld.names), dtype=bool)
    mask[y_idx] = False
    return bld.build(meta={
        "kind": "zone", "zone": z, "block": info, "y_idx": y_idx,
        "x_idx": np.flatnonzero(mask), "p_rows": info["p_rows"],
        "demand": {i: (demand or {}).get(i, net.buses[i].p_demand) for i in bal},
    })


def _demand_map(part: ZonePartition, z: int, override) -> dict[int, float] | None:
    if override is None:
        return None
    if isinstance(override, Mapping):
        return {int(k): float(v) for k, v in override.items()}
    vals = list(override)
    if len(vals) != len(part.zones[z]):
        raise ValueError(f"demand override has {len(vals)} entries for {len(part.zones[z])} zone buses")
    return dict(zip(part.zones[z], map(float, vals)))


def with_demand(prog: ConicProgram, demand: Mapping[int, float]) -> ConicProgram:
    """Fast demand override on an already built zone program (only balance constants change)."""
    rows = prog.meta["p_rows"]
    out = prog.with_eq_rhs({rows[i]: -d for i, d in demand.items()})
    meta = dict(prog.meta)
    meta["demand"] = {**prog.meta["demand"], **demand}
    return replace(out, meta=meta, _index=prog._index)


def split_primal(prog: ConicProgram, x: np.ndarray) -> ZonePrimal:
    return ZonePrimal(x_part=x[prog.meta["x_idx"]], y_part=x[prog.meta["y_idx"]])


def boundary_bounds(net: NetworkData, part: ZonePartition) -> np.ndarray:
    """Interval [y_L, y_U] for every consensus index, shape (|C|, 2).

    Flow entries use the thermal limit when present, otherwise interval arithmetic on the
    flow definitions with |WR|, |WI| <= vmax_i vmax_j.
    """
    out = np.zeros((part.n_consensus, 2))
    for k, (l, tag) in enumerate(part.consensus_index):
        br = net.branches[l]
        bi, bj = net.buses[br.from_bus], net.buses[br.to_bus]
        wmax = bi.v_max * bj.v_max
        if tag.startswith("w"):
            out[k] = (-wmax, wmax)
            continue
        if math.isfinite(br.s_max):
            out[k] = (-br.s_max, br.s_max)
            continue
        g = br.conductances
        if tag == "pF":
            a_u, bus, a_wr, a_wi = g["G_ff"], bi, g["G_ft"], g["B_ft"]
        elif tag == "qF":
            a_u, bus, a_wr, a_wi = -g["B_ff"], bi, -g["B_ft"], g["G_ft"]
        elif tag == "pT":
            a_u, bus, a_wr, a_wi = g["G_tt"], bj, g["G_tf"], -g["B_tf"]
        else:
            a_u, bus, a_wr, a_wi = -g["B_tt"], bj, -g["B_tf"], -g["G_tf"]
        ends = (a_u * bus.v_min**2, a_u * bus.v_max**2)
        spread = (abs(a_wr) + abs(a_wi)) * wmax
        out[k] = (min(ends) - spread, max(ends) + spread)
    return out


def gradient_norm_bound(bounds: np.ndarray, part: ZonePartition, noise_bound: float | np.ndarray = 0.0) -> float:
    """Upper bound on ||y_tilde||^2 given boundary intervals and a per-entry noise bound."""
    m = np.max(np.abs(bounds), axis=1)[part.group]
    xi = np.broadcast_to(np.asarray(noise_bound, dtype=float), m.shape)
    return float(np.sum(m**2 + xi**2 + 2 * xi * m))
