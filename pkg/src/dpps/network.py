"""Matpower case parsing and the per-unit network model."""

from __future__ import annotations

import cmath
import json
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

DEFAULT_ANGLE_BOUND = math.radians(30.0)


class CaseParseError(ValueError):
    """Malformed Matpower text; carries the offending line number."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class NetworkValidationError(ValueError):
    pass


class SingularBranchError(ValueError):
    pass


@dataclass(frozen=True)
class BusRecord:
    id: int
    v_min: float
    v_max: float
    p_demand: float
    q_demand: float
    g_shunt: float
    b_shunt: float

    def __post_init__(self):
        if not (0 < self.v_min <= self.v_max):
            raise NetworkValidationError(f"bus {self.id}: bad voltage bounds [{self.v_min}, {self.v_max}]")
        if not (math.isfinite(self.p_demand) and math.isfinite(self.q_demand)):
            raise NetworkValidationError(f"bus {self.id}: non-finite demand")


@dataclass(frozen=True)
class GeneratorRecord:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c1: float
    c2: float
    c0: float = 0.0

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise NetworkValidationError(f"generator at bus {self.bus}: inverted bounds")
        if self.c2 < 0:
            raise NetworkValidationError(f"generator at bus {self.bus}: nonconvex cost c2={self.c2}")


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    tau: float = 1.0
    theta_shift: float = 0.0
    s_max: float = math.inf
    angle_min: float = -DEFAULT_ANGLE_BOUND
    angle_max: float = DEFAULT_ANGLE_BOUND

    def __post_init__(self):
        if self.r == 0 and self.x == 0:
            raise SingularBranchError(f"branch {self.from_bus}-{self.to_bus} has zero impedance")
        if self.tau <= 0:
            raise NetworkValidationError(f"branch {self.from_bus}-{self.to_bus}: tap ratio {self.tau} <= 0")
        if self.angle_min > self.angle_max:
            raise NetworkValidationError(f"branch {self.from_bus}-{self.to_bus}: inverted angle bounds")

    @property
    def admittance(self) -> tuple[complex, complex, complex, complex]:
        return admittance_block(self)

    @property
    def conductances(self) -> dict[str, float]:
        """G/B split of the admittance block, keyed ff, ft, tf, tt."""
        yff, yft, ytf, ytt = self.admittance
        return {
            "G_ff": yff.real, "B_ff": yff.imag,
            "G_ft": yft.real, "B_ft": yft.imag,
            "G_tf": ytf.real, "B_tf": ytf.imag,
            "G_tt": ytt.real, "B_tt": ytt.imag,
        }


def admittance_block(branch: BranchRecord) -> tuple[complex, complex, complex, complex]:
    """Return (Y_ff, Y_ft, Y_tf, Y_tt) of the pi-model with off-nominal tap on the from side."""
    z = complex(branch.r, branch.x)
    if z == 0:
        raise SingularBranchError("zero series impedance")
    ys = 1 / z
    charge = 1j * branch.b_charge / 2
    tap = branch.tau * cmath.exp(1j * branch.theta_shift)
    y_ff = (ys + charge) / branch.tau**2
    y_ft = -ys / tap.conjugate()
    y_tf = -ys / tap
    y_tt = ys + charge
    return y_ff, y_ft, y_tf, y_tt


@dataclass(frozen=True)
class NetworkData:
    """Per-unit network. Buses, generator buses and branch ends use dense 0-based ids;
    ``buses[i].id`` keeps the original Matpower number."""

    base_mva: float
    buses: tuple[BusRecord, ...]
    generators: tuple[GeneratorRecord, ...]
    branches: tuple[BranchRecord, ...]
    name: str = ""
    neighbors: tuple[frozenset[int], ...] = field(init=False, repr=False, compare=False)
    lines_from: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    lines_to: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    gens_at: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.buses)
        nbr: list[set[int]] = [set() for _ in range(n)]
        lf: list[list[int]] = [[] for _ in range(n)]
        lt: list[list[int]] = [[] for _ in range(n)]
        for k, br in enumerate(self.branches):
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise NetworkValidationError(f"branch {k} references unknown bus")
            lf[br.from_bus].append(k)
            lt[br.to_bus].append(k)
            nbr[br.from_bus].add(br.to_bus)
            nbr[br.to_bus].add(br.from_bus)
        ga: list[list[int]] = [[] for _ in range(n)]
        for g, gen in enumerate(self.generators):
            if not 0 <= gen.bus < n:
                raise NetworkValidationError(f"generator {g} references unknown bus")
            ga[gen.bus].append(g)
        object.__setattr__(self, "neighbors", tuple(frozenset(s) for s in nbr))
        object.__setattr__(self, "lines_from", tuple(tuple(v) for v in lf))
        object.__setattr__(self, "lines_to", tuple(tuple(v) for v in lt))
        object.__setattr__(self, "gens_at", tuple(tuple(v) for v in ga))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, original_id: int) -> int:
        for i, b in enumerate(self.buses):
            if b.id == original_id:
                return i
        raise KeyError(original_id)

    def incident_lines(self, i: int) -> tuple[int, ...]:
        return self.lines_from[i] + self.lines_to[i]

    def demand_vector(self) -> list[float]:
        return [b.p_demand for b in self.buses]

    # canonical structured dump: JSON floats round-trip exactly
    def to_dict(self) -> dict:
        def enc(rec):
            return {k: _enc_float(v) for k, v in asdict(rec).items()}

        return {
            "format": "dpps-network/1",
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [enc(b) for b in self.buses],
            "generators": [enc(g) for g in self.generators],
            "branches": [enc(br) for br in self.branches],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkData:
        if d.get("format") != "dpps-network/1":
            raise ValueError(f"unknown network format {d.get('format')!r}")

        def dec(rec):
            return {k: _dec_float(v) for k, v in rec.items()}

        return cls(
            base_mva=d["base_mva"],
            buses=tuple(BusRecord(**dec(b)) for b in d["buses"]),
            generators=tuple(GeneratorRecord(**dec(g)) for g in d["generators"]),
            branches=tuple(BranchRecord(**dec(b)) for b in d["branches"]),
            name=d.get("name", ""),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> NetworkData:
        return cls.from_dict(json.loads(text))


def _enc_float(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _dec_float(v):
    if v in ("inf", "-inf"):
        return float(v)
    return v


_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _read_tables(text: str) -> tuple[float, dict[str, list[tuple[int, list[float]]]]]:
    base = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if current is None:
            m = _SCALAR_RE.search(line)
            if m:
                base = float(m.group(1))
                continue
            m = _TABLE_RE.search(line)
            if m:
                current = m.group(1)
                tables[current] = []
                line = line[m.end():]
            else:
                continue
        end = "]" in line
        body = line.split("]", 1)[0]
        for row in body.split(";"):
            toks = row.replace(",", " ").split()
            if not toks:
                continue
            try:
                tables[current].append((lineno, [float(t) for t in toks]))
            except ValueError as exc:
                raise CaseParseError(f"non-numeric entry in mpc.{current}: {row.strip()!r}", lineno) from exc
        if end:
            current = None
    if current is not None:
        raise CaseParseError(f"unterminated table mpc.{current}")
    if base is None:
        raise CaseParseError("missing mpc.baseMVA")
    return base, tables


def _require(tables, name, min_cols):
    if name not in tables:
        raise CaseParseError(f"missing table mpc.{name}")
    for lineno, row in tables[name]:
        if len(row) < min_cols:
            raise CaseParseError(f"mpc.{name} row has {len(row)} columns, need {min_cols}", lineno)
    return tables[name]


def parse_matpower(text: str, name: str = "") -> NetworkData:
    """Parse the numeric tables of a Matpower ``.m`` case into per-unit ``NetworkData``.

    Out-of-service generators and branches are dropped. A missing gencost table gives
    c1 = 1, c2 = 0. Costs stay in $/MWh units; the model rescales by base_mva.
    """
    base, tables = _read_tables(text)
    bus_rows = _require(tables, "bus", 13)
    gen_rows = _require(tables, "gen", 10)
    branch_rows = _require(tables, "branch", 11)

    index: dict[int, int] = {}
    buses = []
    for lineno, row in bus_rows:
        bid = int(row[0])
        if bid in index:
            raise CaseParseError(f"duplicate bus id {bid}", lineno)
        index[bid] = len(buses)
        try:
            buses.append(BusRecord(
                id=bid, v_min=row[12], v_max=row[11],
                p_demand=row[2] / base, q_demand=row[3] / base,
                g_shunt=row[4] / base, b_shunt=row[5] / base,
            ))
        except NetworkValidationError as exc:
            raise NetworkValidationError(f"line {lineno}: {exc}") from exc

    costs: list[tuple[float, float, float]] = []
    if "gencost" in tables:
        for lineno, row in tables["gencost"]:
            if int(row[0]) != 2:
                raise CaseParseError("only polynomial gencost (model 2) is supported", lineno)
            n = int(row[3])
            coeffs = row[4:4 + n]
            if len(coeffs) != n or n > 3:
                raise CaseParseError(f"unsupported polynomial cost of degree {n - 1}", lineno)
            c = [0.0] * (3 - n) + coeffs
            costs.append((c[0], c[1], c[2]))

    gens = []
    for g, (lineno, row) in enumerate(gen_rows):
        if row[7] <= 0:
            continue
        bid = int(row[0])
        if bid not in index:
            raise NetworkValidationError(f"line {lineno}: generator at unknown bus {bid}")
        c2, c1, c0 = costs[g] if costs else (0.0, 1.0, 0.0)
        gens.append(GeneratorRecord(
            bus=index[bid], p_min=row[9] / base, p_max=row[8] / base,
            q_min=row[4] / base, q_max=row[3] / base, c1=c1, c2=c2, c0=c0,
        ))

    branches = []
    for lineno, row in branch_rows:
        if row[10] <= 0:
            continue
        f, t = int(row[0]), int(row[1])
        if f not in index or t not in index:
            raise NetworkValidationError(f"line {lineno}: branch {f}-{t} references unknown bus")
        rate = row[5]
        amin, amax = (row[11], row[12]) if len(row) >= 13 else (None, None)
        try:
            branches.append(BranchRecord(
                from_bus=index[f], to_bus=index[t], r=row[2], x=row[3], b_charge=row[4],
                tau=row[8] if row[8] != 0 else 1.0,
                theta_shift=math.radians(row[9]),
                s_max=rate / base if rate > 0 else math.inf,
                angle_min=math.radians(amin) if amin is not None else -DEFAULT_ANGLE_BOUND,
                angle_max=math.radians(amax) if amax is not None else DEFAULT_ANGLE_BOUND,
            ))
        except (NetworkValidationError, SingularBranchError) as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc

    return NetworkData(base_mva=base, buses=tuple(buses), generators=tuple(gens),
                       branches=tuple(branches), name=name)


def load_case(name_or_path: str | Path) -> NetworkData:
    """Load a bundled case ("case14", "case118") or a path to a ``.m`` file."""
    p = Path(name_or_path)
    if p.suffix == ".m" and p.exists():
        return parse_matpower(p.read_text(), name=p.stem)
    if p.suffix == ".json" and p.exists():
        return NetworkData.loads(p.read_text())
    stem = p.stem
    res = resources.files("dpps.data").joinpath(f"{stem}.m")
    if not res.is_file():
        raise FileNotFoundError(f"no bundled case or file named {name_or_path!r}")
    return parse_matpower(res.read_text(), name=stem)
