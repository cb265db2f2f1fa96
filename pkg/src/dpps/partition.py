"""Zonal decomposition: zone sets, cuts, consensus indexing and the projection onto the dual space."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from dpps.network import NetworkData

log = logging.getLogger(__name__)

# quantities shared on every cut line, in consensus order
CONSENSUS_TAGS = ("pF", "qF", "pT", "qT", "wRR", "wII", "wRI_ij", "wRI_ji")

# original (1-based Matpower) bus numbers per zone
FIXED_ZONES = {
    "case14": [
        list(range(1, 6)),
        list(range(7, 11)),
        [6] + list(range(11, 15)),
    ],
    "case118": [
        list(range(1, 34)) + [113, 114, 115, 117],
        list(range(34, 76)) + [116, 118],
        list(range(76, 113)),
    ],
}


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ZonePartition:
    zones: tuple[tuple[int, ...], ...]
    line_sets: tuple[tuple[int, ...], ...]
    extended_nodes: tuple[tuple[int, ...], ...]
    cuts: tuple[tuple[int, ...], ...]
    consensus_index: tuple[tuple[int, str], ...]
    owners: tuple[tuple[int, ...], ...]
    zone_view: tuple[tuple[int, ...], ...]
    bus_zone: tuple[int, ...]
    # derived layout of the stacked dual vector
    offsets: np.ndarray = field(init=False, repr=False, compare=False)
    group: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = [len(v) for v in self.zone_view]
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(sizes)]).astype(int))
        grp = np.array([i for v in self.zone_view for i in v], dtype=int)
        object.__setattr__(self, "group", grp)

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_consensus(self) -> int:
        return len(self.consensus_index)

    @property
    def dual_size(self) -> int:
        return int(self.offsets[-1])

    def zone_slice(self, z: int) -> slice:
        return slice(int(self.offsets[z]), int(self.offsets[z + 1]))

    def split(self, stacked: np.ndarray) -> list[np.ndarray]:
        return [stacked[self.zone_slice(z)] for z in range(self.n_zones)]

    def stack(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        if not parts:
            return np.zeros(0)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dual_size)


def build_partition(net: NetworkData, assignment: Mapping[int, int] | Sequence[int]) -> ZonePartition:
    """Build all zone index sets from a bus -> zone map (dense bus indices, zone ids 0..Z-1)."""
    n = net.n_bus
    if isinstance(assignment, Mapping):
        missing = [i for i in range(n) if i not in assignment]
        if missing:
            raise PartitionError(f"assignment misses buses {missing}")
        bus_zone = [int(assignment[i]) for i in range(n)]
    else:
        if len(assignment) != n:
            raise PartitionError(f"assignment has {len(assignment)} entries for {n} buses")
        bus_zone = [int(z) for z in assignment]
    n_zones = max(bus_zone) + 1
    zones = [tuple(i for i in range(n) if bus_zone[i] == z) for z in range(n_zones)]
    empty = [z for z, members in enumerate(zones) if not members]
    if empty:
        raise PartitionError(f"empty zones {empty}")

    line_sets, ext, cuts = [], [], []
    for z, members in enumerate(zones):
        lines = sorted({l for i in members for l in net.incident_lines(i)})
        line_sets.append(tuple(lines))
        nodes = set(members)
        for i in members:
            nodes |= net.neighbors[i]
        ext.append(tuple(sorted(nodes)))
        cut = [l for l in lines
               if bus_zone[net.branches[l].from_bus] != bus_zone[net.branches[l].to_bus]]
        cuts.append(tuple(cut))
        if not _connected(net, set(members)):
            log.warning("zone %d is not connected", z)

    cut_lines = sorted({l for c in cuts for l in c})
    consensus = [(l, tag) for l in cut_lines for tag in CONSENSUS_TAGS]
    pos = {key: i for i, key in enumerate(consensus)}
    owners = []
    for l, _ in consensus:
        br = net.branches[l]
        owners.append(tuple(sorted({bus_zone[br.from_bus], bus_zone[br.to_bus]})))
    view = [tuple(pos[(l, tag)] for l in cuts[z] for tag in CONSENSUS_TAGS) for z in range(n_zones)]

    return ZonePartition(
        zones=tuple(zones), line_sets=tuple(line_sets), extended_nodes=tuple(ext),
        cuts=tuple(cuts), consensus_index=tuple(consensus), owners=tuple(owners),
        zone_view=tuple(view), bus_zone=tuple(bus_zone),
    )


def _connected(net: NetworkData, members: set[int]) -> bool:
    start = next(iter(members))
    seen = {start}
    q = deque([start])
    while q:
        i = q.popleft()
        for j in net.neighbors[i]:
            if j in members and j not in seen:
                seen.add(j)
                q.append(j)
    return seen == members


def fixed_zone_assignment(net: NetworkData, case: str | None = None) -> list[int]:
    """Bus -> zone map of the fixed three-zone split for case14 / case118."""
    key = case or net.name
    if key not in FIXED_ZONES:
        raise PartitionError(f"no fixed partition for {key!r}")
    out = [-1] * net.n_bus
    for z, ids in enumerate(FIXED_ZONES[key]):
        for bid in ids:
            out[net.bus_index(bid)] = z
    if -1 in out:
        raise PartitionError("fixed partition does not cover every bus")
    return out


def assignment_from_lists(net: NetworkData, zone_lists: Sequence[Sequence[int]]) -> list[int]:
    """Bus -> zone map from explicit lists of original bus ids."""
    out = [-1] * net.n_bus
    for z, ids in enumerate(zone_lists):
        for bid in ids:
            i = net.bus_index(int(bid))
            if out[i] != -1:
                raise PartitionError(f"bus {bid} listed in two zones")
            out[i] = z
    if -1 in out:
        missing = [net.buses[i].id for i, z in enumerate(out) if z == -1]
        raise PartitionError(f"buses {missing} not assigned")
    return out


def greedy_partition(net: NetworkData, k: int, seed: int = 0) -> list[int]:
    """BFS-grown contiguous zones of near-equal size.

    Seeds are spread by farthest-point sampling from a random start; zones then grow
    one bus at a time, always extending the currently smallest zone that still has a frontier.
    """
    n = net.n_bus
    if not 1 <= k <= n:
        raise PartitionError(f"zone count {k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    seeds = [int(rng.integers(n))]
    dist = _bfs_dist(net, seeds[0])
    while len(seeds) < k:
        cand = [i for i in range(n) if i not in seeds]
        best = max(dist[i] for i in cand)
        ties = [i for i in cand if dist[i] == best]
        nxt = int(ties[rng.integers(len(ties))])
        seeds.append(nxt)
        dist = np.minimum(dist, _bfs_dist(net, nxt))

    zone = [-1] * n
    size = [1] * k
    for z, s in enumerate(seeds):
        zone[s] = z
    frontier = [set(net.neighbors[s]) for s in seeds]
    unassigned = n - k
    while unassigned:
        for f in frontier:
            f.difference_update([i for i in f if zone[i] != -1])
        growable = [z for z in range(k) if frontier[z]]
        if not growable:
            break
        z = min(growable, key=lambda q: (size[q], q))
        i = min(frontier[z])
        zone[i] = z
        size[z] += 1
        unassigned -= 1
        frontier[z] |= {j for j in net.neighbors[i] if zone[j] == -1}
    # isolated leftovers (disconnected graph)
    for i in range(n):
        if zone[i] == -1:
            z = min(range(k), key=lambda q: (size[q], q))
            zone[i] = z
            size[z] += 1
    _rebalance(net, zone, size)
    return zone


def _rebalance(net: NetworkData, zone: list[int], size: list[int], max_moves: int = 10_000) -> None:
    """Hand boundary buses from a zone to a neighbouring zone at least two smaller,
    as long as the donor stays connected. Deterministic; stops when no move helps."""
    for _ in range(max_moves):
        best = None
        for i in range(net.n_bus):
            src = zone[i]
            for j in sorted(net.neighbors[i]):
                dst = zone[j]
                if dst == src or size[src] - size[dst] < 2:
                    continue
                key = (size[dst] - size[src], i, dst)
                if best is None or key < best[0]:
                    members = {b for b in range(net.n_bus) if zone[b] == src and b != i}
                    if members and _connected(net, members):
                        best = (key, i, dst)
        if best is None:
            return
        _, i, dst = best
        size[zone[i]] -= 1
        size[dst] += 1
        zone[i] = dst


def _bfs_dist(net: NetworkData, src: int) -> np.ndarray:
    dist = np.full(net.n_bus, np.inf)
    dist[src] = 0
    q = deque([src])
    while q:
        i = q.popleft()
        for j in net.neighbors[i]:
            if dist[j] == np.inf:
                dist[j] = dist[i] + 1
                q.append(j)
    return dist


def project_onto_lambda_space(lam: np.ndarray, part: ZonePartition) -> np.ndarray:
    """Orthogonal projection onto {lambda : sum over owning zones of lambda_zi = 0 for every i}."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (part.dual_size,):
        raise ValueError(f"dual vector has shape {lam.shape}, expected ({part.dual_size},)")
    if lam.size == 0:
        return lam.copy()
    sums = np.bincount(part.group, weights=lam, minlength=part.n_consensus)
    counts = np.bincount(part.group, minlength=part.n_consensus)
    return lam - (sums / counts)[part.group]
