"""Clique-based placement of neuron graphs onto the router tree.

The pipeline is: clique cover, packing of small cliques into shared cores,
inter-core connection counts, placement-priority distances, slot assignment by
hierarchical agglomeration, nearest-first connection placement with flagging,
and an optional relay-core repair pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from .errors import CapacityError, ParameterError, ParseError, StructureError
from .hwmodel import HardwareConfig, tree_distance_matrix
from .netgraph import Network

PLACED, FLAGGED, RELAYED = 0, 1, 2
_STATUS_NAMES = {PLACED: "placed", FLAGGED: "flagged", RELAYED: "relayed"}

COVER_MODES = ("mutual", "undirected")
COUNT_MODES = ("distinct", "synapses")
SPARE_POLICIES = ("off", "extra_cores")


@dataclass(frozen=True)
class CliqueCover:
    """Disjoint neuron groups in discovery order; each group is sorted by id."""

    cliques: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.cliques)

    def sizes(self) -> list[int]:
        return [len(c) for c in self.cliques]

    def core_of(self, net: Network) -> np.ndarray:
        """Group index per neuron position of ``net``."""
        core = np.full(net.num_neurons, -1, dtype=np.int64)
        if self.cliques:
            flat = np.fromiter((m for c in self.cliques for m in c), dtype=np.int64)
            core[net.index_of(flat)] = np.repeat(np.arange(len(self.cliques)), self.sizes())
        if np.any(core < 0):
            raise StructureError("cover does not cover every neuron")
        return core


def _adjacency_sets(net: Network, mode: str) -> list[set[int]]:
    N = net.num_neurons
    if net.num_edges == 0:
        return [set() for _ in range(N)]
    s, d = net.edge_positions().T
    if mode == "mutual":
        fwd = s * N + d
        rev = d * N + s
        keep = np.isin(fwd, rev, assume_unique=True)
        s, d = s[keep], d[keep]
    elif mode == "undirected":
        s, d = np.concatenate([s, d]), np.concatenate([d, s])
    else:
        raise ParameterError(f"cover mode must be one of {COVER_MODES}, got {mode!r}")
    a = sparse.csr_matrix((np.ones(s.size, dtype=np.int8), (s, d)), shape=(N, N))
    a.sum_duplicates()
    indptr, indices = a.indptr, a.indices
    return [set(indices[indptr[i] : indptr[i + 1]].tolist()) for i in range(N)]


def clique_cover(net: Network, max_size: int, mode: str = "mutual") -> CliqueCover:
    """Greedy cover of the neuron set by cliques of at most ``max_size`` neurons.

    ``mode="mutual"`` keeps only neuron pairs connected in both directions;
    ``"undirected"`` uses the plain undirected projection. Each clique is seeded
    with the uncovered neuron of fewest uncovered neighbours and grown with the
    candidate adjacent to the most remaining candidates (ties: lowest id).
    """
    if max_size < 1:
        raise ParameterError(f"max_size must be >= 1, got {max_size}")
    N = net.num_neurons
    adj = _adjacency_sets(net, mode)
    degree = np.array([len(a) for a in adj], dtype=np.int64)
    covered = np.zeros(N, dtype=bool)
    uncovered = set(range(N))
    big = np.iinfo(np.int64).max
    cliques = []
    ids = net.neurons
    while uncovered:
        seed = int(np.argmin(np.where(covered, big, degree)))
        members = [seed]
        cand = adj[seed] & uncovered
        while cand and len(members) < max_size:
            best, best_score = -1, -1
            for c in sorted(cand):
                score = len(adj[c] & cand)
                if score > best_score:
                    best, best_score = c, score
            members.append(best)
            cand &= adj[best]
        for v in members:
            covered[v] = True
            uncovered.discard(v)
        for v in members:
            for u in adj[v]:
                degree[u] -= 1
        cliques.append(tuple(sorted(int(ids[v]) for v in members)))
    return CliqueCover(tuple(cliques))


def _edge_cores(net: Network, core_of: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src_pos, dst_pos = net.edge_positions().T
    return src_pos, core_of[src_pos], core_of[dst_pos]


def _source_sets(net: Network, core_of: np.ndarray, k: int) -> list[list[set[int]]]:
    """``sets[i][j]``: positions of neurons in group ``j`` with an edge into group ``i``."""
    sets = [[set() for _ in range(k)] for _ in range(k)]
    if net.num_edges:
        src_pos, cs, cd = _edge_cores(net, core_of)
        inter = cs != cd
        N = net.num_neurons
        keys = np.unique((cd[inter] * k + cs[inter]) * N + src_pos[inter])
        pair, src = np.divmod(keys, N)
        tgt, srccore = np.divmod(pair, k)
        for i, j, s in zip(tgt.tolist(), srccore.tolist(), src.tolist()):
            sets[i][j].add(s)
    return sets


def pack_cliques(net: Network, cover: CliqueCover, capacity: int, max_groups: int | None = None) -> CliqueCover:
    """Merge cliques into shared cores.

    Cores broadcast internally, so a core may hold several cliques. Pairs with
    the most edges between them merge first (ties: lowest group indices), but
    only while the merged core can still meet the nearest inter-core allowance
    (``capacity // 2`` distinct sources per source core) in both directions.
    If more than ``max_groups`` cores remain, further merges ignore that check
    until the count fits.
    """
    k = len(cover)
    if k < 2:
        return cover
    sizes = np.array(cover.sizes(), dtype=np.int64)
    if np.sort(sizes)[:2].sum() > capacity:
        return cover
    limit = capacity // 2
    core_of = cover.core_of(net)
    sets = _source_sets(net, core_of, k)
    weight = np.zeros((k, k), dtype=np.int64)
    if net.num_edges:
        _, cs, cd = _edge_cores(net, core_of)
        np.add.at(weight, (cs, cd), 1)
    weight = weight + weight.T
    np.fill_diagonal(weight, 0)
    members = [list(c) for c in cover.cliques]
    active = np.ones(k, dtype=bool)
    upper = np.triu(np.ones((k, k), dtype=bool), 1)

    def safe(a: int, b: int) -> bool:
        for c in np.flatnonzero(active).tolist():
            if c in (a, b):
                continue
            if len(sets[a][c] | sets[b][c]) > limit or len(sets[c][a]) + len(sets[c][b]) > limit:
                return False
        return True

    forced = False
    while True:
        fits = upper & active[:, None] & active[None, :] & ((sizes[:, None] + sizes[None, :]) <= capacity)
        if not fits.any():
            break
        score = np.where(fits, weight, -1)
        pick = None
        # candidates in descending weight, ties by (a, b)
        flat = np.flatnonzero(fits)
        order = flat[np.lexsort((flat, -score.ravel()[flat]))]
        for idx in order.tolist():
            a, b = divmod(idx, k)
            if forced or safe(a, b):
                pick = (a, b)
                break
        if pick is None:
            if max_groups is not None and int(active.sum()) > max_groups:
                forced = True
                continue
            break
        a, b = pick
        members[a].extend(members[b])
        sizes[a] += sizes[b]
        weight[a, :] += weight[b, :]
        weight[:, a] += weight[:, b]
        weight[a, a] = 0
        weight[b, :] = 0
        weight[:, b] = 0
        for c in range(k):
            sets[a][c] |= sets[b][c]
            sets[c][a] |= sets[c][b]
            sets[b][c] = set()
            sets[c][b] = set()
        sets[a][a] = set()
        active[b] = False
        if forced and max_groups is not None and int(active.sum()) <= max_groups:
            forced = False
    return CliqueCover(tuple(tuple(sorted(members[i])) for i in np.flatnonzero(active)))


def connection_counts(net: Network, cover: CliqueCover, mode: str = "distinct") -> np.ndarray:
    """``e[i, j]``: connections core ``i`` receives from core ``j``.

    ``mode="distinct"`` counts distinct source neurons of ``j`` with at least one
    edge into ``i``; ``"synapses"`` counts raw edges. The diagonal is zero.
    """
    k = len(cover)
    e = np.zeros((k, k), dtype=np.int64)
    if k == 0 or net.num_edges == 0:
        return e
    core_of = cover.core_of(net)
    src_pos, cs, cd = _edge_cores(net, core_of)
    inter = cs != cd
    src_pos, cs, cd = src_pos[inter], cs[inter], cd[inter]
    if mode == "distinct":
        keys = np.unique((cd * k + cs) * net.num_neurons + src_pos)
        pair = keys // net.num_neurons
    elif mode == "synapses":
        pair = cd * k + cs
    else:
        raise ParameterError(f"count mode must be one of {COUNT_MODES}, got {mode!r}")
    return np.bincount(pair, minlength=k * k).reshape(k, k)


def distance_matrix(e: np.ndarray, n: int) -> np.ndarray:
    """Placement-priority quasi-metric: ``floor(n / e) + 1``, -1 when unconnected, 0 on the diagonal."""
    e = np.asarray(e, dtype=np.int64)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise ParameterError("e must be a square matrix")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    dist = np.where(e > 0, n // np.maximum(e, 1) + 1, -1)
    np.fill_diagonal(dist, 0)
    return dist


def _agglomerate(weight: np.ndarray, branching: int) -> list[list[int]]:
    """Merge units into groups of at most ``branching`` units, heaviest pair first."""
    k = weight.shape[0]
    w = weight.astype(np.int64).copy()
    sizes = np.ones(k, dtype=np.int64)
    members = [[i] for i in range(k)]
    active = np.ones(k, dtype=bool)
    upper = np.triu(np.ones((k, k), dtype=bool), 1)
    while True:
        ok = upper & active[:, None] & active[None, :] & ((sizes[:, None] + sizes[None, :]) <= branching)
        if not ok.any():
            break
        a, b = divmod(int(np.argmax(np.where(ok, w, -1))), k)
        members[a].extend(members[b])
        sizes[a] += sizes[b]
        w[a, :] += w[b, :]
        w[:, a] += w[:, b]
        w[a, a] = 0
        w[b, :] = 0
        w[:, b] = 0
        active[b] = False
    return [members[i] for i in np.flatnonzero(active)]


def assign_slots(e: np.ndarray, dist: np.ndarray, cfg: HardwareConfig) -> np.ndarray:
    """Map logical cores to physical slots so heavily connected cores share low routers.

    Cores are agglomerated into groups of at most ``b`` (heaviest combined
    connection count first), groups are agglomerated the same way one level
    up, and so on until one group remains. Each level-``l`` group is laid out
    in its own aligned block of ``b**l`` slots. If that padded layout needs more
    levels than the hardware has, the leaf order is packed into consecutive slots.
    """
    e = np.asarray(e, dtype=np.int64)
    k = e.shape[0]
    if np.asarray(dist).shape != e.shape:
        raise ParameterError("dist and e must have the same shape")
    if k > cfg.total_slots:
        raise CapacityError(f"{k} cores do not fit {cfg.total_slots} slots")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    weight = np.where(np.asarray(dist) > 0, e, 0)
    weight = weight + weight.T

    # tree[level] = list of groups; each group is a list of indices into tree[level-1]
    levels: list[list[list[int]]] = []
    units_weight = weight
    num_units = k
    while num_units > 1:
        groups = _agglomerate(units_weight, cfg.b)
        levels.append(groups)
        agg = np.zeros((num_units, len(groups)), dtype=np.int64)
        for g, mem in enumerate(groups):
            agg[mem, g] = 1
        units_weight = agg.T @ units_weight @ agg
        np.fill_diagonal(units_weight, 0)
        num_units = len(groups)

    def leaves(level: int, index: int) -> list[int]:
        if level == 0:
            return [index]
        out = []
        for child in levels[level - 1][index]:
            out.extend(leaves(level - 1, child))
        return out

    depth = len(levels)
    slots = np.zeros(k, dtype=np.int64)
    if depth <= cfg.L:

        def lay_out(level: int, index: int, base: int) -> None:
            if level == 0:
                slots[index] = base
                return
            for pos, child in enumerate(levels[level - 1][index]):
                lay_out(level - 1, child, base + pos * cfg.b ** (level - 1))

        lay_out(depth, 0, 0)
    else:
        order = leaves(depth, 0)
        slots[np.asarray(order)] = np.arange(k)
    return slots


def _pair_ranks(net: Network, core_of: np.ndarray, k: int):
    """Inter-core edges with their (target, source) pair key and source rank by id."""
    src_pos, cs, cd = _edge_cores(net, core_of)
    inter = np.flatnonzero(cs != cd)
    ecs, ecd, esrc = cs[inter], cd[inter], src_pos[inter]
    N = net.num_neurons
    keys = (ecd * k + ecs) * N + esrc
    uniq, inverse = np.unique(keys, return_inverse=True)
    pair = uniq // N
    starts = np.r_[0, np.flatnonzero(pair[1:] != pair[:-1]) + 1]
    run = np.diff(np.r_[starts, uniq.size])
    rank = np.arange(uniq.size) - np.repeat(starts, run)
    return inter, ecs, ecd, rank[inverse]


def flag_table(net: Network, cover: CliqueCover, cfg: HardwareConfig) -> np.ndarray:
    """``F[i, j, l]``: edges from core ``j`` into core ``i`` flagged if the pair sits at level ``l``."""
    k = len(cover)
    if k < 2 or net.num_edges == 0:
        return np.zeros((k, k, cfg.L + 1), dtype=np.int64)
    return _flag_table_from(_pair_ranks(net, cover.core_of(net), k), k, cfg)


def _flag_table_from(ranks, k: int, cfg: HardwareConfig) -> np.ndarray:
    _, ecs, ecd, rank = ranks
    table = np.zeros((k, k, cfg.L + 1), dtype=np.int64)
    pair = ecd * k + ecs
    allow = cfg.allowances()
    for lvl in range(1, cfg.L + 1):
        table[:, :, lvl] = np.bincount(pair[rank >= allow[lvl]], minlength=k * k).reshape(k, k)
    return table


def _flag_cost(table: np.ndarray, slots: np.ndarray, branching: int) -> int:
    lv = tree_distance_matrix(slots[:, None], slots[None, :], branching)
    return int(np.take_along_axis(table, lv[:, :, None], axis=2).sum())


def _partial_cost(table: np.ndarray, lv_all: np.ndarray, slots: np.ndarray, changed: list[int]) -> int:
    """Flagged edges on pairs touching ``changed`` cores."""
    k = slots.size
    rows = np.asarray(changed)
    lv = lv_all[slots[rows][:, None], slots[None, :]]  # (c, k), symmetric distances
    ar = np.arange(k)[None, :]
    total = table[rows[:, None], ar, lv].sum() + table[ar, rows[:, None], lv].sum()
    if len(changed) == 2:
        i, j = changed
        d = lv_all[slots[i], slots[j]]
        total -= table[i, j, d] + table[j, i, d]
    return int(total)


def refine_slots(
    net: Network,
    cover: CliqueCover,
    slots: np.ndarray,
    cfg: HardwareConfig,
    max_passes: int = 4,
    table: np.ndarray | None = None,
) -> np.ndarray:
    """Local search over single-core moves and swaps that lowers the flagged-edge count.

    Each pass visits cores in index order; for each core the moves into every
    slot are ranked by their effect on that core's own pairs, and the best few
    are checked exactly. Only strict improvements are accepted. ``table`` is
    a precomputed :func:`flag_table`.
    """
    slots = np.asarray(slots, dtype=np.int64).copy()
    k = slots.size
    if k < 2:
        return slots
    if table is None:
        table = flag_table(net, cover, cfg)
    cost = _flag_cost(table, slots, cfg.b)
    if cost == 0:
        return slots
    all_slots = np.arange(cfg.total_slots)
    lv_all = tree_distance_matrix(all_slots[:, None], all_slots[None, :], cfg.b)
    occupant = np.full(cfg.total_slots, -1, dtype=np.int64)
    occupant[slots] = np.arange(k)
    for _ in range(max_passes):
        improved = False
        for i in range(k):
            both = table[i, :, :] + table[:, i, :]
            both[i, :] = 0
            lv = lv_all[:, slots]  # (S, k)
            row = both[np.arange(k)[None, :], lv].sum(axis=1)
            delta = row - row[slots[i]]
            cands = np.flatnonzero(delta < 0)
            cands = cands[np.lexsort((cands, delta[cands]))][:8]
            for s in cands.tolist():
                j = int(occupant[s])
                changed = [i] if j < 0 else [i, j]
                trial = slots.copy()
                if j >= 0:
                    trial[j] = slots[i]
                trial[i] = s
                gain = _partial_cost(table, lv_all, slots, changed) - _partial_cost(table, lv_all, trial, changed)
                if gain > 0:
                    occupant[slots[i]] = j
                    occupant[s] = i
                    slots, cost, improved = trial, cost - gain, True
                    break
            if cost == 0:
                return slots
        if not improved:
            break
    return slots


@dataclass(frozen=True, eq=False)
class Placement:
    """Neuron-to-core and core-to-slot maps plus one status per network edge.

    Arrays are aligned with the network: ``neuron_core`` with ``neuron_ids``,
    ``status``/``level``/``via`` with ``edges``. ``level`` is -1 for flagged
    edges; ``via`` names the relay core of relayed edges (-1 otherwise).
    ``relays`` maps each relay core to the source neurons it copies.
    """

    neuron_ids: np.ndarray
    neuron_core: np.ndarray
    core_slot: np.ndarray
    edges: np.ndarray
    status: np.ndarray
    level: np.ndarray
    via: np.ndarray
    relays: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def cores_used(self) -> int:
        return int(self.core_slot.size)

    @property
    def flagged(self) -> int:
        return int(np.count_nonzero(self.status == FLAGGED))

    @property
    def max_level(self) -> int:
        used = self.status != FLAGGED
        return int(self.level[used].max()) if used.any() else 0

    def neuron_core_map(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.neuron_ids, self.neuron_core) if c >= 0}

    def core_slot_map(self) -> dict[int, int]:
        return {i: int(s) for i, s in enumerate(self.core_slot)}

    def edge_status(self) -> dict[tuple[int, int], tuple]:
        out = {}
        for (s, d), st, lvl, via in zip(self.edges.tolist(), self.status.tolist(), self.level.tolist(), self.via.tolist()):
            if st == PLACED:
                out[(s, d)] = ("placed", lvl)
            elif st == RELAYED:
                out[(s, d)] = ("relayed", lvl, via)
            else:
                out[(s, d)] = ("flagged",)
        return out

    def with_changes(self, **changes) -> "Placement":
        fields = {
            "neuron_ids": self.neuron_ids,
            "neuron_core": self.neuron_core,
            "core_slot": self.core_slot,
            "edges": self.edges,
            "status": self.status,
            "level": self.level,
            "via": self.via,
            "relays": self.relays,
        }
        fields.update(changes)
        return Placement(**fields)

    def to_dict(self) -> dict:
        edges = []
        for (s, d), st, lvl, via in zip(self.edges.tolist(), self.status.tolist(), self.level.tolist(), self.via.tolist()):
            rec = {"src": s, "dst": d, "status": _STATUS_NAMES[st]}
            if st != FLAGGED:
                rec["level"] = lvl
            if st == RELAYED:
                rec["via"] = via
            edges.append(rec)
        data = {
            "neuron_core": {str(k): v for k, v in self.neuron_core_map().items()},
            "core_slot": {str(k): v for k, v in self.core_slot_map().items()},
            "edges": edges,
            "cores_used": self.cores_used,
        }
        if self.relays:
            data["relays"] = {str(k): list(v) for k, v in sorted(self.relays.items())}
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping, net: Network) -> "Placement":
        """Rebuild a placement against ``net``; edges absent from ``data`` count as flagged."""
        try:
            core_slot_map = {int(k): int(v) for k, v in data["core_slot"].items()}
            neuron_core = np.full(net.num_neurons, -1, dtype=np.int64)
            for k, v in data["neuron_core"].items():
                pos = net.index_of(np.asarray([int(k)]), strict=False)[0]
                if pos < 0:
                    raise StructureError(f"placement references unknown neuron {k}")
                neuron_core[pos] = int(v)
            num_cores = len(core_slot_map)
            if sorted(core_slot_map) != list(range(num_cores)):
                raise StructureError("core_slot keys must be 0..cores-1")
            core_slot = np.array([core_slot_map[i] for i in range(num_cores)], dtype=np.int64)
            E = net.num_edges
            status = np.full(E, FLAGGED, dtype=np.int8)
            level = np.full(E, -1, dtype=np.int64)
            via = np.full(E, -1, dtype=np.int64)
            if E:
                key_of = {(s, d): i for i, (s, d) in enumerate(net.edges.tolist())}
            for rec in data.get("edges", []):
                idx = key_of.get((int(rec["src"]), int(rec["dst"]))) if E else None
                if idx is None:
                    raise StructureError(f"placement references unknown edge {rec['src']}->{rec['dst']}")
                name = rec["status"]
                if name == "placed":
                    status[idx] = PLACED
                    level[idx] = int(rec["level"])
                elif name == "relayed":
                    status[idx] = RELAYED
                    level[idx] = int(rec["level"])
                    via[idx] = int(rec["via"])
                elif name != "flagged":
                    raise ParseError(f"unknown edge status {name!r}")
            relays = {int(k): tuple(int(x) for x in v) for k, v in data.get("relays", {}).items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed placement JSON: {exc!r}") from None
        return _make_placement(net, neuron_core, core_slot, status, level, via, relays)

    @classmethod
    def from_json(cls, text: str, net: Network) -> "Placement":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from None
        if not isinstance(data, dict):
            raise ParseError("placement JSON must be an object")
        return cls.from_dict(data, net)


def _make_placement(net, neuron_core, core_slot, status, level, via, relays) -> Placement:
    for arr in (neuron_core, core_slot, status, level, via):
        arr.setflags(write=False)
    return Placement(net.neurons, neuron_core, core_slot, net.edges, status, level, via, dict(relays))


def pair_order(dist: np.ndarray) -> list[tuple[int, int]]:
    """Connected (target, source) core pairs by ascending distance, ties by index."""
    tgt, src = np.nonzero(dist > 0)
    order = np.lexsort((src, tgt, dist[tgt, src]))
    return list(zip(tgt[order].tolist(), src[order].tolist()))


def place_connections(
    net: Network,
    cover: CliqueCover,
    slots: np.ndarray,
    cfg: HardwareConfig,
) -> Placement:
    """Place every edge or flag it.

    Intra-core edges are placed at level 0. For each connected core pair, the
    lowest-id source neurons are admitted up to the allowance of the pair's
    tree distance; their edges are placed, edges of the remaining sources are
    flagged. Allowances are per pair, so the nearest-first processing order
    (:func:`pair_order`) does not change which edges are admitted.
    """
    k = len(cover)
    slots = np.asarray(slots, dtype=np.int64)
    if slots.shape != (k,):
        raise StructureError(f"expected {k} slots, got shape {slots.shape}")
    if k and (slots.min() < 0 or slots.max() >= cfg.total_slots):
        raise StructureError("slot outside the hardware grid")
    if np.unique(slots).size != k:
        raise StructureError("two cores share a slot")
    core_of = cover.core_of(net) if k else np.zeros(0, dtype=np.int64)
    if len(cover) and sum(cover.sizes()) != net.num_neurons:
        raise StructureError("cover groups overlap")
    ranks = _pair_ranks(net, core_of, k) if net.num_edges else None
    return _place_from(net, core_of, ranks, slots, cfg)


def _place_from(net: Network, core_of: np.ndarray, ranks, slots: np.ndarray, cfg: HardwareConfig) -> Placement:
    E = net.num_edges
    status = np.full(E, PLACED, dtype=np.int8)
    level = np.zeros(E, dtype=np.int64)
    via = np.full(E, -1, dtype=np.int64)
    if E:
        inter, ecs, ecd, rank = ranks
        if inter.size:
            lvl = tree_distance_matrix(slots[ecd], slots[ecs], cfg.b)
            admitted = rank < cfg.allowances()[lvl]
            status[inter] = np.where(admitted, PLACED, FLAGGED)
            level[inter] = np.where(admitted, lvl, -1)
    return _make_placement(net, core_of.copy(), slots.copy(), status, level, via, {})


def second_pass(
    placement: Placement,
    net: Network,
    cfg: HardwareConfig,
    spare_policy: str = "off",
) -> Placement:
    """Route flagged connections through relay cores in empty slots.

    For each flagged (target, source) core pair, excess source neurons are
    copied into a relay core whose slot is strictly closer to the target than
    the source core is. Copies are admitted while the relay core has room and
    both the relay-to-target and source-to-relay allowances hold. Placed edges
    are never touched.
    """
    if spare_policy not in SPARE_POLICIES:
        raise ParameterError(f"spare_policy must be one of {SPARE_POLICIES}, got {spare_policy!r}")
    if spare_policy == "off" or placement.flagged == 0:
        return placement
    free = sorted(set(range(cfg.total_slots)) - set(placement.core_slot.tolist()))
    if not free:
        return placement

    allow = cfg.allowances()
    core_slot = placement.core_slot.tolist()
    core_of = placement.neuron_core
    flagged = np.flatnonzero(placement.status == FLAGGED)
    src_pos, dst_pos = net.edge_positions()[flagged].T
    cs = core_of[src_pos]
    cd = core_of[dst_pos]

    groups: dict[tuple[int, int], dict[int, list[int]]] = {}
    for e, s_core, d_core, sp in zip(flagged.tolist(), cs.tolist(), cd.tolist(), src_pos.tolist()):
        groups.setdefault((d_core, s_core), {}).setdefault(sp, []).append(e)

    def dist(a: int, b: int) -> int:
        return int(tree_distance_matrix(a, b, cfg.b))

    # relay core state: slot, copied neuron positions, copies per target, feeds per source core
    relays: list[dict] = []
    status = placement.status.copy()
    level = placement.level.copy()
    via = placement.via.copy()
    first_relay = placement.cores_used

    for (d_core, s_core) in sorted(groups, key=lambda p: (dist(core_slot[p[0]], core_slot[p[1]]), p)):
        excess = groups[(d_core, s_core)]
        pending = sorted(excess)
        base = dist(core_slot[d_core], core_slot[s_core])
        target_slot = core_slot[d_core]
        options = [(dist(r["slot"], target_slot), 0, r["slot"], r) for r in relays]
        options += [(dist(s, target_slot), 1, s, None) for s in free]
        options = sorted((o for o in options if o[0] < base), key=lambda o: o[:3])
        for lvl_out, _, slot, relay in options:
            if not pending:
                break
            lvl_feed = dist(slot, core_slot[s_core])
            if relay is None:
                relay = {"slot": slot, "copies": [], "out": {}, "feed": {}}
            out = relay["out"].setdefault(d_core, set())
            feed = relay["feed"].setdefault(s_core, set())
            admitted = []
            for sp in pending:
                new_copy = sp not in relay["copies"]
                if new_copy and len(relay["copies"]) >= cfg.n:
                    continue
                if sp not in out and len(out) >= allow[lvl_out]:
                    continue
                if sp not in feed and len(feed) >= allow[lvl_feed]:
                    continue
                if new_copy:
                    relay["copies"].append(sp)
                out.add(sp)
                feed.add(sp)
                admitted.append(sp)
            if not admitted:
                continue
            if relay not in relays:
                relays.append(relay)
                free.remove(slot)
            core_id = first_relay + relays.index(relay)
            for sp in admitted:
                idx = excess[sp]
                status[idx] = RELAYED
                level[idx] = lvl_out
                via[idx] = core_id
            pending = [sp for sp in pending if sp not in admitted]

    if not relays:
        return placement
    core_slot_arr = np.array(core_slot + [r["slot"] for r in relays], dtype=np.int64)
    relay_map = {
        first_relay + i: tuple(sorted(int(net.neurons[p]) for p in r["copies"])) for i, r in enumerate(relays)
    }
    return _make_placement(
        net, placement.neuron_core.copy(), core_slot_arr, status, level, via, relay_map
    )


@dataclass(frozen=True, eq=False)
class PlacementReport:
    placement: Placement
    cover: CliqueCover
    connections: np.ndarray
    distances: np.ndarray

    @property
    def cores_used(self) -> int:
        return self.placement.cores_used

    @property
    def flagged(self) -> int:
        return self.placement.flagged

    @property
    def max_level(self) -> int:
        return self.placement.max_level

    def summary(self) -> str:
        return f"cores_used={self.cores_used} flagged={self.flagged} max_level={self.max_level}"


def place(
    net: Network,
    cfg: HardwareConfig,
    spare_policy: str = "off",
    *,
    cover_mode: str = "mutual",
    count_mode: str = "distinct",
    pack: bool = True,
    refine: bool = True,
) -> PlacementReport:
    """Run the full placement pipeline on ``net``."""
    if spare_policy not in SPARE_POLICIES:
        raise ParameterError(f"spare_policy must be one of {SPARE_POLICIES}, got {spare_policy!r}")
    cover = clique_cover(net, cfg.n, mode=cover_mode)
    if pack:
        cover = pack_cliques(net, cover, cfg.n, max_groups=cfg.total_slots)
    if len(cover) > cfg.total_slots:
        raise CapacityError(f"{len(cover)} cores needed but only {cfg.total_slots} slots exist")
    e = connection_counts(net, cover, mode=count_mode)
    dist = distance_matrix(e, cfg.n)
    slots = assign_slots(e, dist, cfg)
    k = len(cover)
    core_of = cover.core_of(net) if k else np.zeros(0, dtype=np.int64)
    ranks = _pair_ranks(net, core_of, k) if net.num_edges else None
    if refine and ranks is not None:
        slots = refine_slots(net, cover, slots, cfg, table=_flag_table_from(ranks, k, cfg))
    placement = _place_from(net, core_of, ranks, slots, cfg)
    placement = second_pass(placement, net, cfg, spare_policy)
    return PlacementReport(placement, cover, e, dist)


def minimal_levels(num_cores: int, branching: int) -> int:
    """Smallest level count ``L >= 1`` with ``branching**L >= num_cores``."""
    levels, span = 1, branching
    while span < num_cores:
        span *= branching
        levels += 1
    return levels


def auto_hardware(net: Network, n: int, b: int, cover_mode: str = "mutual", pack: bool = True) -> HardwareConfig:
    """Shallowest tree of core size ``n`` and branching ``b`` holding ``net``'s cores."""
    cover = clique_cover(net, n, mode=cover_mode)
    if pack:
        cover = pack_cliques(net, cover, n)
    return HardwareConfig(n, b, minimal_levels(len(cover), b))


def place_auto(net: Network, n: int, b: int, spare_policy: str = "off", **kwargs) -> tuple[PlacementReport, HardwareConfig]:
    """Place on the shallowest tree of the given core size and branching that fits."""
    cfg = auto_hardware(net, n, b, kwargs.get("cover_mode", "mutual"), kwargs.get("pack", True))
    return place(net, cfg, spare_policy, **kwargs), cfg
