"""Directed neuron graphs, canonical small-world generators and perturbations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ParameterError, ParseError, StructureError, UnknownNeuronError
from .hwmodel import tree_distance_matrix


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Network:
    """Immutable directed graph over integer neuron ids.

    ``neurons`` is a sorted id array, ``edges`` an ``(E, 2)`` array of
    ``(src, dst)`` rows sorted lexicographically, and ``populations`` an
    optional array of population indices aligned with ``neurons``.
    Duplicate edges collapse; self-loops and dangling endpoints are rejected.
    """

    __slots__ = ("neurons", "edges", "populations", "_in_degree", "_edge_pos", "_lookup")

    def __init__(self, neurons: Iterable[int], edges: Iterable = (), populations=None):
        ids = np.asarray(list(neurons) if not isinstance(neurons, np.ndarray) else neurons, dtype=np.int64)
        ids = ids.reshape(-1)
        if ids.size and ids.min() < 0:
            raise StructureError("neuron ids must be non-negative")
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        if ids.size > 1 and np.any(ids[1:] == ids[:-1]):
            raise StructureError("duplicate neuron ids")

        if isinstance(edges, np.ndarray):
            e = edges.astype(np.int64, copy=False).reshape(-1, 2)
        else:
            e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 0] == e[:, 1]):
                raise StructureError("self-loop edges are not allowed")
            pos = np.searchsorted(ids, e)
            pos = np.minimum(pos, max(ids.size - 1, 0))
            if ids.size == 0 or np.any(ids[pos] != e):
                raise StructureError("edge endpoint is not a neuron of the network")
            e = np.unique(e, axis=0)
        else:
            e = np.zeros((0, 2), dtype=np.int64)

        pops = None
        if populations is not None:
            if isinstance(populations, Mapping):
                pops = np.full(ids.size, -1, dtype=np.int64)
                for nid, p in populations.items():
                    i = np.searchsorted(ids, int(nid))
                    if i >= ids.size or ids[i] != int(nid):
                        raise StructureError(f"population tag for unknown neuron {nid}")
                    pops[i] = int(p)
            else:
                pops = np.asarray(populations, dtype=np.int64).reshape(-1)[order]
                if pops.size != ids.size:
                    raise StructureError("population array length differs from neuron count")
            pops = _frozen(pops)

        self.neurons = _frozen(ids)
        self.edges = _frozen(e)
        self.populations = pops
        self._in_degree = None
        self._edge_pos = None
        self._lookup = None

    @classmethod
    def _trusted(cls, neurons: np.ndarray, edges: np.ndarray, populations) -> "Network":
        # inputs already sorted, unique and closed
        net = cls.__new__(cls)
        net.neurons = _frozen(neurons)
        net.edges = _frozen(edges)
        net.populations = None if populations is None else _frozen(populations)
        net._in_degree = None
        net._edge_pos = None
        net._lookup = None
        return net

    def __len__(self) -> int:
        return int(self.neurons.size)

    def __contains__(self, neuron) -> bool:
        i = np.searchsorted(self.neurons, neuron)
        return bool(i < self.neurons.size and self.neurons[i] == neuron)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        same_pops = (self.populations is None and other.populations is None) or (
            self.populations is not None
            and other.populations is not None
            and np.array_equal(self.populations, other.populations)
        )
        return (
            np.array_equal(self.neurons, other.neurons)
            and np.array_equal(self.edges, other.edges)
            and same_pops
        )

    def __repr__(self) -> str:
        return f"Network(neurons={self.num_neurons}, edges={self.num_edges})"

    @property
    def num_neurons(self) -> int:
        return int(self.neurons.size)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def index_of(self, ids, strict: bool = True) -> np.ndarray:
        """Positions of ``ids`` in :attr:`neurons`; -1 for unknown ids unless ``strict``."""
        ids = np.asarray(ids, dtype=np.int64)
        if self.neurons.size == 0:
            if strict and ids.size:
                raise UnknownNeuronError(f"unknown neuron {ids.reshape(-1)[0]}")
            return np.full(ids.shape, -1, dtype=np.int64)
        table = self._position_table()
        if table is not None:
            inside = (ids >= 0) & (ids < table.size)
            clipped = table[np.where(inside, ids, 0)]
            found = inside & (clipped >= 0)
        else:
            pos = np.searchsorted(self.neurons, ids)
            clipped = np.minimum(pos, self.neurons.size - 1)
            found = self.neurons[clipped] == ids
        if strict and not np.all(found):
            bad = ids[~found].reshape(-1)[0]
            raise UnknownNeuronError(f"unknown neuron {bad}")
        return np.where(found, clipped, -1)

    def _position_table(self) -> np.ndarray | None:
        # dense id -> position array when ids are small enough; -1 marks gaps
        if self._lookup is None:
            top = int(self.neurons[-1]) + 1
            if self.neurons[0] < 0 or top > 4 * self.neurons.size + 1024:
                self._lookup = False
            else:
                table = np.full(top, -1, dtype=np.int64)
                table[self.neurons] = np.arange(self.neurons.size)
                self._lookup = table
        return None if self._lookup is False else self._lookup

    def edge_positions(self) -> np.ndarray:
        """Edge endpoints as neuron positions, shape ``(E, 2)`` (cached)."""
        if self._edge_pos is None:
            self._edge_pos = _frozen(self.index_of(self.edges)) if self.edges.size else np.zeros((0, 2), dtype=np.int64)
        return self._edge_pos

    def population_map(self) -> dict[int, int] | None:
        if self.populations is None:
            return None
        return {int(i): int(p) for i, p in zip(self.neurons, self.populations) if p >= 0}

    def in_degrees(self) -> np.ndarray:
        if self._in_degree is None:
            deg = np.bincount(self.index_of(self.edges[:, 1]), minlength=self.neurons.size)
            self._in_degree = _frozen(deg.astype(np.int64))
        return self._in_degree

    def subgraph(self, keep_ids) -> "Network":
        """Induced subgraph on ``keep_ids`` (ids are preserved)."""
        keep = np.zeros(self.neurons.size, dtype=bool)
        keep[self.index_of(keep_ids)] = True
        if self.edges.size:
            emask = keep[self.index_of(self.edges[:, 0])] & keep[self.index_of(self.edges[:, 1])]
            edges = self.edges[emask]
        else:
            edges = self.edges
        pops = None if self.populations is None else self.populations[keep].copy()
        return Network._trusted(self.neurons[keep].copy(), edges.copy(), pops)

    # serialization

    def to_dict(self) -> dict:
        data = {
            "neurons": self.neurons.tolist(),
            "edges": self.edges.tolist(),
        }
        pops = self.population_map()
        if pops is not None:
            data["populations"] = {str(k): v for k, v in pops.items()}
        return data

    def to_json(self) -> str:
        """Canonical JSON text: sorted neurons, sorted edges, sorted population keys."""
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Network":
        if not isinstance(data, Mapping) or "neurons" not in data:
            raise ParseError("network JSON must be an object with a 'neurons' list")
        try:
            pops = data.get("populations")
            if pops is not None:
                pops = {int(k): int(v) for k, v in pops.items()}
            return cls(
                [int(x) for x in data["neurons"]],
                [(int(s), int(d)) for s, d in data.get("edges", [])],
                pops,
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"malformed network JSON: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Network":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from None
        return cls.from_dict(data)

    def to_edge_list(self) -> str:
        lines = [f"# neurons {self.num_neurons} edges {self.num_edges}"]
        lines.extend(f"{s} {d}" for s, d in self.edges.tolist())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str, neurons: Iterable[int] | None = None) -> "Network":
        """Parse ``src dst`` lines. Neurons default to the edge endpoints."""
        edges = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"line {lineno}: expected 'src dst', got {raw!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer id in {raw!r}") from None
        ids = set(neurons) if neurons is not None else set()
        for s, d in edges:
            ids.add(s)
            ids.add(d)
        return cls(sorted(ids), edges)


def load_network(path: str | Path) -> Network:
    """Read a network from ``.json`` or edge-list text."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return Network.from_json(text)
    return Network.from_edge_list(text)


def fan_in(net: Network, neuron: int) -> int:
    """Number of in-edges of ``neuron``."""
    pos = net.index_of(np.asarray([neuron]))[0]
    return int(net.in_degrees()[pos])


# canonical small-world networks


@dataclass(frozen=True)
class CanonicalParams:
    """Population size ``n``, population count, router branching and distance geometry.

    ``max_level`` drops every population pair whose distance exceeds it.
    """

    n: int
    num_cores: int
    branching: int = 4
    distance_mode: str = "tree"
    max_level: int | None = None

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        if self.num_cores < 1:
            raise ParameterError(f"num_cores must be >= 1, got {self.num_cores}")
        if self.branching < 2:
            raise ParameterError(f"branching must be >= 2, got {self.branching}")
        if self.distance_mode not in ("tree", "line"):
            raise ParameterError(f"distance_mode must be 'tree' or 'line', got {self.distance_mode!r}")
        if self.max_level is not None and self.max_level < 0:
            raise ParameterError(f"max_level must be >= 0, got {self.max_level}")

    @property
    def tree_depth(self) -> int:
        """Router levels needed to hold ``num_cores`` leaves."""
        depth, span = 0, 1
        while span < self.num_cores:
            span *= self.branching
            depth += 1
        return depth


def population_distances(params: CanonicalParams) -> np.ndarray:
    idx = np.arange(params.num_cores)
    if params.distance_mode == "tree":
        dist = tree_distance_matrix(idx[:, None], idx[None, :], params.branching)
    else:
        dist = np.abs(idx[:, None] - idx[None, :])
    return dist


def sources_per_pair(params: CanonicalParams) -> np.ndarray:
    """``s[i, j]``: neurons of population ``j`` projecting into population ``i``."""
    dist = population_distances(params)
    shift = np.minimum(dist, 62)
    s = np.where(dist > 0, params.n >> shift, 0)
    if params.max_level is not None:
        s = np.where(dist > params.max_level, 0, s)
    return s


def generate_canonical(params: CanonicalParams, seed: int = 0) -> Network:
    """Build the canonical network matching a hardware configuration.

    Every population is all-to-all connected. For populations at distance
    ``d``, the ``floor(n / 2**d)`` lowest-id neurons of the source population
    project onto every neuron of the target population. ``seed`` is accepted
    for interface uniformity; the result does not depend on it.
    """
    del seed
    n, C = params.n, params.num_cores
    neurons = np.arange(n * C, dtype=np.int64)
    pops = np.repeat(np.arange(C, dtype=np.int64), n)

    local = np.arange(n)
    ls, ld = np.meshgrid(local, local, indexing="ij")
    off = ls != ld
    ls, ld = ls[off], ld[off]
    base = (np.arange(C) * n)[:, None]
    parts = [np.stack([(base + ls).ravel(), (base + ld).ravel()], axis=1)]

    s = sources_per_pair(params)
    for count in np.unique(s[s > 0]):
        tgt, src = np.nonzero(s == count)
        srcs = src[:, None, None] * n + np.arange(count)[None, :, None]
        dsts = tgt[:, None, None] * n + local[None, None, :]
        srcs, dsts = np.broadcast_arrays(srcs, dsts)
        parts.append(np.stack([srcs.ravel(), dsts.ravel()], axis=1))

    edges = np.concatenate(parts).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return Network._trusted(neurons, edges[order], pops)


def canonical_mean_fan_in(n: int, num_cores: int, branching: int) -> float:
    """Mean in-degree of the tree-mode canonical network, counted without building it."""
    if num_cores < 1:
        return 0.0
    idx = np.arange(num_cores, dtype=np.int64)
    total_pairs_within = {}
    level, span = 0, 1
    # ordered pairs sharing a subtree of height `level` (self pairs included)
    while True:
        sizes = np.bincount(idx // span)
        total_pairs_within[level] = int(np.sum(sizes.astype(np.int64) ** 2))
        if span >= num_cores:
            break
        span *= branching
        level += 1
    inter = 0
    for lvl in range(1, level + 1):
        pairs = total_pairs_within[lvl] - total_pairs_within[lvl - 1]
        inter += pairs * (n >> lvl) * n
    intra = num_cores * n * (n - 1)
    return (intra + inter) / (num_cores * n)


# perturbations


def perturb_remove_neurons(net: Network, k: int, seed: int) -> Network:
    """Remove ``k`` neurons chosen uniformly without replacement, with their edges."""
    if not 0 <= k <= net.num_neurons:
        raise ParameterError(f"k must lie in [0, {net.num_neurons}], got {k}")
    if k == 0:
        return net
    rng = np.random.default_rng(seed)
    removed = rng.choice(net.num_neurons, size=k, replace=False)
    keep = np.ones(net.num_neurons, dtype=bool)
    keep[removed] = False
    return net.subgraph(net.neurons[keep])


def removal_count(num_neurons: int, fraction: float) -> int:
    """``fraction * num_neurons`` rounded half up."""
    return int(math.floor(fraction * num_neurons + 0.5))


def perturb_remove_fraction(net: Network, fraction: float, seed: int) -> Network:
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    return perturb_remove_neurons(net, removal_count(net.num_neurons, fraction), seed)


def rewire_degree_preserving(net: Network, seed: int, swaps_per_edge: int = 10) -> Network:
    """Random directed edge swaps keeping every in- and out-degree.

    Used as the null model when checking clustering.
    """
    rng = np.random.default_rng(seed)
    edges = [tuple(e) for e in net.edges.tolist()]
    present = set(edges)
    m = len(edges)
    if m < 2:
        return net
    attempts = swaps_per_edge * m
    picks = rng.integers(0, m, size=(attempts, 2))
    for i, j in picks.tolist():
        if i == j:
            continue
        a, b = edges[i]
        c, d = edges[j]
        if a == d or c == b or (a, d) in present or (c, b) in present:
            continue
        present.discard((a, b))
        present.discard((c, d))
        present.add((a, d))
        present.add((c, b))
        edges[i] = (a, d)
        edges[j] = (c, b)
    return Network(net.neurons, edges, None if net.populations is None else net.population_map())


# statistics


@dataclass(frozen=True)
class GraphStats:
    num_neurons: int
    num_edges: int
    mean_in_degree: float
    global_clustering_coefficient: float
    mean_shortest_path: float
    path_defined: bool


def _undirected_adjacency(net: Network) -> sparse.csr_matrix:
    N = net.num_neurons
    if net.num_edges == 0:
        return sparse.csr_matrix((N, N), dtype=np.int64)
    s, d = net.edge_positions().T
    a = sparse.coo_matrix((np.ones(s.size, dtype=np.int64), (s, d)), shape=(N, N)).tocsr()
    a = ((a + a.T) > 0).astype(np.int64)
    return a.tocsr()


def graph_stats(net: Network) -> GraphStats:
    """Size, mean in-degree, transitivity and mean path length of the undirected projection.

    Path lengths are averaged over ordered pairs of the largest weakly
    connected component; a component without pairs reports 0 and
    ``path_defined = False``.
    """
    N, E = net.num_neurons, net.num_edges
    if N == 0:
        return GraphStats(0, 0, 0.0, 0.0, 0.0, False)
    a = _undirected_adjacency(net)
    deg = np.asarray(a.sum(axis=1)).ravel()
    triples = int(np.sum(deg * (deg - 1)))
    closed = int((a @ a).multiply(a).sum())  # 6 * triangles
    clustering = closed / triples if triples else 0.0

    ncomp, labels = csgraph.connected_components(a, directed=False)
    sizes = np.bincount(labels)
    biggest = int(np.argmax(sizes))
    members = np.flatnonzero(labels == biggest)
    if members.size < 2:
        return GraphStats(N, E, E / N, clustering, 0.0, False)
    sub = a[members][:, members]
    dist = csgraph.shortest_path(sub, method="D", unweighted=True, directed=False)
    k = members.size
    mean_path = float(dist.sum()) / (k * (k - 1))
    return GraphStats(N, E, E / N, clustering, mean_path, True)
