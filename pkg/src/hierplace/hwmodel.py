"""Hierarchical router-tree hardware model.

Cores sit at the leaves of a complete ``b``-ary tree of depth ``L``. Two cores
are at tree distance ``l`` when their lowest common router is at level ``l``;
level 0 is the core itself (R0 broadcast). A target core may receive spikes
from at most ``floor(n / 2**l)`` distinct neurons of any single source core at
distance ``l``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .errors import ParameterError, ParseError, StructureError

if TYPE_CHECKING:
    from .netgraph import Network
    from .placer import Placement


@dataclass(frozen=True)
class HardwareConfig:
    """Neurons per core ``n``, router branching ``b`` and router levels ``L``."""

    n: int
    b: int
    L: int

    def __post_init__(self) -> None:
        for name in ("n", "b", "L"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        if self.b < 2:
            raise ParameterError(f"b must be >= 2, got {self.b}")
        if self.L < 1:
            raise ParameterError(f"L must be >= 1, got {self.L}")

    @property
    def total_slots(self) -> int:
        return self.b**self.L

    def allowances(self) -> np.ndarray:
        """Fan-in allowance indexed by level ``0..L``."""
        return np.array([fan_in_allowance(lvl, self) for lvl in range(self.L + 1)], dtype=np.int64)

    def to_dict(self) -> dict[str, int]:
        return {"n": int(self.n), "b": int(self.b), "L": int(self.L)}

    @classmethod
    def from_mapping(cls, data: Mapping) -> "HardwareConfig":
        try:
            return cls(n=int(data["n"]), b=int(data["b"]), L=int(data["L"]))
        except KeyError as exc:
            raise ParseError(f"hardware config is missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"hardware config values must be integers: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "HardwareConfig":
        """Read a JSON object with integer keys ``n``, ``b`` and ``L``."""
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ParseError(f"{path}: expected a JSON object")
        return cls.from_mapping(data)


def _check_slot(slot: int, cfg: HardwareConfig) -> None:
    if not 0 <= slot < cfg.total_slots:
        raise ParameterError(f"slot {slot} outside [0, {cfg.total_slots})")


def tree_distance(a: int, b_slot: int, cfg: HardwareConfig) -> int:
    """Level of the lowest router shared by slots ``a`` and ``b_slot``."""
    _check_slot(a, cfg)
    _check_slot(b_slot, cfg)
    level = 0
    while a != b_slot:
        a //= cfg.b
        b_slot //= cfg.b
        level += 1
    return level


def tree_distance_matrix(slots_a, slots_b, branching: int) -> np.ndarray:
    """Broadcasting version of :func:`tree_distance` without range checks."""
    a = np.asarray(slots_a, dtype=np.int64)
    b = np.asarray(slots_b, dtype=np.int64)
    a, b = np.broadcast_arrays(a, b)
    a = a.copy()
    b = b.copy()
    level = np.zeros(a.shape, dtype=np.int64)
    differ = a != b
    while differ.any():
        level += differ
        a //= branching
        b //= branching
        differ = a != b
    return level


def fan_in_allowance(level: int, cfg: HardwareConfig) -> int:
    """Distinct source neurons admitted per source core at ``level``."""
    if level < 0 or level > cfg.L:
        raise ParameterError(f"level {level} outside [0, {cfg.L}]")
    if level == 0:
        return cfg.n - 1
    return cfg.n >> level


def level_from_dist(dist: int) -> int:
    """Router level implied by a placement-priority distance.

    ``floor(n / e) + 1`` equals ``2**l + 1`` when ``e`` saturates the level-``l``
    allowance, so the inverse is ``ceil(log2(dist - 1))``. ``dist == 0`` (self)
    and ``dist == 1`` (more distinct sources than ``n``) map to level 0.
    """
    if dist == -1:
        raise ParameterError("dist -1 (unconnected) carries no router level")
    if dist < -1:
        raise ParameterError(f"invalid distance {dist}")
    if dist <= 1:
        return 0
    return (dist - 2).bit_length()


def cores_at_distance(level: int, cfg: HardwareConfig) -> int:
    """Slots at tree distance exactly ``level`` from any slot of a full grid."""
    if level == 0:
        return 1
    return (cfg.b - 1) * cfg.b ** (level - 1)


def max_fan_in(cfg: HardwareConfig) -> int:
    """Largest per-neuron fan-in the hardware can deliver."""
    return (cfg.n - 1) + sum(
        cores_at_distance(lvl, cfg) * fan_in_allowance(lvl, cfg) for lvl in range(1, cfg.L + 1)
    )


@dataclass(frozen=True, order=True)
class Violation:
    """One failed hardware constraint.

    ``kind`` is ``fan_in`` (too many distinct sources from one core), ``capacity``
    (too many neurons in a core; ``source_core`` is -1) or ``level`` (an edge is
    recorded at a level different from the slot geometry; ``allowed`` holds the
    geometric level, ``actual`` the recorded one).
    """

    kind: str
    target_core: int
    source_core: int
    level: int
    allowed: int
    actual: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target_core": self.target_core,
            "source_core": self.source_core,
            "level": self.level,
            "allowed": self.allowed,
            "actual": self.actual,
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    unplaced_count: int = 0
    ok: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ok", not self.violations)


def _fan_in_violations(
    targets: np.ndarray,
    sources: np.ndarray,
    units: np.ndarray,
    slot_of: np.ndarray,
    cfg: HardwareConfig,
) -> list[Violation]:
    """Count distinct ``units`` per (target core, source core) and compare to allowances."""
    if targets.size == 0:
        return []
    num_cores = max(int(targets.max()), int(sources.max())) + 1
    span = int(units.max()) + 1
    keys = (targets * num_cores + sources) * span + units
    keys = np.unique(keys)
    pair_keys, counts = np.unique(keys // span, return_counts=True)
    tgt = pair_keys // num_cores
    src = pair_keys % num_cores
    levels = tree_distance_matrix(slot_of[tgt], slot_of[src], cfg.b)
    allowed = cfg.allowances()[levels]
    bad = np.flatnonzero(counts > allowed)
    return [
        Violation("fan_in", int(tgt[i]), int(src[i]), int(levels[i]), int(allowed[i]), int(counts[i]))
        for i in bad
    ]


def validate_placement(placement: "Placement", net: "Network", cfg: HardwareConfig) -> ValidationReport:
    """Check a placement's placed and relayed edges against the hardware.

    Raises :class:`StructureError` when the placement does not describe ``net``
    or references slots outside the grid.
    """
    from .placer import FLAGGED, PLACED, RELAYED

    if placement.edges.shape != net.edges.shape or not np.array_equal(placement.edges, net.edges):
        raise StructureError("placement edges do not match the network")
    if not np.array_equal(placement.neuron_ids, net.neurons):
        raise StructureError("placement neurons do not match the network")
    core_slot = placement.core_slot
    num_cores = core_slot.size
    if num_cores and (core_slot.min() < 0 or core_slot.max() >= cfg.total_slots):
        raise StructureError("core_slot references a slot outside the grid")
    if np.unique(core_slot).size != num_cores:
        raise StructureError("core_slot is not injective")
    neuron_core = placement.neuron_core
    if neuron_core.size and neuron_core.max() >= num_cores:
        raise StructureError("neuron_core references an unknown core")
    if np.any(neuron_core < 0):
        missing = int(net.neurons[np.flatnonzero(neuron_core < 0)[0]])
        raise StructureError(f"neuron {missing} is not assigned to a core")
    for core, members in placement.relays.items():
        if not 0 <= core < num_cores:
            raise StructureError(f"relay core {core} has no slot")
        if np.any(net.index_of(members, strict=False) < 0):
            raise StructureError(f"relay core {core} copies an unknown neuron")

    violations: list[Violation] = []

    sizes = np.bincount(neuron_core, minlength=num_cores)
    for core, members in placement.relays.items():
        sizes[core] += len(members)
    for core in np.flatnonzero(sizes > cfg.n):
        violations.append(Violation("capacity", int(core), -1, 0, cfg.n, int(sizes[core])))

    status = placement.status
    unplaced = int(np.count_nonzero(status == FLAGGED))
    src_pos, dst_pos = net.edge_positions().T

    tgt_parts, src_parts, unit_parts = [], [], []
    span = max(net.neurons.size, 1)

    placed = np.flatnonzero(status == PLACED)
    cs = neuron_core[src_pos[placed]]
    cd = neuron_core[dst_pos[placed]]
    geo = tree_distance_matrix(core_slot[cd], core_slot[cs], cfg.b) if placed.size else np.zeros(0, np.int64)
    wrong = geo != placement.level[placed]
    for i in np.flatnonzero(wrong):
        violations.append(
            Violation("level", int(cd[i]), int(cs[i]), int(geo[i]), int(geo[i]), int(placement.level[placed[i]]))
        )
    inter = cs != cd
    tgt_parts.append(cd[inter])
    src_parts.append(cs[inter])
    unit_parts.append(src_pos[placed[inter]])

    relayed = np.flatnonzero(status == RELAYED)
    if relayed.size:
        via = placement.via[relayed]
        cd = neuron_core[dst_pos[relayed]]
        if np.any(via < 0) or np.any(via >= num_cores):
            raise StructureError("relayed edge references an unknown relay core")
        for r, x in zip(via.tolist(), net.edges[relayed, 0].tolist()):
            if x not in placement.relays.get(r, ()):
                raise StructureError(f"edge from {x} relayed via core {r} which does not copy it")
        geo = tree_distance_matrix(core_slot[cd], core_slot[via], cfg.b)
        wrong = geo != placement.level[relayed]
        for i in np.flatnonzero(wrong):
            violations.append(
                Violation("level", int(cd[i]), int(via[i]), int(geo[i]), int(geo[i]), int(placement.level[relayed[i]]))
            )
        tgt_parts.append(cd)
        src_parts.append(via)
        # relay copies are distinct units from the originals
        unit_parts.append(span + src_pos[relayed])

    for core, members in placement.relays.items():
        pos = net.index_of(members)
        origin = neuron_core[pos]
        tgt_parts.append(np.full(pos.size, core, dtype=np.int64))
        src_parts.append(origin)
        unit_parts.append(pos)

    targets = np.concatenate(tgt_parts).astype(np.int64)
    sources = np.concatenate(src_parts).astype(np.int64)
    units = np.concatenate(unit_parts).astype(np.int64)
    violations.extend(_fan_in_violations(targets, sources, units, core_slot, cfg))
    return ValidationReport(tuple(sorted(violations)), unplaced)
