"""Routing-memory cost models.

Three schemes are compared on the same canonical workloads:

``hierarchical``
    Per neuron and per router level: an enable bit, a source-core address
    within that level's scope, and a group index selecting which ``1/2**l``
    fraction of the source core is admitted.
``crossbar_fixed``
    Fixed fan-in ``K`` crossbar rows plus a destination address; fan-in above
    ``K`` is served by relay neurons.
``cam_mixed``
    ``K`` CAM entries of source tags plus a destination address; multicast
    destination reuse divides the relay count by a mitigation constant.

Synaptic weight storage is not counted by any model.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from importlib import resources
from typing import Iterable, Sequence

from .errors import ParameterError, ParseError
from .netgraph import canonical_mean_fan_in

SCHEMES = ("hierarchical", "crossbar_fixed", "cam_mixed")
CSV_HEADER = ("network_size", "scheme", "effective_neurons", "bits_total", "bits_per_neuron")


@dataclass(frozen=True)
class CostModelParams:
    scheme: str
    n: int = 256
    b: int = 4
    fan_in_limit: int = 256
    bits_per_cam_entry: int = 16
    dest_bits: int = 32
    relay_arity: int | None = None
    mitigation: int = 1

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("n", "b", "fan_in_limit", "bits_per_cam_entry", "mitigation"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.dest_bits < 0:
            raise ParameterError("dest_bits must be non-negative")
        if self.scheme == "hierarchical" and self.b < 2:
            raise ParameterError("hierarchical scheme needs b >= 2")
        if self.relay_arity is not None and self.relay_arity < 2:
            raise ParameterError("relay_arity must be >= 2")

    @property
    def arity(self) -> int:
        return self.relay_arity if self.relay_arity is not None else self.fan_in_limit


@dataclass(frozen=True)
class MemoryReport:
    network_size: int
    effective_neurons: int
    bits_total: int
    scheme: str

    @property
    def bits_per_neuron(self) -> Fraction:
        """Routing bits per network neuron (relay neurons amortized in)."""
        if self.network_size == 0:
            return Fraction(0)
        return Fraction(self.bits_total, self.network_size)


def load_defaults(path=None) -> dict[str, CostModelParams]:
    """Default parameters per scheme, from the bundled JSON file unless ``path`` is given."""
    if path is None:
        text = resources.files("hierplace").joinpath("data/cost_defaults.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
        return {name: CostModelParams(scheme=name, **fields) for name, fields in raw["schemes"].items()}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"bad cost-model configuration: {exc}") from None


def hierarchy_levels(net_size: int, n: int, b: int) -> int:
    """Router levels needed for ``net_size`` neurons in cores of ``n``: ceil(log_b(ceil(size/n)))."""
    cores = -(-net_size // n)
    levels, span = 0, 1
    while span < cores:
        span *= b
        levels += 1
    return levels


def hierarchical_bits_per_neuron(levels: int, b: int) -> int:
    bits = 0
    for lvl in range(1, levels + 1):
        scope = (b - 1) * b ** (lvl - 1)
        # enable bit + ceil(log2(scope)) address bits + group index of depth lvl
        bits += 1 + (scope - 1).bit_length() + lvl
    return bits


def memory_hierarchical(net_size: int, params: CostModelParams) -> MemoryReport:
    if params.scheme != "hierarchical":
        raise ParameterError("memory_hierarchical needs scheme='hierarchical'")
    if net_size < 0:
        raise ParameterError("net_size must be non-negative")
    if net_size == 0:
        return MemoryReport(0, 0, 0, params.scheme)
    levels = hierarchy_levels(net_size, params.n, params.b)
    per_neuron = hierarchical_bits_per_neuron(levels, params.b)
    return MemoryReport(net_size, net_size, per_neuron * net_size, params.scheme)


def relay_expansion(fan_in: int, K: int, relay_arity: int | None = None) -> int:
    """Relay neurons needed to deliver ``fan_in`` inputs to a neuron accepting ``K``.

    Each relay aggregates up to ``relay_arity`` (default ``K``) inputs; layers
    are added until the last layer fits into the target.
    """
    arity = K if relay_arity is None else relay_arity
    if K < 2 or arity < 2:
        raise ParameterError("K and relay_arity must be >= 2")
    relays = 0
    while fan_in > K:
        fan_in = -(-fan_in // arity)
        relays += fan_in
    return relays


def _fixed_report(net_size: int, mean_fan_in: float, params: CostModelParams, per_neuron: int, divisor: int) -> MemoryReport:
    if net_size < 0:
        raise ParameterError("net_size must be non-negative")
    if net_size == 0:
        return MemoryReport(0, 0, 0, params.scheme)
    relays = relay_expansion(math.ceil(mean_fan_in), params.fan_in_limit, params.arity)
    effective = net_size + -(-net_size * relays // divisor)
    return MemoryReport(net_size, effective, effective * per_neuron, params.scheme)


def memory_crossbar_fixed(net_size: int, mean_fan_in: float, params: CostModelParams) -> MemoryReport:
    if params.scheme != "crossbar_fixed":
        raise ParameterError("memory_crossbar_fixed needs scheme='crossbar_fixed'")
    per_neuron = params.fan_in_limit + params.dest_bits
    return _fixed_report(net_size, mean_fan_in, params, per_neuron, 1)


def memory_cam_mixed(net_size: int, mean_fan_in: float, params: CostModelParams) -> MemoryReport:
    if params.scheme != "cam_mixed":
        raise ParameterError("memory_cam_mixed needs scheme='cam_mixed'")
    per_neuron = params.fan_in_limit * params.bits_per_cam_entry + params.dest_bits
    return _fixed_report(net_size, mean_fan_in, params, per_neuron, params.mitigation)


def memory(net_size: int, mean_fan_in: float, params: CostModelParams) -> MemoryReport:
    if params.scheme == "hierarchical":
        return memory_hierarchical(net_size, params)
    if params.scheme == "crossbar_fixed":
        return memory_crossbar_fixed(net_size, mean_fan_in, params)
    return memory_cam_mixed(net_size, mean_fan_in, params)


def workload_fan_in(net_size: int, n: int, b: int) -> float:
    """Mean fan-in of the tree-mode canonical network with ``net_size`` neurons."""
    cores = -(-net_size // n)
    return canonical_mean_fan_in(n, cores, b)


def fit_cam_mitigation(target_ratio: float, net_size: int, defaults: dict[str, CostModelParams]) -> float:
    """Mitigation divisor making cam_mixed/hierarchical equal ``target_ratio`` at ``net_size``.

    Solved on the continuous relaxation (no integer rounding of relay counts).
    """
    hier = defaults["hierarchical"]
    cam = defaults["cam_mixed"]
    fan = workload_fan_in(net_size, cam.n, hier.b)
    relays = relay_expansion(math.ceil(fan), cam.fan_in_limit, cam.arity)
    h = hierarchical_bits_per_neuron(hierarchy_levels(net_size, hier.n, hier.b), hier.b)
    per_neuron = cam.fan_in_limit * cam.bits_per_cam_entry + cam.dest_bits
    return relays / (target_ratio * h / per_neuron - 1)


@dataclass(frozen=True)
class SweepRow:
    network_size: int
    scheme: str
    effective_neurons: int
    bits_total: int
    bits_per_neuron: Fraction


def sweep(sizes: Sequence[int], cfgs: Iterable[CostModelParams]) -> list[SweepRow]:
    """Evaluate every scheme at every size on the canonical workload.

    The workload fan-in at each size comes from the tree-mode canonical network
    built with the hierarchical core size and branching (the first
    hierarchical entry in ``cfgs``, else the first entry).
    """
    cfgs = list(cfgs)
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise ParameterError("sizes must be ascending")
    if not cfgs:
        return []
    ref = next((c for c in cfgs if c.scheme == "hierarchical"), cfgs[0])
    rows = []
    for size in sizes:
        fan = workload_fan_in(size, ref.n, ref.b)
        for params in sorted(cfgs, key=lambda c: c.scheme):
            rep = memory(size, fan, params)
            rows.append(SweepRow(size, params.scheme, rep.effective_neurons, rep.bits_total, rep.bits_per_neuron))
    return rows


def format_decimal(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{float(value):.6f}"


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.network_size, r.scheme, r.effective_neurons, r.bits_total, format_decimal(r.bits_per_neuron)])
    return buf.getvalue()


def with_overrides(params: CostModelParams, **overrides) -> CostModelParams:
    return replace(params, **{k: v for k, v in overrides.items() if v is not None})


def params_dict(params: CostModelParams) -> dict:
    return asdict(params)
