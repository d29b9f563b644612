"""Command-line entry point: generate, place, validate, perturb-sweep, cost.

Every command writing a file also writes ``<out>.manifest.json`` recording the
command, inputs (with SHA-256), seed, hardware and outputs. Nothing time- or
host-dependent goes into any output, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .costmodel import SCHEMES, load_defaults, sweep, sweep_csv, with_overrides
from .errors import CapacityError, ParameterError, ParseError, StructureError
from .hwmodel import HardwareConfig, validate_placement
from .netgraph import CanonicalParams, Network, generate_canonical, load_network, perturb_remove_neurons, removal_count
from .placer import SPARE_POLICIES, Placement, auto_hardware, minimal_levels, place

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_CAPACITY = 4
EXIT_VALIDATION = 5
EXIT_IO = 6
EXIT_PARTIAL = 7

PERTURB_HEADER = ("removed", "trial", "cores_used", "flagged")


@dataclass
class RunManifest:
    command: str
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    hardware: dict | None = None
    outputs: list[str] = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text)


def _write_with_manifest(path: str | Path, text: str, manifest: RunManifest) -> None:
    _write(path, text)
    manifest.outputs = [str(path)]
    _write(f"{path}.manifest.json", manifest.to_json())


def _read_network(path: str) -> Network:
    try:
        return load_network(path)
    except OSError as exc:
        raise _IOFailure(str(exc)) from None


class _IOFailure(Exception):
    pass


def hardware_for(net: Network, n: int, b: int, levels: int | None) -> HardwareConfig:
    """Hardware with the requested levels, or the shallowest tree holding ``net``'s cores."""
    if levels is not None:
        return HardwareConfig(n, b, levels)
    return auto_hardware(net, n, b)


def perturbation_seed(seed: int, removed: int, trial: int) -> int:
    """Independent, reproducible seed for one (removal count, trial) cell."""
    return int(np.random.SeedSequence([seed, removed, trial]).generate_state(1)[0])


def perturbation_sweep(
    net: Network,
    cfg: HardwareConfig,
    removals: Iterable[int],
    trials: int,
    seed: int,
    spare_policy: str = "off",
    check=None,
) -> list[tuple[int, int, int, int]]:
    """Rows ``(removed, trial, cores_used, flagged)`` in (removed, trial) order.

    ``check`` is called with ``(perturbed_net, report)`` after every placement.
    """
    rows = []
    for removed in sorted(set(removals)):
        for trial in range(trials):
            perturbed = perturb_remove_neurons(net, removed, perturbation_seed(seed, removed, trial))
            report = place(perturbed, cfg, spare_policy)
            if check is not None:
                check(perturbed, report)
            rows.append((removed, trial, report.cores_used, report.flagged))
    return rows


def perturbation_csv(rows: Iterable[Sequence[int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PERTURB_HEADER)
    writer.writerows(rows)
    return buf.getvalue()


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "^" in part:
            base, exp = part.split("^")
            out.append(int(base) ** int(exp))
        else:
            out.append(int(part))
    return out


def _parse_range(text: str) -> range:
    lo, _, hi = text.partition(":")
    return range(int(lo), int(hi) + 1)


def _add_hw_flags(p: argparse.ArgumentParser, levels_required: bool = False) -> None:
    p.add_argument("--n", type=int, default=16, help="neurons per core (default 16)")
    p.add_argument("--b", type=int, default=4, help="router branching factor (default 4)")
    p.add_argument(
        "--levels",
        type=int,
        default=None,
        required=levels_required,
        help="router levels above R0 (default: shallowest tree that fits)",
    )
    p.add_argument("--hw-config", default=None, help="JSON file with keys n, b, L (overrides flags)")


def _hw_from_args(args, net: Network | None = None) -> HardwareConfig:
    if args.hw_config:
        try:
            return HardwareConfig.from_file(args.hw_config)
        except OSError as exc:
            raise _IOFailure(str(exc)) from None
    if net is None:
        return HardwareConfig(args.n, args.b, args.levels)
    return hardware_for(net, args.n, args.b, args.levels)


def cmd_generate(args) -> int:
    manifest = RunManifest(
        "generate",
        seed=args.seed,
        parameters={
            "n": args.n,
            "cores": args.cores,
            "b": args.b,
            "mode": args.mode,
            "max_level": args.max_level,
        },
    )
    if args.cores == 0:
        net = Network([], [])
    else:
        params = CanonicalParams(args.n, args.cores, args.b, args.mode, args.max_level)
        net = generate_canonical(params, args.seed)
    text = net.to_edge_list() if args.format == "edgelist" else net.to_json()
    _write_with_manifest(args.out, text, manifest)
    print(f"neurons={net.num_neurons} edges={net.num_edges}")
    return EXIT_OK


def cmd_place(args) -> int:
    net = _read_network(args.network)
    cfg = _hw_from_args(args, net)
    report = place(net, cfg, args.spare_policy, cover_mode=args.cover_mode, count_mode=args.count_mode)
    if args.out:
        manifest = RunManifest(
            "place",
            inputs={args.network: _sha256(args.network)},
            hardware=cfg.to_dict(),
            parameters={
                "spare_policy": args.spare_policy,
                "cover_mode": args.cover_mode,
                "count_mode": args.count_mode,
            },
        )
        _write_with_manifest(args.out, report.placement.to_json(), manifest)
    print(report.summary())
    return EXIT_OK if report.flagged == 0 else EXIT_PARTIAL


def cmd_validate(args) -> int:
    net = _read_network(args.network)
    try:
        text = Path(args.placement).read_text()
    except OSError as exc:
        raise _IOFailure(str(exc)) from None
    placement = Placement.from_json(text, net)
    if args.hw_config or args.levels is not None:
        cfg = _hw_from_args(args)
    else:
        top = int(placement.core_slot.max()) + 1 if placement.cores_used else 1
        cfg = HardwareConfig(args.n, args.b, minimal_levels(top, args.b))
    report = validate_placement(placement, net, cfg)
    for v in report.violations:
        print(
            f"violation kind={v.kind} target_core={v.target_core} source_core={v.source_core} "
            f"level={v.level} allowed={v.allowed} actual={v.actual}"
        )
    print(f"ok={str(report.ok).lower()} violations={len(report.violations)} unplaced={report.unplaced_count}")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_perturb_sweep(args) -> int:
    net = _read_network(args.network)
    cfg = _hw_from_args(args, net)
    if args.fractions:
        fractions = [float(x) for x in args.fractions.split(",") if x.strip()]
        for f in fractions:
            if not 0.0 <= f <= 1.0:
                raise ParameterError(f"fraction {f} outside [0, 1]")
        removals = [removal_count(net.num_neurons, f) for f in fractions]
        mode = {"fractions": fractions}
    else:
        rng = _parse_range(args.counts) if args.counts else range(1, net.num_neurons + 1)
        if rng.start < 0 or rng.stop - 1 > net.num_neurons:
            raise ParameterError(f"removal counts must lie in [0, {net.num_neurons}]")
        removals = list(rng)
        mode = {"counts": [rng.start, rng.stop - 1]}
    rows = perturbation_sweep(net, cfg, removals, args.trials, args.seed, args.spare_policy)
    manifest = RunManifest(
        "perturb-sweep",
        inputs={args.network: _sha256(args.network)},
        seed=args.seed,
        hardware=cfg.to_dict(),
        parameters={"trials": args.trials, "spare_policy": args.spare_policy, **mode},
    )
    _write_with_manifest(args.out, perturbation_csv(rows), manifest)
    print(f"rows={len(rows)}")
    return EXIT_OK


def cmd_cost(args) -> int:
    defaults = load_defaults(args.config)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for s in schemes:
        if s not in SCHEMES:
            raise ParameterError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    cfgs = [with_overrides(defaults[s], n=args.core_size) for s in schemes]
    sizes = _int_list(args.sizes)
    rows = sweep(sizes, cfgs)
    manifest = RunManifest(
        "cost",
        inputs={args.config: _sha256(args.config)} if args.config else {},
        parameters={"sizes": sizes, "schemes": [asdict(c) for c in sorted(cfgs, key=lambda c: c.scheme)]},
    )
    _write_with_manifest(args.out, sweep_csv(rows), manifest)
    print(f"rows={len(rows)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierplace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a canonical small-world network")
    p.add_argument("--n", type=int, default=16, help="neurons per population (default 16)")
    p.add_argument("--cores", type=int, required=True, help="number of populations")
    p.add_argument("--b", type=int, default=4, help="router branching factor (default 4)")
    p.add_argument("--mode", choices=("tree", "line"), default="tree")
    p.add_argument("--max-level", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "edgelist"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("place", help="place a network and print a summary")
    p.add_argument("network")
    _add_hw_flags(p)
    p.add_argument("--spare-policy", choices=SPARE_POLICIES, default="off")
    p.add_argument("--cover-mode", choices=("mutual", "undirected"), default="mutual")
    p.add_argument("--count-mode", choices=("distinct", "synapses"), default="distinct")
    p.add_argument("--out", default=None, help="placement JSON path")
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("validate", help="check a placement against the hardware")
    p.add_argument("network")
    p.add_argument("placement")
    _add_hw_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("perturb-sweep", help="place node-removal perturbations")
    p.add_argument("network")
    _add_hw_flags(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fractions", default=None, help="comma-separated removal fractions")
    group.add_argument("--counts", default=None, help="removal count range lo:hi (default 1:N)")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spare-policy", choices=SPARE_POLICIES, default="off")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb_sweep)

    p = sub.add_parser("cost", help="routing-memory sweep over network sizes")
    p.add_argument("--sizes", default=",".join(f"2^{k}" for k in range(10, 21)), help="comma list; 2^k allowed")
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--config", default=None, help="cost-model defaults JSON")
    p.add_argument("--core-size", type=int, default=None, help="override neurons per core for every scheme")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: parse failure: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapacityError as exc:
        print(f"error: capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except StructureError as exc:
        print(f"error: inconsistent inputs: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (_IOFailure, OSError) as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
