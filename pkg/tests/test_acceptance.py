"""Acceptance runs for the headline reproduction targets.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.
"""

from __future__ import annotations

import collections
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import EMITTED
from hierplace.cli import main, perturbation_sweep
from hierplace.costmodel import CostModelParams, load_defaults, memory_hierarchical, sweep
from hierplace.errors import CapacityError
from hierplace.hwmodel import HardwareConfig, Violation, level_from_dist, validate_placement
from hierplace.netgraph import CanonicalParams, Network, generate_canonical
from hierplace.placer import FLAGGED, PLACED, CliqueCover, distance_matrix, place, place_connections
from oracles import min_cores_bruteforce, random_small_network

GT_CASES = {7: HardwareConfig(16, 4, 2), 70: HardwareConfig(16, 4, 4)}


@pytest.mark.criterion("ground truth placement (7 and 70 cores, zero flagged, <5 s each)")
@pytest.mark.parametrize("C", [7, 70])
def test_ground_truth_placement(C):
    cfg = GT_CASES[C]
    start = time.perf_counter()
    net = generate_canonical(CanonicalParams(16, C, 4))
    report = place(net, cfg)
    elapsed = time.perf_counter() - start
    print(f"GT C={C}: {report.summary()} in {elapsed:.3f} s")
    assert net.num_neurons == 16 * C
    assert report.cores_used == C
    assert report.flagged == 0
    assert validate_placement(report.placement, net, cfg).ok
    assert elapsed < 5.0


@pytest.mark.criterion("validator soundness (all emitted placements valid, exact corrupted record)")
def test_validator_soundness():
    for C, cfg in GT_CASES.items():
        net = generate_canonical(CanonicalParams(16, C, 4))
        for spare in ("off", "extra_cores"):
            place(net, cfg, spare)  # checked by the suite-wide validator hook
    line = generate_canonical(CanonicalParams(16, 5, 4, "line"))
    place(line, HardwareConfig(16, 4, 2), "extra_cores")
    assert EMITTED["placements"] > 0 and not EMITTED["invalid"]

    # corrupt the ground-truth record: one inter-core edge claims the wrong router level
    net = generate_canonical(CanonicalParams(16, 7, 4))
    cfg = GT_CASES[7]
    p = place(net, cfg).placement
    idx = int(np.flatnonzero((p.status == PLACED) & (p.level == 1))[0])
    level = p.level.copy()
    level[idx] = 2
    src, dst = (int(v) for v in net.edges[idx])
    expected = Violation("level", int(p.neuron_core[dst]), int(p.neuron_core[src]), 1, 1, 2)
    report = validate_placement(p.with_changes(level=level), net, cfg)
    print(f"corrupted record -> {report.violations}")
    assert not report.ok
    assert report.violations == (expected,)

    # and a placement that admits every flagged boundary edge
    cfg2 = HardwareConfig(16, 4, 2)
    cover = CliqueCover(tuple(tuple(range(k * 16, k * 16 + 16)) for k in range(5)))
    forced = place_connections(line, cover, np.arange(5), cfg2)
    status = np.where(forced.status == FLAGGED, PLACED, forced.status).astype(np.int8)
    level = np.where(forced.status == FLAGGED, 2, forced.level)
    report = validate_placement(forced.with_changes(status=status, level=level), line, cfg2)
    assert report.violations == (Violation("fan_in", 3, 4, 2, 4, 8), Violation("fan_in", 4, 3, 2, 4, 8))


@pytest.mark.criterion("perturbation envelope (1..N removals x 5 trials, both networks, <10 min)")
def test_perturbation_envelope():
    start = time.perf_counter()
    for C, cfg in GT_CASES.items():
        net = generate_canonical(CanonicalParams(16, C, 4))
        N = net.num_neurons
        rows = perturbation_sweep(net, cfg, range(1, N + 1), trials=5, seed=0)
        cores = {(r, t): c for r, t, c, _ in rows}
        assert len(rows) == 5 * N
        assert max(cores.values()) <= C
        assert all(cores[(N, t)] == 0 for t in range(5))
        flagged = [f for *_, f in rows]
        print(
            f"C={C}: rows={len(rows)} max_cores={max(cores.values())} "
            f"placements_with_flags={sum(f > 0 for f in flagged)} total_flagged={sum(flagged)}"
        )
        if C == 70:
            for removed in (11, 112):  # 1% and 10% of 1120
                got = [cores[(removed, t)] for t in range(5)]
                print(f"  removed={removed}: cores={got}")
                assert all(abs(c - C) <= 1 for c in got)
    elapsed = time.perf_counter() - start
    print(f"perturbation sweep: {elapsed:.1f} s")
    assert elapsed < 600


@pytest.mark.criterion("distance/level round trip (n = 4..256, exhaustive, <1 s)")
def test_distance_level_round_trip():
    start = time.perf_counter()
    checked = 0
    for n in (4, 8, 16, 32, 64, 128, 256):
        for lvl in range(1, n.bit_length()):
            e = n >> lvl
            dist = distance_matrix(np.array([[0, e], [e, 0]]), n)[0, 1]
            assert dist == 2**lvl + 1
            assert level_from_dist(int(dist)) == lvl
            checked += 1
    assert checked == sum(range(2, 9))
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion("small-instance oracle (>=100 networks, >=95% within +1, <5 min)")
def test_small_instance_oracle():
    cfg = HardwareConfig(4, 2, 2)
    start = time.perf_counter()
    diffs = collections.Counter()
    infeasible = 0
    flagged_runs = 0
    seed = 0
    while sum(diffs.values()) < 300:
        num, edges = random_small_network(seed)
        seed += 1
        opt = min_cores_bruteforce(num, edges, cfg.n, cfg.b, cfg.L)
        if opt is None:
            infeasible += 1
            continue
        try:
            report = place(Network(range(num), edges), cfg)
        except CapacityError:
            diffs["capacity"] += 1
            continue
        flagged_runs += report.flagged > 0
        diffs[report.cores_used - opt] += 1
    total = sum(diffs.values())
    within = sum(v for k, v in diffs.items() if k != "capacity" and k <= 1)
    elapsed = time.perf_counter() - start
    print(
        f"small instances: {total} compared, {infeasible} without a zero-flag placement skipped, "
        f"cores_used - optimum distribution {dict(sorted(diffs.items(), key=str))}, "
        f"{flagged_runs} heuristic runs with flags, {elapsed:.1f} s"
    )
    assert total >= 100
    assert within / total >= 0.95
    assert elapsed < 300


@pytest.mark.criterion("memory comparison at 2^20 neurons (ordering, ratios and absolutes within 2x)")
def test_memory_comparison():
    rows = {r.scheme: r for r in sweep([2**20], load_defaults().values())}
    mbit = {k: r.bits_total / 1e6 for k, r in rows.items()}
    cam_ratio = rows["cam_mixed"].bits_total / rows["hierarchical"].bits_total
    xbar_ratio = rows["crossbar_fixed"].bits_total / rows["hierarchical"].bits_total
    print(
        "Mbit: "
        + ", ".join(f"{k}={v:.1f}" for k, v in sorted(mbit.items()))
        + f"; cam/hier={cam_ratio:.1f}x crossbar/hier={xbar_ratio:.1f}x"
    )
    assert mbit["hierarchical"] < mbit["cam_mixed"] < mbit["crossbar_fixed"]
    for got, ref in ((cam_ratio, 98), (xbar_ratio, 307)):
        assert ref / 2 <= got <= ref * 2
    for scheme, ref in (("hierarchical", 67), ("cam_mixed", 6591), ("crossbar_fixed", 20649)):
        assert ref / 2 <= mbit[scheme] <= ref * 2


@pytest.mark.criterion("calibration (n=16, b=4, two router levels: 10 +/- 1 bits per neuron)")
def test_calibration():
    rep = memory_hierarchical(256, CostModelParams("hierarchical", n=16, b=4))
    print(f"bits per neuron at two router levels: {rep.bits_per_neuron}")
    assert abs(rep.bits_per_neuron - 10) <= 1


@pytest.mark.criterion("determinism (every command byte-identical on rerun)")
def test_cli_determinism(tmp_path, capsys):
    def run_all(root: Path) -> list[str]:
        outs = []
        root.mkdir()
        net = root / "net.json"
        line = root / "line.txt"
        commands = [
            ["generate", "--cores", "7", "--out", net],
            ["generate", "--cores", "5", "--mode", "line", "--format", "edgelist", "--out", line],
            ["place", net, "--out", root / "p.json"],
            ["place", line, "--spare-policy", "extra_cores", "--out", root / "pl.json"],
            ["validate", net, root / "p.json"],
            ["perturb-sweep", net, "--counts", "1:40", "--seed", "3", "--out", root / "s.csv"],
            ["perturb-sweep", net, "--fractions", "0.01,0.1,0.25", "--out", root / "f.csv"],
            ["cost", "--out", root / "c.csv"],
        ]
        for cmd in commands:
            main([str(c) for c in cmd])
            outs.append(capsys.readouterr().out)
        return outs

    # same paths on both runs so the manifests agree too
    root = tmp_path / "run"
    first_out = run_all(root)
    first = {p.name: p.read_bytes() for p in root.iterdir()}
    for p in root.iterdir():
        p.unlink()
    root.rmdir()
    second_out = run_all(root)
    second = {p.name: p.read_bytes() for p in root.iterdir()}
    print(f"determinism: {len(first)} files compared")
    assert first_out == second_out
    assert first.keys() == second.keys() and len(first) == 14
    for name in first:
        assert first[name] == second[name], name
