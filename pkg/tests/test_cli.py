from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from hierplace.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_PARTIAL,
    EXIT_USAGE,
    EXIT_VALIDATION,
    main,
    perturbation_seed,
)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def gt7(tmp_path, capsys):
    path = tmp_path / "c7.json"
    assert run(capsys, "generate", "--cores", 7, "--out", path)[0] == EXIT_OK
    return path


def test_generate_sizes(tmp_path, capsys):
    for cores, neurons in [(7, 112), (70, 1120), (0, 0)]:
        path = tmp_path / f"c{cores}.json"
        code, out, _ = run(capsys, "generate", "--cores", cores, "--out", path)
        assert code == EXIT_OK
        assert out.startswith(f"neurons={neurons} ")
        assert len(json.loads(path.read_text())["neurons"]) == neurons
        manifest = json.loads((tmp_path / f"c{cores}.json.manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["outputs"] == [str(path)]


def test_generate_edgelist(tmp_path, capsys):
    path = tmp_path / "c2.txt"
    assert run(capsys, "generate", "--cores", 2, "--format", "edgelist", "--out", path)[0] == EXIT_OK
    code, out, _ = run(capsys, "place", path)
    assert code == EXIT_OK and out.startswith("cores_used=2 flagged=0")


def test_place_ground_truth(gt7, tmp_path, capsys):
    out_path = tmp_path / "p.json"
    code, out, _ = run(capsys, "place", gt7, "--out", out_path)
    assert code == EXIT_OK
    assert out.strip() == "cores_used=7 flagged=0 max_level=2"
    data = json.loads(out_path.read_text())
    assert data["cores_used"] == 7
    manifest = json.loads(out_path.with_name("p.json.manifest.json").read_text())
    assert manifest["hardware"] == {"n": 16, "b": 4, "L": 2}
    assert str(gt7) in manifest["inputs"]


def test_place_empty(tmp_path, capsys):
    path = tmp_path / "empty.json"
    run(capsys, "generate", "--cores", 0, "--out", path)
    code, out, _ = run(capsys, "place", path)
    assert code == EXIT_OK and out.startswith("cores_used=0")


def test_place_line_mode_partial(tmp_path, capsys):
    path = tmp_path / "line.json"
    run(capsys, "generate", "--cores", 5, "--mode", "line", "--out", path)
    code, out, _ = run(capsys, "place", path, "--b", 4)
    assert code == EXIT_PARTIAL
    flagged = int(out.split("flagged=")[1].split()[0])
    assert flagged > 0


def test_place_parse_and_io_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "place", bad)[0] == EXIT_PARSE
    assert run(capsys, "place", tmp_path / "missing.json")[0] == EXIT_IO


def test_place_capacity_error(gt7, capsys):
    from hierplace.cli import EXIT_CAPACITY

    assert run(capsys, "place", gt7, "--levels", 1)[0] == EXIT_CAPACITY


def test_usage_errors(gt7, tmp_path, capsys):
    assert run(capsys, "place", gt7, "--n", 1)[0] == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["place"])
    assert exc.value.code == EXIT_USAGE
    assert run(capsys, "cost", "--schemes", "dram", "--out", tmp_path / "c.csv")[0] == EXIT_USAGE


def test_validate_ground_truth_and_tampered(gt7, tmp_path, capsys):
    placement = tmp_path / "p.json"
    run(capsys, "place", gt7, "--out", placement)
    code, out, _ = run(capsys, "validate", gt7, placement)
    assert code == EXIT_OK and "ok=true violations=0" in out

    data = json.loads(placement.read_text())
    # move neuron 0 from core 0 into core 1
    data["neuron_core"]["0"] = data["neuron_core"]["16"]
    tampered = tmp_path / "t.json"
    tampered.write_text(json.dumps(data))
    code, out, _ = run(capsys, "validate", gt7, tampered)
    assert code == EXIT_VALIDATION
    assert "violation kind=" in out and "ok=false" in out


def test_validate_missing_and_mismatched(gt7, tmp_path, capsys):
    assert run(capsys, "validate", gt7, tmp_path / "nope.json")[0] == EXIT_IO
    other = tmp_path / "c1.json"
    run(capsys, "generate", "--cores", 1, "--out", other)
    placement = tmp_path / "p.json"
    run(capsys, "place", other, "--out", placement)
    assert run(capsys, "validate", gt7, placement)[0] == EXIT_VALIDATION


def test_perturb_sweep_counts(gt7, tmp_path, capsys):
    out_path = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "perturb-sweep", gt7, "--out", out_path)
    assert code == EXIT_OK and out.strip() == "rows=560"
    rows = list(csv.DictReader(out_path.open()))
    assert len(rows) == 560
    assert all(int(r["cores_used"]) <= 7 for r in rows)
    assert all(int(r["cores_used"]) == 0 for r in rows if r["removed"] == "112")


def test_perturb_sweep_fractions(tmp_path, capsys):
    net = tmp_path / "c70.json"
    run(capsys, "generate", "--cores", 70, "--out", net)
    out_path = tmp_path / "frac.csv"
    code, _, _ = run(capsys, "perturb-sweep", net, "--fractions", "0.01,0.10,0.25", "--trials", 2, "--out", out_path)
    assert code == EXIT_OK
    rows = list(csv.DictReader(out_path.open()))
    assert [int(r["removed"]) for r in rows] == [11, 11, 112, 112, 280, 280]
    assert all(int(r["cores_used"]) <= 70 for r in rows)
    assert run(capsys, "perturb-sweep", net, "--fractions", "1.5", "--out", out_path)[0] == EXIT_USAGE


def test_perturbation_seed_distinct():
    seeds = {perturbation_seed(0, r, t) for r in range(20) for t in range(5)}
    assert len(seeds) == 100


def test_cost_default_sweep(tmp_path, capsys):
    out_path = tmp_path / "cost.csv"
    code, out, _ = run(capsys, "cost", "--out", out_path)
    assert code == EXIT_OK and out.strip() == "rows=33"
    rows = list(csv.DictReader(out_path.open()))
    at_top = {r["scheme"]: int(r["bits_total"]) for r in rows if r["network_size"] == str(2**20)}
    assert at_top["hierarchical"] < at_top["cam_mixed"] < at_top["crossbar_fixed"]


def test_cost_single(tmp_path, capsys):
    out_path = tmp_path / "one.csv"
    code, out, _ = run(capsys, "cost", "--sizes", "2^12", "--schemes", "crossbar_fixed", "--out", out_path)
    assert code == EXIT_OK and out.strip() == "rows=1"


def test_cost_custom_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schemes": {"hierarchical": {"n": 16, "b": 4}}}))
    out_path = tmp_path / "c.csv"
    code, _, _ = run(capsys, "cost", "--sizes", "256", "--schemes", "hierarchical", "--config", cfg, "--out", out_path)
    assert code == EXIT_OK
    row = list(csv.DictReader(out_path.open()))[0]
    assert row["bits_per_neuron"] == "11"


def test_module_entry_point(tmp_path):
    out_path = tmp_path / "c.json"
    proc = subprocess.run(
        [sys.executable, "-m", "hierplace.cli", "generate", "--cores", "2", "--out", str(out_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out_path.exists()
