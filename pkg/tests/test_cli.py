import json

import pytest

from eqpart.cli import main


def test_cubes_command_prints_summary(tmp_path, capsys):
    out = tmp_path / "tree.json"
    dump = tmp_path / "space.json"
    rc = main(
        ["cubes", "--space", "interval", "--atoms", "1024",
         "--out", str(out), "--dump-space", str(dump)]
    )
    captured = capsys.readouterr().out
    assert rc == 0
    assert "cell axioms" in captured
    doc = json.loads(out.read_text())
    assert doc["config"]["space"] == "interval"
    assert "tree" in doc and "generations" in doc["tree"]
    cloud = json.loads(dump.read_text())["space"]
    assert set(cloud) == {"kind", "atom_count", "d_hint", "atoms"}
    assert cloud["atom_count"] == 1024


def test_partition_command_json_and_csv(tmp_path, capsys):
    out_json = tmp_path / "part.json"
    rc = main(
        ["partition", "--space", "gasket", "--level", "8", "--N", "16", "--out", str(out_json)]
    )
    assert rc == 0
    doc = json.loads(out_json.read_text())
    part = doc["partition"]
    assert part["N"] == 16
    assert set(part["params"]) >= {"n", "m", "M", "c3", "c4"}
    region = part["regions"][0]
    assert set(region) == {
        "id", "atom_ids", "measure", "nucleus_center",
        "inner_radius", "outer_center", "outer_radius",
    }

    out_csv = tmp_path / "labels.csv"
    rc = main(
        ["partition", "--space", "gasket", "--level", "8", "--N", "16",
         "--out", str(out_csv), "--format", "csv"]
    )
    assert rc == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == "atom_id,region_id"
    assert len(lines) == 2 + 3**8


def test_partition_quasi_flag(capsys):
    rc = main(["partition", "--space", "plus", "--atoms", "2048", "--N", "10", "--quasi"])
    assert rc == 0


def test_plus_equal_measure_small_n_is_rejected(capsys):
    # the exact-mass construction needs N above the working-scale floor; the
    # comparable-mass variant (above) has no such requirement
    rc = main(["partition", "--space", "plus", "--atoms", "2048", "--N", "10"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_partition_reports_resolution_errors(capsys):
    # far more regions than the atom cloud can support
    rc = main(["partition", "--space", "interval", "--atoms", "256", "--N", "128"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_quad_command_csv(tmp_path, capsys):
    out = tmp_path / "quad.csv"
    rc = main(
        ["quad", "--space", "interval", "--atoms", "16384", "--Ns", "16,32",
         "--out", str(out), "--format", "csv"]
    )
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == "space,N,f_name,error,bound,mesh,separation,ratio"
    assert len(lines) == 2 + 2 * 3  # two N values, three test functions


def test_identical_configs_produce_identical_bytes(tmp_path, monkeypatch):
    # same config twice (the output directory override is not part of it)
    args = [
        "partition", "--space", "gasket", "--level", "8", "--seed", "7",
        "--N", "16", "--out", "part.json",
    ]
    monkeypatch.setenv("EQPART_OUTDIR", str(tmp_path / "a"))
    assert main(args) == 0
    monkeypatch.setenv("EQPART_OUTDIR", str(tmp_path / "b"))
    assert main(args) == 0
    assert (tmp_path / "a" / "part.json").read_bytes() == (
        tmp_path / "b" / "part.json"
    ).read_bytes()


def test_outdir_environment_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("EQPART_OUTDIR", str(tmp_path / "redirected"))
    rc = main(["cubes", "--space", "interval", "--atoms", "512", "--out", "tree.json"])
    assert rc == 0
    assert (tmp_path / "redirected" / "tree.json").exists()


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["partition", "--space", "moebius"])
    assert exc.value.code == 2
