import json
import subprocess
import sys

import pytest

from multisym.cli import dumps_report, main

KG = {
    "model": {"name": "klein_gordon", "params": {"m": 1.0}},
    "grid": {"Nt": 24, "Nx": 32},
    "seed": 3,
    "experiments": [
        {"type": "solve", "phi0": [{"amplitude": 1.0, "wavenumber": 1}], "phidot0": []},
        {"type": "green", "kind": "retarded", "node": [10, 16]},
        {"type": "omega"},
        {"type": "bracket",
         "F": {"kind": "smeared_field", "modes": [{"amplitude": 1.0}], "window": {"start": 8, "order": 4}},
         "G": {"kind": "smeared_velocity", "modes": [{"amplitude": 1.0, "phase": 0.3}],
               "window": {"start": 9, "order": 4}}},
    ],
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg, indent=1))
    return str(path)


def test_run_writes_report_and_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, KG), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert [e["type"] for e in rep["experiments"]] == ["solve", "green", "omega", "bracket"]
    assert any(p.suffix == ".csv" for p in out.iterdir())


def test_reports_are_byte_stable_and_parallel_agrees(tmp_path):
    cfg = write(tmp_path, KG)
    outs = [tmp_path / n for n in ("a", "b", "c")]
    main(["run", cfg, "--out", str(outs[0])])
    main(["run", cfg, "--out", str(outs[1])])
    main(["run", cfg, "--parallel", "--out", str(outs[2])])
    texts = [(o / "report.json").read_bytes() for o in outs]
    assert texts[0] == texts[1] == texts[2]
    for p in outs[0].glob("*.csv"):
        assert p.read_bytes() == (outs[2] / p.name).read_bytes()


def test_empty_experiment_list(tmp_path):
    cfg = dict(KG, experiments=[])
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["experiments"] == []


def test_unknown_model_reports_its_line(tmp_path, capsys):
    cfg = write(tmp_path, dict(KG, model={"name": "nope"}))
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    line = next(i for i, s in enumerate(open(cfg), 1) if '"nope"' in s)
    assert f"cfg.json:{line}: config error" in err and "nope" in err


def test_broken_json_reports_its_line(tmp_path, capsys):
    cfg = write(tmp_path, '{\n "model": {"name": "klein_gordon"},\n "grid": {"Nt": 32 "Nx": 64}\n}\n')
    assert main(["run", cfg]) == 2
    assert "cfg.json:3: config error: invalid JSON" in capsys.readouterr().err


@pytest.mark.parametrize("experiment", [
    {"type": "green", "kind": "retarded", "node": [1, 0]},
    {"type": "green", "kind": "sideways", "node": [10, 0]},
    {"type": "teleport"},
    {"type": "bracket", "F": {"kind": "smeared_field", "modes": [], "window": {"start": 0, "order": 2}},
     "G": {"kind": "smeared_field", "modes": [], "window": {"start": 8, "order": 2}}},
])
def test_schema_violations_exit_two(tmp_path, experiment):
    assert main(["run", write(tmp_path, dict(KG, experiments=[experiment])), "--out", str(tmp_path / "o")]) == 2


def test_unknown_top_level_key(tmp_path, capsys):
    assert main(["run", write(tmp_path, dict(KG, colour="blue"))]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_singular_model_aborts_with_exit_three(tmp_path, capsys):
    cfg = dict(KG, model={"name": "degenerate"}, experiments=[KG["experiments"][0]])
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_verify_passes_for_klein_gordon(tmp_path, capsys):
    cfg = dict(KG, experiments=[], refinement=[1, 2])
    assert main(["verify", write(tmp_path, cfg), "--out", str(tmp_path / "v")]) == 0
    text = capsys.readouterr().out
    assert "peierls" in text and "fail" not in text
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["passed"] is True


def test_verify_flags_degenerate_model(tmp_path, capsys):
    cfg = dict(KG, model={"name": "degenerate"}, experiments=[])
    assert main(["verify", write(tmp_path, cfg), "--out", str(tmp_path / "v")]) == 1
    assert "skipped" in capsys.readouterr().out


def test_report_float_format():
    text = dumps_report({"b": 1.0, "a": [0.1, float("inf"), 2]})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text and '"inf"' in text and "1.0" in text


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, dict(KG, experiments=[]))
    proc = subprocess.run([sys.executable, "-m", "multisym", "run", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
