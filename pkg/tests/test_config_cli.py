import json

import numpy as np
import pytest

from hmmlimits import cli
from hmmlimits.config import ExperimentConfig, check_model, config_for, from_json, load_config
from hmmlimits.errors import ParseError, RangeError

MODEL = {"delta": [[0.7, 0.3], [0.3, 0.7]], "emit": [[0.9, 0.1], [0.1, 0.9]]}
FLIP = {"family": "flip", "theta0": 0.3, "omega": [0.05, 0.45]}


@pytest.fixture()
def model_file(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(MODEL))
    return str(p)


def test_minimal_config_gets_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"command": "mixing", "model": MODEL}))
    cfg = load_config(p)
    assert (cfg.alpha, cfg.beta, cfg.J, cfg.L) == (0.5, 0.1, 50, 3)
    assert cfg.family is None and cfg.theta0 == 0.0


def test_range_and_parse_errors(tmp_path):
    with pytest.raises(RangeError):
        from_json({"model": MODEL, "family": {**FLIP, "theta0": 0.6}})
    with pytest.raises(RangeError):
        from_json({"model": MODEL, "family": FLIP, "theta": 0.01})
    with pytest.raises(RangeError):
        from_json({"command": "clt", "model": MODEL, "reps": 10})
    with pytest.raises(ParseError, match="reps"):
        from_json({"model": MODEL, "reps": "many"})
    with pytest.raises(ParseError, match="unknown field"):
        from_json({"model": MODEL, "bogus": 1})
    p = tmp_path / "broken.json"
    p.write_text('{"model":\n  {"delta": [1,}\n}')
    with pytest.raises(ParseError, match="line 2"):
        load_config(p)


def test_round_trip_is_canonical_and_idempotent():
    cfg = from_json({"command": "clt", "model": MODEL, "family": {"family": "flip", "theta0": 0.3},
                     "n_grid": [256, 1024], "seed": 7})
    again = from_json(json.loads(cfg.dumps()))
    assert again == cfg
    assert again.dumps() == cfg.dumps()
    assert cfg.family["omega"] == [0.01, 0.99]
    assert isinstance(cfg, ExperimentConfig) and len(cfg.digest()) == 64


def test_config_for_and_check_model(flip, bsc):
    cfg = config_for(flip, bsc, "validate")
    info = check_model(cfg)
    assert info["lambda2_modulus"] == pytest.approx(0.4)
    assert info["stationary"] == pytest.approx([0.5, 0.5])


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_exit_codes(tmp_path, model_file, capsys):
    out = ["--out", str(tmp_path / "runs")]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"delta": [[0.7, 0.4], [0.3, 0.7]], "emit": MODEL["emit"]}))
    assert _run(["validate", "--model", str(bad), *out], capsys)[0] == 3
    assert _run(["validate", "--model", model_file, *out], capsys)[0] == 0
    assert _run(["validate", *out], capsys)[0] == 2
    assert _run(["nonsense", *out], capsys)[0] == 2
    assert _run(["clt", "--model", model_file, "--family", "flip", "--theta0", "1.2", *out], capsys)[0] == 2
    code, _, err = _run(["clt", "--model", model_file, "--family", "flip", "--theta0", "0.3",
                         "--omega", "0.05,0.45", "--sigma2", "0.0001", "--reps", "100", *out], capsys)
    assert code == 1 and "DegenerateVariance" in err


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "500", "--seed", "3"],
    ["chernoff", "--ngrid", "100,300,1000", "--reps", "500", "--x", "0.05,0.1", "--seed", "2"],
    ["mle-fit", "--n", "400", "--seed", "5"],
])
def test_manifest_rerun_is_bit_identical(tmp_path, model_file, capsys, argv):
    runs = tmp_path / "runs"
    full = [*argv, "--model", model_file, "--family", "flip", "--theta0", "0.3", "--omega", "0.05,0.45",
            "--out", str(runs)]
    assert _run(full, capsys)[0] == 0
    first = next(runs.iterdir())
    assert _run([argv[0], "--config", str(first / "manifest.json"), "--out", str(runs)], capsys)[0] == 0
    second = [d for d in runs.iterdir() if d != first][0]
    assert second.name == first.name + "-2"
    assert _files(first) == _files(second)
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["input_hash"] == from_json(manifest["config"]).digest()
    assert set(manifest["outputs"]) == set(_files(first))


def test_summary_matches_report(tmp_path, model_file, capsys):
    code, out, _ = _run(["mixing", "--model", model_file, "--out", str(tmp_path / "runs")], capsys)
    assert code == 0
    d = next((tmp_path / "runs").iterdir())
    report = json.loads((d / "report.json").read_text())
    shown = {}
    for line in out.splitlines()[1:]:
        if line.startswith(("results.", "verdict.")):
            key, _, val = line.partition("  ")
            shown[key.strip()] = val.strip()
    assert shown
    for key, text in shown.items():
        section, name = key.split(".", 1)
        if text.startswith("(see"):
            continue
        assert json.loads(text) == report[section][name]
    psi = report["results"]["psi"]
    assert np.all(np.diff(psi) < 0)
    csv = (d / "psi.csv").read_bytes()
    assert b"\r" not in csv and csv.startswith(b"n,psi\n")
