import json

import pytest

from levy_homog.cli import COMMANDS, main

QUICK = "configs/quick.json"

EXPECTED = {
    "check-kernel": ["kernel_report.json"],
    "solve-stationary": ["stationary.csv", "stationary.json"],
    "solve-cell": ["cell.json", "corrector.csv"],
    "tabulate-heff": ["heff.csv"],
    "solve-eps": ["eps_0/u_manifest.json"],
    "solve-eff": ["effective/u_manifest.json"],
    "converge": ["errors.csv", "study.json"],
    "properties": ["properties.json"],
}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    with open(QUICK, encoding="utf-8") as fh:
        cfg = json.load(fh)
    cfg["problem"]["slow_n"] = 16
    cfg["problem"]["fast_n"] = 32
    cfg["experiment"]["T"] = 0.02
    cfg["experiment"]["n_stationary"] = 64
    cfg["experiment"]["p_list"] = [-1.0, 0.0, 1.0]
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


def write_cfg(tmp_path, cfg, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.mark.parametrize("command", COMMANDS)
def test_command_writes_outputs(command, small_config, tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    out = tmp_path / "out"
    assert main([command, "--config", str(small_config[0]), "--out", str(out), "--threads", "2"]) == 0
    for name in EXPECTED[command]:
        assert (out / name).exists(), name
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["command"] == command
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])


def test_properties_has_entry_per_property(small_config, tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    assert main(["properties", "--config", str(small_config[0]), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "properties.json").read_text())
    names = json.dumps(rep)
    for prop in ("comparison", "convex", "lipschitz"):
        assert prop in names


def test_converge_is_reproducible(small_config, tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    for d in ("a", "b"):
        assert main(["converge", "--config", str(small_config[0]), "--out", str(tmp_path / d), "--threads", "2"]) == 0
    assert (tmp_path / "a" / "errors.csv").read_bytes() == (tmp_path / "b" / "errors.csv").read_bytes()


def test_env_overrides_out(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv("LEVY_HOMOG_OUT", str(tmp_path / "env"))
    assert main(["check-kernel", "--config", str(small_config[0]), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "run_manifest.json").exists()
    assert not (tmp_path / "flag").exists()


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"problem": {\n  "dim": 1,,\n}}')
    assert main(["check-kernel", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "line 2" in err and "column" in err


def test_unknown_subcommand(tmp_path):
    assert main(["frobnicate", "--config", QUICK]) == 1


def test_cell_commands_need_gamma_above_half(small_config, tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    cfg = json.loads(json.dumps(small_config[1]))
    cfg["problem"]["kernel"]["gamma"] = 0.5
    path = write_cfg(tmp_path, cfg)
    for command in ("solve-cell", "tabulate-heff"):
        assert main([command, "--config", path, "--out", str(tmp_path / command)]) == 1


def test_non_commensurate_eps(small_config, tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    cfg = json.loads(json.dumps(small_config[1]))
    cfg["experiment"]["eps"] = [0.3]
    path = write_cfg(tmp_path, cfg)
    assert main(["solve-eps", "--config", path, "--out", str(tmp_path / "o")]) == 1
