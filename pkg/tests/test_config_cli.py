import json
import subprocess
import sys

import pytest

from nonhyp import cli
from nonhyp.cone import CheckReport, ConditionCheck
from nonhyp.config import ConfigError, load_config, parse_config

from conftest import CONFIGS

CANONICAL_MAP = {"P": [[3, 0, 1.0], [1, 2, 1.0]], "Q": [[0, 3, 1.0], [2, 1, 1.0]], "X": [], "Y": []}
# cheap shadow run: few samples and trials
QUICK = {
    "grids": {"cone_samples": 500, "shadow_samples": 500},
    "shadow": {"trials": 3, "length": 8},
    "seed": 5,
}


def cfg_text(**extra) -> str:
    return json.dumps({"map": CANONICAL_MAP, **extra})


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- parsing


def test_canonical_degrees():
    cfg = parse_config(cfg_text())
    assert (cfg.k, cfg.k_prime) == (1, 1)
    assert cfg.seed is None and cfg.tolerances.z_min == 1e-9


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.cfg")):
        cfg = load_config(path)
        assert cfg.seed is not None, path


def test_even_degree_rejected():
    text = json.dumps({"map": {**CANONICAL_MAP, "P": [[2, 2, 1.0]]}})
    with pytest.raises(ConfigError, match="deg P must be odd"):
        parse_config(text)


def test_seed_required_for_stochastic():
    cfg = parse_config(cfg_text())
    with pytest.raises(ConfigError, match="seed required"):
        cfg.require_seed("shadow")
    with pytest.raises(ConfigError, match="seed required"):
        cfg.require_seed("all")
    assert cfg.require_seed("certify") is None


def test_syntax_error_names_line():
    text = '{\n  "map": {\n    "P": [[3, 0, 1.0]],,\n  }\n}'
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(text)


@pytest.mark.parametrize(
    "extra, message",
    [
        ({"colour": 1}, "unknown key colour"),
        ({"grids": {"conjugacy": 10, "fine": 2}}, "unknown key grids.fine"),
        ({"tolerances": {"z_min": -1}}, "tolerances.z_min must be positive"),
        ({"grids": {"conjugacy": 2.5}}, "grids.conjugacy must be a positive integer"),
        ({"conjugacy": {"self_check": 1}}, "self_check must be true or false"),
        ({"seed": -3}, "seed must be"),
        ({"seed": True}, "seed must be"),
        ({"output": 5}, "output must be"),
    ],
)
def test_bad_values(extra, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(cfg_text(**extra))


@pytest.mark.parametrize(
    "map_, message",
    [
        ({"Q": CANONICAL_MAP["Q"]}, "missing key map.P"),
        ({**CANONICAL_MAP, "Z": []}, "unknown key map.Z"),
        ({**CANONICAL_MAP, "P": []}, "map.P needs at least one term"),
        ({**CANONICAL_MAP, "P": [[3, 0]]}, r"map.P\[0\]"),
        ({**CANONICAL_MAP, "P": [[3, -1, 1.0]]}, "non-negative"),
        ({**CANONICAL_MAP, "P": [[3, 0, "one"]]}, "coefficient"),
        ({**CANONICAL_MAP, "P": [[3, 0, 1.0], [1, 1, 1.0]]}, "map.P"),
    ],
)
def test_bad_map(map_, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(json.dumps({"map": map_}))


def test_mixed_degree_perturbation_grouped():
    cfg = parse_config(json.dumps({"map": {**CANONICAL_MAP, "Y": [[4, 0, 0.1], [0, 5, 0.2], [2, 2, 0.3]]}}))
    assert [f.degree for f in cfg.spec.Y] == [4, 5]


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


# ---------------------------------------------------------------- CLI


def test_indefinite_exit_hypothesis(tmp_path):
    code = cli.main(["certify", "--config", str(CONFIGS / "indefinite.cfg"), "--out", str(tmp_path)])
    assert code == cli.EXIT_HYPOTHESIS
    report = (tmp_path / "report.txt").read_text()
    assert "FAILED" in report and "B" in report


def test_pure_powers_names_all_tensors(tmp_path):
    assert cli.main(["certify", "--config", str(CONFIGS / "pure_powers.cfg"), "--out", str(tmp_path)]) == 1
    status = (tmp_path / "report.txt").read_text().splitlines()[-1]
    for name in "ABCDEH":
        assert name in status


def test_certify_ok_reports_margins(tmp_path):
    assert cli.main(["certify", "--config", str(CONFIGS / "canonical.cfg"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "report.txt").read_text().splitlines()
    margins = [ln for ln in lines if ".margin." in ln or ln.startswith("margin.")]
    assert margins and all("(samples: " in ln for ln in margins)
    assert lines[-1] == "status = ok"


@pytest.mark.parametrize(
    "argv",
    [
        ["certify", "--config", "/nonexistent/run.cfg"],
        ["certify", "--config", str(CONFIGS / "canonical.cfg"), "--threads", "0"],
        ["certify", "--config", str(CONFIGS / "canonical.cfg"), "--seed", "-1"],
    ],
)
def test_io_and_argument_errors(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_IO


def test_bad_config_exit_io(tmp_path):
    path = write_cfg(tmp_path, "{ not json")
    assert cli.main(["certify", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_missing_seed_exit_io(tmp_path):
    path = write_cfg(tmp_path, cfg_text())
    assert cli.main(["shadow", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_IO
    assert not (tmp_path / "o" / "shadow.csv").exists()


def test_seed_flag_supplies_seed(tmp_path):
    path = write_cfg(tmp_path, cfg_text(grids=QUICK["grids"], shadow=QUICK["shadow"]))
    out = tmp_path / "o"
    assert cli.main(["shadow", "--config", str(path), "--out", str(out), "--seed", "9", "--threads", "4"]) == 0
    assert (out / "shadow.csv").read_text().startswith("orbit,k,px,py,Fqx,Fqy,err")


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = parse_config(cfg_text(output=str(tmp_path / "from_cfg")))
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "from_env"))
    assert cli.output_dir("flag", cfg).name == "flag"
    assert cli.output_dir(None, cfg).name == "from_cfg"
    assert cli.output_dir(None, parse_config(cfg_text())).name == "from_env"
    monkeypatch.delenv(cli.OUT_ENV)
    assert str(cli.output_dir(None, parse_config(cfg_text()))) == "."


def test_env_var_output(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["certify", "--config", str(CONFIGS / "canonical.cfg")]) == 0
    assert (tmp_path / "envout" / "report.txt").exists()


def test_shadow_run_deterministic(tmp_path):
    path = write_cfg(tmp_path, cfg_text(**QUICK))
    for name in ("a", "b"):
        assert cli.main(["shadow", "--config", str(path), "--out", str(tmp_path / name)]) == 0
    for f in ("shadow.csv", "report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    report = (tmp_path / "a" / "report.txt").read_text()
    assert "resimulation" in report and "margin.box_forward" in report


def test_failed_margin_exit_code(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        return CheckReport([ConditionCheck("box_forward", 10, 1, -1e-3, -1e-3)])

    monkeypatch.setattr(cli, "verify_shadowing_conditions", failing)
    path = write_cfg(tmp_path, cfg_text(**QUICK))
    assert cli.main(["shadow", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_MARGIN
    assert "FAILED" in (tmp_path / "o" / "report.txt").read_text()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "nonhyp.cli", "certify", "--config", str(CONFIGS / "indefinite.cfg"),
         "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert "not positive definite" in proc.stderr


def test_verbose_logs_timings(tmp_path, caplog):
    with caplog.at_level("INFO"):
        cli.main(["certify", "--config", str(CONFIGS / "canonical.cfg"), "--out", str(tmp_path), "-v"])
    assert "certify done in" in caplog.text
    assert "done in" not in (tmp_path / "report.txt").read_text()
