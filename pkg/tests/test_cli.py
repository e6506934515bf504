"""Config parsing, experiment dispatch, and output determinism."""

import json
from pathlib import Path

import pytest

from msalab import cli


MINIMAL = """
[model]
d = 1
n = 1
h = 0.25

[experiment]
kind = "cover"
seed = 42
trials = 10
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_minimal_config(tmp_path):
    cfg = cli.parse_config(write_config(tmp_path, MINIMAL))
    assert cfg.experiment == "cover"
    assert cfg.seed == 42
    assert cfg.model.n == 1
    assert len(cfg.digest) == 16


def test_parse_missing_file():
    with pytest.raises(cli.ConfigError):
        cli.parse_config("/nonexistent/nope.toml")


def test_parse_collects_all_violations(tmp_path):
    bad = """
[model]
d = 1
n = 1
h = -0.5
u_minus = 3.0

[ledger]
zeta = 0.3
zeta2 = 0.4
gamma = 2.0

[experiment]
kind = "wegner"
trials = 0
"""
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(write_config(tmp_path, bad))
    text = "\n".join(err.value.violations)
    assert "model.h" in text
    assert "u_minus" in text
    assert "ledger" in text
    assert "seed is required" in text
    assert "trials" in text
    assert len(err.value.violations) >= 5


def test_cover_experiment_runs(tmp_path):
    cfg_text = MINIMAL + f'\n[experiment.options]\ncases = 12\nmax_nd = 2\n'
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    code = cli.main(["cover", "--config", str(path), "--out", str(out)])
    assert code == 0
    table = (out / "cover.csv").read_text().splitlines()
    assert len(table) == 13  # header + 12 cases
    assert table[0].startswith("case,")
    records = [json.loads(line) for line in (out / "cover.jsonl").read_text().splitlines()]
    assert all(r["config_digest"] == cli.parse_config(path).digest for r in records)
    assert all("version" in r for r in records)


def test_rerun_byte_identical(tmp_path):
    cfg_text = MINIMAL + "\n[experiment.options]\ncases = 8\nmax_nd = 2\n"
    path = write_config(tmp_path, cfg_text)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["cover", "--config", str(path), "--out", str(out1)]) == 0
    assert cli.main(["cover", "--config", str(path), "--out", str(out2)]) == 0
    assert (out1 / "cover.csv").read_bytes() == (out2 / "cover.csv").read_bytes()
    assert (out1 / "cover.jsonl").read_bytes() == (out2 / "cover.jsonl").read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg_text = MINIMAL + "\n[experiment.options]\ncases = 8\nmax_nd = 2\n"
    path = write_config(tmp_path, cfg_text)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    cli.main(["cover", "--config", str(path), "--out", str(out1)])
    cli.main(["cover", "--config", str(path), "--out", str(out2), "--seed", "7"])
    assert (out1 / "cover.csv").read_bytes() != (out2 / "cover.csv").read_bytes()


def test_env_var_out_dir(tmp_path, monkeypatch):
    path = write_config(tmp_path, MINIMAL + "\n[experiment.options]\ncases = 4\nmax_nd = 1\n")
    target = tmp_path / "env_out"
    monkeypatch.setenv(cli.OUT_ENV_VAR, str(target))
    assert cli.main(["cover", "--config", str(path)]) == 0
    assert (target / "cover.csv").exists()


def test_classify_experiment(tmp_path):
    cfg_text = """
[model]
d = 1
n = 1
h = 0.25

[experiment]
kind = "classify"
seed = 3
trials = 1

[experiment.options]
side = 18.0
theta = 0.4
gaps = [0.8, 1.5]
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["classify", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "classify.csv").read_text().splitlines()
    assert len(lines) == 3


def test_initial_step_experiment(tmp_path):
    cfg_text = """
[model]
d = 1
n = 1
h = 0.25

[experiment]
kind = "initial-step"
seed = 11
trials = 40

[experiment.options]
side = 40.0
p0 = 0.1
theta = 0.25
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["initial-step", "--config", str(path), "--out", str(out)]) == 0
    rec = [json.loads(l) for l in (out / "initial_step.jsonl").read_text().splitlines()]
    assert rec[0]["passed"] is True


def test_msa_requires_illustrative_flag(tmp_path):
    cfg_text = """
[model]
d = 1
n = 1
h = 0.25

[schedule]
kind = "geometric"
l0 = 12.0
steps = 2
factor = 2.0

[experiment]
kind = "msa"
seed = 5
trials = 8

[experiment.options]
stage = "1"
energy = 0.01
theta = 0.5
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["msa", "--config", str(path), "--out", str(out)]) == 2  # refused
    assert cli.main(["msa", "--config", str(path), "--out", str(out), "--illustrative"]) == 0
    table = (out / "msa_stage_1.csv").read_text().splitlines()
    assert len(table) == 3


def test_trials_zero_override_rejected(tmp_path):
    path = write_config(tmp_path, MINIMAL.replace('kind = "cover"', 'kind = "initial-step"'))
    assert cli.main(["initial-step", "--config", str(path), "--trials", "0"]) == 2


def test_dump_matrix(tmp_path):
    path = write_config(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert cli.main(["dump-matrix", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "matrix.txt").read_text().splitlines()
    assert lines[0].startswith("# dim")
    i, j, v = lines[1].split()
    float(v)


def test_wegner_experiment(tmp_path):
    cfg_text = """
[model]
d = 1
n = 1
h = 0.25

[experiment]
kind = "wegner"
seed = 8
trials = 30

[experiment.options]
side = 16.0
interval_low = 0.5
interval_width = 0.08
batches = 5
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["wegner", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "wegner.csv").read_text().splitlines()
    assert len(lines) == 4  # header + base + double_interval + double_side


def test_two_volume_experiment(tmp_path):
    cfg_text = """
[model]
d = 1
n = 2
h = 0.25
interaction_bound = 0.5
interaction_range = 1.0

[experiment]
kind = "two-volume"
seed = 4
trials = 12

[experiment.options]
side = 6.0
offset = 30.0
epsilons = [0.0, 0.1]
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["two-volume", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "two_volume.csv").read_text().splitlines()
    assert len(lines) == 3


def test_lemma_check_experiment(tmp_path):
    cfg_text = """
[model]
d = 1
n = 1
h = 0.25

[experiment]
kind = "lemma-check"
seed = 9
trials = 1

[experiment.options]
kind = "resolvent-inequality"
instances = 3
ell = 8.0
energy_value = 0.8
"""
    path = write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    assert cli.main(["lemma-check", "--config", str(path), "--out", str(out)]) == 0
    rows = (out / "lemma_check.csv").read_text().splitlines()
    assert len(rows) == 4
