import json
import os

import numpy as np
import pytest

from netdrift import config as config_mod
from netdrift.cli import main
from netdrift.drift import ReplayStream
from netdrift.errors import ParseError, ValidationError

ADALINE_CFG = """
[experiment]
seed = 42
repetitions = 3
horizon = 400
steady-window = 0.5

[network]
topology = ring:5

[risk]
model = square

[drift]
process = rw-opt
base = 1.0, -0.5
trq = 0.001

[learner:atc]
variant = atc
step-size = 0.01

[learner:cons]
variant = consensus
step-size = 0.01
"""


@pytest.fixture
def adaline_cfg(tmp_path):
    p = tmp_path / "adaline.cfg"
    p.write_text(ADALINE_CFG)
    return str(p)


# ---------------------------------------------------------------------------
# parsing and presets
# ---------------------------------------------------------------------------

def test_preset_stagger_parameters():
    cfg = config_mod.parse_config(preset="paper:stagger")
    assert cfg.horizon == 120
    assert cfg.repetitions == 100
    assert cfg.label_noise == 0.1
    assert cfg.model_spec == "logistic:rho=0.1"
    assert cfg.roc_ticks == (40, 80, 120)
    atc = [l for l in cfg.learners if l.name == "atc"][0]
    assert atc.step_size == 0.25
    plan, network, model = config_mod.build_plan(cfg)
    assert network.n_nodes == 125
    dim = config_mod.resolve_dim(cfg)
    assert dim == 3


def test_preset_rw_gauss_parameters():
    cfg = config_mod.parse_config(preset="paper:rw-gauss")
    assert cfg.model_spec == "logistic:rho=0.01"
    assert cfg.drift_process == "rw-mean:cov=0.01"
    assert cfg.label_noise == 0.1
    atc = [l for l in cfg.learners if l.name == "atc"][0]
    assert atc.step_size == 0.005
    plan, network, _ = config_mod.build_plan(cfg)
    assert network.n_nodes == 200


def test_preset_a9a_parameters_and_missing_data_guard():
    cfg = config_mod.parse_config(preset="paper:a9a")
    assert cfg.dim == 123
    assert cfg.model_spec == "logistic:rho=5"
    assert cfg.repetitions == 100
    atc = [l for l in cfg.learners if l.name == "atc"][0]
    assert atc.step_size == 0.02
    with pytest.raises(ValidationError):
        config_mod.build_plan(cfg)   # no data path supplied, never downloads


def test_unknown_preset():
    with pytest.raises(ParseError):
        config_mod.parse_config(preset="paper:nope")


def test_seed_mandatory(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[learner:a]\nvariant = atc\nstep-size = 0.1\n")
    with pytest.raises(ValidationError):
        config_mod.parse_config(path=str(p))


def test_overrides_and_hash_stability(adaline_cfg):
    a = config_mod.parse_config(path=adaline_cfg)
    b = config_mod.parse_config(path=adaline_cfg)
    assert a.content_hash() == b.content_hash()
    c = config_mod.parse_config(path=adaline_cfg,
                                overrides=["experiment.seed=43"])
    assert c.seed == 43
    assert c.content_hash() != a.content_hash()


def test_bad_override_shape(adaline_cfg):
    with pytest.raises(ParseError):
        config_mod.parse_config(path=adaline_cfg, overrides=["justakey"])


def test_stagger_horizon_cap():
    with pytest.raises(ValidationError):
        cfg = config_mod.parse_config(
            preset="paper:stagger", overrides=["experiment.horizon=200"])
        config_mod.build_plan(cfg)


# ---------------------------------------------------------------------------
# cli subcommands
# ---------------------------------------------------------------------------

def test_validate_config_output(adaline_cfg, capsys):
    assert main(["validate-config", "--config", adaline_cfg]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["seed"] == 42
    assert echo["n_nodes"] == 5
    assert echo["learners"] == ["atc", "cons"]


def test_run_outputs_and_byte_reproducibility(adaline_cfg, tmp_path, capsys):
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    for out in (out1, out2):
        assert main(["run", "--config", adaline_cfg, "--out", str(out)]) == 0
    names = sorted(os.listdir(out1))
    assert "er_atc.csv" in names and "er_cons.csv" in names
    assert "manifest.json" in names
    for name in names:
        a = (out1 / name).read_bytes()
        b = (out2 / name).read_bytes()
        assert a == b, name


def test_manifest_lists_all_files_with_hashes(adaline_cfg, tmp_path):
    out = tmp_path / "m"
    main(["run", "--config", adaline_cfg, "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    emitted = {n for n in os.listdir(out) if n != "manifest.json"}
    assert set(manifest["files"]) == emitted
    import hashlib
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["master_seed"] == 42
    assert manifest["metadata"]["paired_sampling"] is True


def test_run_divergence_exit_code(adaline_cfg, tmp_path):
    # consensus over an even ring cannot be stabilized: diagnostic exit
    code = main(["run", "--config", adaline_cfg, "--out", str(tmp_path / "x"),
                 "--set", "network.topology=ring:4",
                 "--set", "experiment.horizon=4000"])
    assert code == 2


def test_learner_subset_flag(adaline_cfg, tmp_path):
    out = tmp_path / "sub"
    assert main(["run", "--config", adaline_cfg, "--out", str(out),
                 "--learners", "atc"]) == 0
    assert not (out / "er_cons.csv").exists()
    assert (out / "er_atc.csv").exists()
    code = main(["run", "--config", adaline_cfg, "--out", str(out),
                 "--learners", "nope"])
    assert code == 1


def test_output_env_override(adaline_cfg, tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("NETDRIFT_OUT", str(target))
    assert main(["run", "--config", adaline_cfg]) == 0
    assert (target / "er_atc.csv").exists()


def test_gen_data_and_replay_round_trip(adaline_cfg, tmp_path):
    stream_file = tmp_path / "s.jsonl"
    assert main(["gen-data", "--config", adaline_cfg, "--horizon", "30",
                 "--file", str(stream_file)]) == 0
    replay = ReplayStream(stream_file)
    chunk = replay.next_chunk()
    assert chunk.features.shape == (30, 5, 2)
    assert chunk.optimizers is not None


def test_predict_matches_theory_module(adaline_cfg, capsys):
    assert main(["predict", "--config", adaline_cfg,
                 "--formula", "epsilon-bound"]) == 0
    res = json.loads(capsys.readouterr().out)
    # certified constants for the identity-covariance linear model:
    # sigma_v2 = 4 M sigma_z^2 = 8, lam_max/lam_min = 1 -> 2 mu
    assert abs(res["value"] - 2.0 * 0.01) < 1e-12
    assert res["in_regime"] is True

    assert main(["predict", "--config", adaline_cfg,
                 "--formula", "optimal-mu"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert abs(res["value"] - np.sqrt(0.001 / 8.0)) < 1e-12

    assert main(["predict", "--config", adaline_cfg,
                 "--formula", "tracking-bound"]) == 0
    res = json.loads(capsys.readouterr().out)
    expected = 8.0 * 0.01 / 4 + 0.001 / (4 * 0.01) + 2.0 * 0.001
    assert abs(res["value"] - expected) < 1e-12


def test_run_emits_theory_overlay(adaline_cfg, tmp_path):
    out = tmp_path / "ov"
    assert main(["run", "--config", adaline_cfg, "--out", str(out),
                 "--learners", "atc",
                 "--set", "theory.overlays=steady-state-er",
                 "--set", "theory.rv-draws=20000",
                 "--set", "drift.trq=0"]) == 0
    overlay = (out / "er_atc_steady_state_er_theory.csv").read_text().splitlines()
    assert overlay[0] == "tick,mean,stderr"
    value = float(overlay[1].split(",")[1])
    # overlay should sit near the long-run simulated level
    sim = [float(l.split(",")[1]) for l in
           (out / "er_atc.csv").read_text().splitlines()[200:]]
    assert abs(value - np.mean(sim)) < 0.5 * np.mean(sim)
    manifest = json.loads((out / "manifest.json").read_text())
    assert any(v.startswith("atc:theory") for v in manifest["overlays"])
