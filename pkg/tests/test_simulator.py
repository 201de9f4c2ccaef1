import json
import math

import numpy as np
import pytest
import yaml

from flsim.cli import main
from flsim.errors import ConfigError
from flsim.simulator import (
    CSV_HEADER,
    Experiment,
    ExperimentConfig,
    RoundRecord,
    RoundSnapshot,
    detect_convergence,
    read_records_csv,
    reward_stabilization_round,
    rolling_mean,
    run_and_write,
    run_experiment,
    summarize,
    write_records_csv,
)

SMALL = {
    "name": "small",
    "fleet": {"high": 1, "mid": 2, "low": 3, "exposed_steps": 2},
    "workload": {"dataset": {"n_train": 600, "n_test": 200, "separation": 5.0, "condition": 30.0}},
    "params": {"batch_size": 16, "local_epochs": 2, "participants": 3, "max_rounds": 6,
               "local_lr": 0.002},
    "seeds": {"data": 1, "variance": 2, "rl": 3, "train": 4},
}


def small(**sections):
    return ExperimentConfig.from_dict(SMALL).replace(**sections)


def rec(i, acc, t=1.0, e=1.0):
    return RoundRecord(i, t, e, acc, 0.0, 1, False)


# -- config -----------------------------------------------------------------

def test_unknown_keys_rejected():
    bad = dict(SMALL, fleet={"high": 1, "mid": 1, "low": 1, "turbo": True})
    with pytest.raises(ConfigError, match="turbo"):
        ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SMALL, extra={}))


def test_seeds_must_be_explicit():
    with pytest.raises(ConfigError, match="seeds"):
        ExperimentConfig.from_dict({k: v for k, v in SMALL.items() if k != "seeds"})


@pytest.mark.parametrize("section,values", [
    ("params", {"participants": 99}),
    ("rl", {"epsilon": 1.5}),
    ("rl", {"qstore_mode": "global"}),
    ("policy", {"name": "greedy"}),
    ("policy", {"name": "cluster_fixed"}),
    ("data", {"non_iid_fraction": 2.0}),
    ("variance", {"interference_prob": -0.1}),
    ("workload", {"dataset": {"source": "ftp"}}),
])
def test_invalid_values_rejected(section, values):
    with pytest.raises(ConfigError):
        small(**{section: values})


def test_yaml_roundtrip(tmp_path):
    cfg = small(rl={"epsilon": 0.2})
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg


def test_reference_config_loads():
    from pathlib import Path
    cfg = ExperimentConfig.load(Path(__file__).parents[1] / "configs" / "reference.yaml")
    assert (cfg.fleet.high, cfg.fleet.mid, cfg.fleet.low) == (3, 7, 10)
    assert cfg.params.participants == 5


# -- loop -------------------------------------------------------------------

def test_zero_rounds():
    exp = Experiment(small(params={"max_rounds": 0}))
    before = exp.initial_model(0).params.copy()
    assert exp.run() == []
    np.testing.assert_array_equal(exp.initial_model(0).params, before)


@pytest.mark.parametrize("policy", ["autofl", "random", "power", "performance"])
def test_records_are_well_formed(policy):
    cfg = small(policy={"name": policy})
    records = run_experiment(cfg)
    assert 1 <= len(records) <= cfg.params.max_rounds
    for r in records:
        assert 0.0 <= r.accuracy <= 100.0
        assert r.energy_global >= 0.0 and r.t_round > 0.0
        assert r.n_participants == cfg.params.participants
        assert math.fsum(r.energy_local.values()) == pytest.approx(r.energy_global, rel=1e-9)
        assert set(r.rewards) == {d for d, _ in r.participants}


def test_cluster_policy_runs():
    records = run_experiment(small(policy={"name": "cluster_fixed", "cluster": [1, 1, 1]}))
    assert records and all(r.n_participants == 3 for r in records)


def test_identical_runs_identical_records():
    a = run_experiment(small())
    b = run_experiment(small())
    assert a == b


def test_rl_seed_does_not_move_shards():
    a = Experiment(small())
    b = Experiment(small(seeds={"rl": 99}))
    assert all((x == y).all() for x, y in zip(a.shards.indices, b.shards.indices))


def test_stragglers_excluded_for_baselines_only():
    fixed = {d: {"cpu_util": 0.0, "bandwidth_mbps": 80.0} for d in range(6)}
    fixed[5] = {"cpu_util": 0.0, "bandwidth_mbps": 1.0}
    cfg = small(policy={"name": "random"}, params={"participants": 6, "max_rounds": 1},
                variance={"fixed": fixed})
    r = run_experiment(cfg)[0]
    assert r.excluded == (5,)
    assert r.t_round < 1e-3
    auto = run_experiment(cfg.replace(policy={"name": "autofl"}))[0]
    assert auto.excluded == () and auto.t_round > 1e-2


def test_snapshot_outcome_is_pure():
    exp = Experiment(small())
    model = exp.initial_model(0)
    snap = RoundSnapshot(exp, 0, 0, model, exp.conditions(0, 0), 10.0)
    choices = {0: exp.fleet[0].default_target(), 4: exp.fleet[4].default_target()}
    a, b = snap.outcome(choices), snap.outcome(choices)
    assert a.rewards == b.rewards and a.t_round == b.t_round
    np.testing.assert_array_equal(snap.model.params, model.params)


def test_warmup_shares_q_store():
    exp = Experiment(small(rl={"warmup_episodes": 2}))
    exp.run()
    assert exp.warmup_records and len(exp.qstore) > 0
    assert {r.episode for r in exp.warmup_records} == {-2, -1}


def test_qstore_written_and_reloadable(tmp_path):
    q = tmp_path / "q.txt"
    cfg = small(output={"qstore": str(q)})
    run_and_write(cfg)
    warm = small(rl={"init_qstore": str(q)})
    assert len(Experiment(warm).qstore) > 0


# -- convergence and summary -----------------------------------------------

def test_convergence_examples():
    accs = [10, 95, 95, 95, 95, 95]
    assert detect_convergence([rec(i, a) for i, a in enumerate(accs)], 90, 5) == 1
    assert detect_convergence([rec(i, 50) for i in range(10)], 90) is None
    osc = [91 if i % 2 == 0 else 89 for i in range(30)]
    assert detect_convergence([rec(i, a) for i, a in enumerate(osc)], 90, 5) is None


def test_ppw_ratio_identical_runs():
    rs = [rec(i, 95, t=2.0, e=3.0) for i in range(6)]
    assert summarize(rs, 90, baseline=rs).ppw_ratio == pytest.approx(1.0)


def test_ppw_halving_energy_doubles():
    base = [rec(i, 95, t=2.0, e=4.0) for i in range(6)]
    half = [rec(i, 95, t=2.0, e=2.0) for i in range(6)]
    assert summarize(half, 90, baseline=base).ppw_ratio == pytest.approx(2.0)


def test_ppw_none_when_never_converging():
    s = summarize([rec(i, 50) for i in range(10)], 90)
    assert s.ppw is None and not s.converged and s.ppw_ratio is None


def test_summarize_empty_rejected():
    with pytest.raises(ValueError):
        summarize([])


def test_rolling_mean_and_stabilization():
    np.testing.assert_allclose(rolling_mean([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    flat = [0.0] * 60
    assert reward_stabilization_round(flat, 20) == 19
    ramp = list(np.linspace(-100, 0, 40)) + [0.0] * 60
    r = reward_stabilization_round(ramp, 20, 0.1)
    assert r is not None and 40 <= r <= 100
    assert reward_stabilization_round([0.0] * 10, 20) is None


# -- output -----------------------------------------------------------------

def test_csv_roundtrip_and_header(tmp_path):
    records = run_experiment(small())
    path = tmp_path / "r.csv"
    write_records_csv(path, records)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = read_records_csv(path)
    assert [(b.round, b.t_round, b.accuracy, b.explored) for b in back] == \
        [(r.round, r.t_round, r.accuracy, r.explored) for r in records]


def test_csv_bytes_identical(tmp_path):
    for name in ("a", "b"):
        cfg = small(output={"records_csv": str(tmp_path / f"{name}.csv")})
        run_and_write(cfg)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- CLI --------------------------------------------------------------------

def write_cfg(tmp_path, name="c.yaml", **sections):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(small(**sections).to_dict()))
    return path


def test_cli_run_and_summarize(tmp_path, capsys):
    cfg = write_cfg(tmp_path, output={"records_csv": str(tmp_path / "a.csv"),
                                      "summary_json": str(tmp_path / "a.json")})
    assert main(["run", "--config", str(cfg)]) == 0
    assert json.loads((tmp_path / "a.json").read_text())["policy"] == "autofl"
    base = write_cfg(tmp_path, "b.yaml", policy={"name": "random"},
                     output={"records_csv": str(tmp_path / "b.csv")})
    assert main(["run", "--config", str(base)]) == 0
    capsys.readouterr()
    assert main(["summarize", "--records", str(tmp_path / "a.csv"),
                 "--baseline", str(tmp_path / "b.csv"), "--target-accuracy", "50"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "ppw_ratio" in out


def test_cli_sweep(tmp_path):
    d = tmp_path / "cfgs"
    d.mkdir()
    write_cfg(d, "x.yaml")
    write_cfg(d, "y.yaml", policy={"name": "power"})
    assert main(["sweep", "--configs", str(d), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "y.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("fleet: {high: 1, bogus: 2}\n")
    assert main(["run", "--config", str(bad)]) == 2


def test_cli_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, params={"local_lr": 1e300},
                    workload={"dataset": {"separation": 1e20}})
    with np.errstate(all="ignore"):
        assert main(["run", "--config", str(cfg)]) == 3


def test_cli_oracle(tmp_path, capsys):
    small_fleet = {"high": 1, "mid": 1, "low": 2, "exposed_steps": 1}
    ok = write_cfg(tmp_path, "ok.yaml", fleet=small_fleet, params={"participants": 2})
    assert main(["oracle", "--config", str(ok)]) == 0
    assert json.loads(capsys.readouterr().out)["evaluations"] == 6 * 4
    big = write_cfg(tmp_path, "big.yaml")
    assert main(["oracle", "--config", str(big), "--budget", "10"]) == 4
