import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hilbert_rwm import cli, runner
from hilbert_rwm.config import ConfigError, config_from_dict, load_calibration, load_config
from hilbert_rwm.kernel import ChainState, ProposalParams, run_chain
from hilbert_rwm.potentials import Zero
from hilbert_rwm.spde import optimal_ell
from hilbert_rwm.spectral import PowerLaw
from hilbert_rwm.streams import ChainRng, stream

BASE = {
    "experiment": "acceptance_sweep",
    "N_grid": [32],
    "ell_grid": [0.5, "optimal"],
    "replicas": 2,
    "steps": 300,
    "master_seed": 17,
    "covariance": {"law": "power", "kappa": 1.0},
    "potential": {"kind": "zero"},
}

SMALL = {
    "acceptance_sweep": {},
    "q_distribution": {"N_grid": [16, 64], "samples": 3000, "ell_grid": [1.0]},
    "drift_diffusion": {"N_grid": [8, 16], "inner_mc": 2000, "ell_grid": [1.0],
                        "potential": {"kind": "diagonal_quadratic", "a": 1.0}},
    "zeta_concentration": {"N_grid": [16, 32], "samples": 500},
    "noise_accumulation": {"N_grid": [16], "replicas": 40, "ell_grid": ["optimal"]},
    "weak_convergence": {"N_grid": [8, 16], "replicas": 60, "ell_grid": ["optimal"]},
}


def cfg_for(name, **over):
    raw = dict(BASE, experiment=name, **SMALL[name])
    raw.update(over)
    return config_from_dict(raw)


def write_toml(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---- streams --------------------------------------------------------------

def test_streams_are_distinct_and_reproducible():
    draws = {(c, r, role): stream(5, r, role, c).random(4).tobytes()
             for c in (0, 1) for r in (0, 1) for role in ("init", "noise", "accept", "inner")}
    assert len(set(draws.values())) == len(draws)
    assert stream(5, 1, "noise", 1).random(4).tobytes() == draws[(1, 1, "noise")]


def test_block_draws_equal_sequential_draws():
    a = stream(3, 0, "noise").standard_normal((7, 5))
    g = stream(3, 0, "noise")
    b = np.stack([g.standard_normal(5) for _ in range(7)])
    assert a.tobytes() == b.tobytes()
    u = stream(3, 0, "accept").random(9)
    g = stream(3, 0, "accept")
    assert u.tobytes() == np.array([g.random() for _ in range(9)]).tobytes()


# ---- config ---------------------------------------------------------------

def test_config_kappa_s_examples(tmp_path):
    ok = dict(BASE, s=0.4)
    assert config_from_dict(ok).s == 0.4
    with pytest.raises(ConfigError) as e:
        config_from_dict(dict(BASE, s=0.5))
    assert any("trace-class" in p and "kappa - 1/2" in p for p in e.value.problems)


def test_config_missing_kind_and_all_problems_listed():
    raw = dict(BASE, potential={"a": 1.0}, N_grid=[0], T=-1)
    with pytest.raises(ConfigError) as e:
        config_from_dict(raw)
    probs = e.value.problems
    assert any("potential.kind" in p for p in probs)
    assert any("N_grid" in p for p in probs)
    assert any("`T`" in p for p in probs)
    raw = {k: v for k, v in BASE.items() if k != "covariance"}
    with pytest.raises(ConfigError, match="covariance"):
        config_from_dict(raw)
    with pytest.raises(ConfigError, match="covariance.kappa"):
        config_from_dict(dict(BASE, covariance={"law": "power"}))
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict(dict(BASE, colour="red"))
    with pytest.raises(ConfigError, match="experiment"):
        config_from_dict(dict(BASE, experiment="nope"))
    with pytest.raises(ConfigError, match="ell_grid"):
        config_from_dict(dict(BASE, ell_grid=[-1.0]))


def test_config_explicit_and_sobolev_checks():
    with pytest.raises(ConfigError, match="explicit covariance"):
        config_from_dict(dict(BASE, covariance={"law": "explicit", "lambdas": [1.0, 0.5]}))
    lam = list(1.0 / np.arange(1, 200))
    cfg = config_from_dict(dict(BASE, covariance={"law": "explicit", "lambdas": lam}))
    assert cfg.n_store == 32 + 64
    with pytest.raises(ConfigError, match="potential.s"):
        config_from_dict(dict(BASE, s=0.1, potential={"kind": "sobolev_squared", "s": 0.3}))


def test_load_config_parse_error_has_line(tmp_path):
    p = write_toml(tmp_path / "bad.toml", 'experiment = "acceptance_sweep"\nN_grid = [1,\n')
    with pytest.raises(ConfigError, match="line"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")


def test_shipped_configs_validate():
    root = Path(__file__).resolve().parent.parent / "configs"
    files = sorted(root.glob("*.toml"))
    assert len(files) == 6
    assert {load_config(f).experiment for f in files} == set(SMALL)


def test_config_hash_stable():
    a = config_from_dict(dict(BASE))
    b = config_from_dict(dict(BASE))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != config_from_dict(dict(BASE, master_seed=18)).config_hash()


def test_calibration_loads():
    cal = load_calibration()
    assert cal["acceptance_sweep"]["rate_tolerance"] == 0.015
    assert cal["weak_convergence"]["ks_max"] == 0.06


# ---- run_experiment -------------------------------------------------------

def csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


@pytest.mark.parametrize("name", list(SMALL))
def test_each_experiment_runs_and_is_deterministic(name, tmp_path):
    cfg = cfg_for(name)
    rc1 = runner.run_experiment(cfg, threads=1, out=str(tmp_path / "a"))
    rc2 = runner.run_experiment(cfg, threads=3, out=str(tmp_path / "b"))
    assert rc1 in (0, 2) and rc1 == rc2
    a, b = csv_bytes(tmp_path / "a"), csv_bytes(tmp_path / "b")
    assert a and a == b
    ja = {p.name: p.read_bytes() for p in (tmp_path / "a").glob("*.json") if p.name != "manifest.json"}
    jb = {p.name: p.read_bytes() for p in (tmp_path / "b").glob("*.json") if p.name != "manifest.json"}
    assert ja == jb
    for f in (tmp_path / "a").glob("*.csv"):
        rows = list(csv.reader(f.open(encoding="utf-8")))
        assert len(rows) >= 2 and all(len(r) == len(rows[0]) for r in rows)
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config_hash"] == cfg.config_hash()
    assert set(man["files"]) | {"manifest.json"} == {p.name for p in (tmp_path / "a").iterdir()}
    assert man["rng"]["cells"] and man["exit_status"] == rc1
    # nothing left behind in the parent
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b"]


def test_acceptance_schema_and_manifest_ell_star(tmp_path):
    cfg = cfg_for("acceptance_sweep")
    assert runner.run_experiment(cfg, out=str(tmp_path / "o")) == 0
    head = (tmp_path / "o" / "acceptance.csv").read_text().splitlines()[0]
    assert head == "N,ell,beta_theory,accept_rate,se"
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert abs(man["optimal_ell"] - 1.6836) < 1e-3
    assert man["resolved_ell_grid"][1] == man["optimal_ell"]
    assert man["calibration_hash"] and man["software"]["hilbert_rwm"]


def test_seed_override_changes_output(tmp_path):
    cfg = cfg_for("acceptance_sweep")
    runner.run_experiment(cfg, out=str(tmp_path / "a"))
    runner.run_experiment(cfg, seed=99, out=str(tmp_path / "b"))
    assert csv_bytes(tmp_path / "a")["acceptance.csv"] != csv_bytes(tmp_path / "b")["acceptance.csv"]
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["master_seed"] == 99


def test_plot_data_contracts(tmp_path):
    runner.run_experiment(cfg_for("weak_convergence"), out=str(tmp_path / "w"))
    rows = list(csv.DictReader((tmp_path / "w" / "plot_h_curve.csv").open()))
    star = optimal_ell().ell
    marked = [r for r in rows if r["is_argmax"] == "true"]
    assert len(marked) == 1 and float(marked[0]["ell"]) == star
    ks = list(csv.DictReader((tmp_path / "w" / "plot_ks_vs_N.csv").open()))
    Ns = [int(r["N"]) for r in ks]
    assert Ns == sorted(Ns) and len(set(Ns)) == 2
    head = (tmp_path / "w" / "distances.csv").read_text().splitlines()[0]
    assert head == "N,functional,ks,wasserstein1,n_samples"


def test_exit_2_on_threshold_breach(tmp_path, monkeypatch):
    cal = load_calibration()
    cal["acceptance_sweep"]["rate_tolerance"] = -1.0
    cal["acceptance_sweep"]["band_min_N"] = 1
    monkeypatch.setattr(runner, "load_calibration", lambda: cal)
    assert runner.run_experiment(cfg_for("acceptance_sweep"), out=str(tmp_path / "o")) == 2
    checks = json.loads((tmp_path / "o" / "checks.json").read_text())
    assert any(not c["passed"] for c in checks)


def test_exit_1_on_runtime_error_leaves_nothing(tmp_path, monkeypatch):
    def boom(cfg, cal, threads):
        raise RuntimeError("boom")

    monkeypatch.setitem(runner.EXPERIMENT_FUNCS, "acceptance_sweep", boom)
    assert runner.run_experiment(cfg_for("acceptance_sweep"), out=str(tmp_path / "o")) == 1
    assert list(tmp_path.iterdir()) == []


def test_refuses_to_replace_foreign_directory(tmp_path):
    d = tmp_path / "o"
    d.mkdir()
    (d / "precious.txt").write_text("keep")
    assert runner.run_experiment(cfg_for("acceptance_sweep"), out=str(d)) == 1
    assert (d / "precious.txt").read_text() == "keep"
    # a previous run output is replaced
    d2 = tmp_path / "p"
    assert runner.run_experiment(cfg_for("acceptance_sweep"), out=str(d2)) == 0
    assert runner.run_experiment(cfg_for("acceptance_sweep"), out=str(d2)) == 0


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("HILBERT_RWM_THREADS", "3")
    assert runner.resolve_threads(None) == 3
    assert runner.resolve_threads(2) == 2
    monkeypatch.setenv("HILBERT_RWM_THREADS", "many")
    with pytest.raises(ValueError):
        runner.resolve_threads(None)
    monkeypatch.delenv("HILBERT_RWM_THREADS")
    assert runner.resolve_threads(None) == 1


def test_step_record_and_snapshot_export(tmp_path):
    params = ProposalParams(1.0, 4)
    res = run_chain(ChainState(np.zeros(6)), params, Zero(), PowerLaw(1.0, 1.0), 10,
                    ChainRng.for_replica(0, 0), snapshot_stride=5)
    runner.export_step_records(tmp_path / "steps.csv", res)
    rows = list(csv.reader((tmp_path / "steps.csv").open()))
    assert rows[0] == ["step", "q", "accepted", "proposal_norm_s"] and len(rows) == 11
    assert float(rows[1][1]) == res.q[0]
    runner.export_snapshots(tmp_path / "snap.csv", res)
    rows = list(csv.reader((tmp_path / "snap.csv").open()))
    assert rows[0] == ["step"] + [f"x{j}" for j in range(1, 7)]
    assert [r[0] for r in rows[1:]] == ["0", "5", "10"]


# ---- CLI ------------------------------------------------------------------

def test_cli_optimal_ell(capsys):
    assert cli.main(["optimal-ell"]) == 0
    out = capsys.readouterr().out
    assert "1.683764" in out and "0.233810" in out


def test_cli_validate(tmp_path, capsys):
    good = write_toml(tmp_path / "g.toml", """
experiment = "zeta_concentration"
N_grid = [16]
[covariance]
kappa = 1.0
[potential]
kind = "zero"
""")
    assert cli.main(["validate", str(good)]) == 0
    bad = write_toml(tmp_path / "b.toml", """
experiment = "zeta_concentration"
N_grid = [16]
s = 0.5
[covariance]
kappa = 1.0
[potential]
a = 1.0
""")
    assert cli.main(["validate", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "potential.kind" in err and "trace-class" in err


def test_cli_run(tmp_path, monkeypatch):
    cfgp = write_toml(tmp_path / "c.toml", f"""
experiment = "zeta_concentration"
N_grid = [16, 32]
samples = 300
output_dir = "{(tmp_path / 'unused').as_posix()}"
[covariance]
kappa = 1.0
[potential]
kind = "diagonal_quadratic"
a = 1.0
""")
    monkeypatch.setenv("HILBERT_RWM_THREADS", "2")
    assert cli.main(["run", str(cfgp), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "zeta.csv").exists()
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["threads"] == 2 and man["master_seed"] == 4
    assert not (tmp_path / "unused").exists()
