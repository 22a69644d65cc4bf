import json
import os

import numpy as np
import pytest

from congan import harness
from congan.harness import (COLUMNS, ReplicateResult, RunConfig, aggregate, emit, load_config,
                            read_table_csv, render_text, run_replicate)


def fake(r, base, d_equals_c=True, failed=False):
    cols = {c: list(base + k) for k, c in enumerate(COLUMNS)}
    if d_equals_c:
        cols["d"] = list(cols["c"])
    levels = list(range(5, 100, 5))
    return ReplicateResult(r, r, levels, list(np.linspace(0, 1, len(levels))), cols,
                           failed=failed, reason="boom" if failed else "")


def test_replicate_seeds_xor():
    cfg = RunConfig(master_seed=0b1010)
    assert [cfg.replicate_seed(r) for r in range(4)] == [10, 11, 8, 9]


def test_single_tiny_replicate_populates_every_column():
    cfg = RunConfig(preset="ces", n_obs=80, n_replicates=1, init_iters=3, gan_iters=3)
    res = run_replicate(cfg, 0)
    assert not res.failed
    assert set(res.columns) == set(COLUMNS)
    for c in COLUMNS:
        assert len(res.columns[c]) == len(cfg.quantiles)
        assert all(v is None or np.isfinite(v) for v in res.columns[c])
    assert len(res.x) == 19 and res.x == sorted(res.x)


def test_untrained_replicate_leaves_trained_columns_empty():
    res = run_replicate(RunConfig(n_obs=80, train=False), 0)
    assert all(v is None for v in res.columns["d"] + res.columns["f"])
    assert all(v is not None for v in res.columns["e"])


def test_identical_replicates_have_zero_se_and_dagger():
    base = np.linspace(1, 2, 19)
    t = aggregate([fake(r, base) for r in range(10)], RunConfig(n_perm=99))
    assert all(s == 0.0 for c in COLUMNS for s in t.se[c])
    assert all(m is True for m in t.marks["d"])
    assert t.sequence_tests["d_vs_c"] == [10, 10]


def test_too_few_replicates():
    with pytest.raises(ValueError):
        aggregate([fake(0, np.ones(19))], RunConfig())
    with pytest.raises(ValueError):
        aggregate([fake(0, np.ones(19)), fake(1, np.ones(19), failed=True)], RunConfig())


def test_failed_replicates_counted_and_excluded():
    rng = np.random.default_rng(0)
    good = [fake(r, rng.standard_normal(19)) for r in range(4)]
    bad = fake(9, np.full(19, 1e9), failed=True)
    t = aggregate(good + [bad], RunConfig(n_perm=9))
    t0 = aggregate(good, RunConfig(n_perm=9))
    assert t.n_failed == 1 and t.n_ok == 4
    assert t.mean == t0.mean


def test_order_independence():
    rng = np.random.default_rng(1)
    reps = [fake(r, rng.standard_normal(19)) for r in range(12)]
    a = aggregate(reps, RunConfig(n_perm=99))
    b = aggregate(reps[::-1], RunConfig(n_perm=99))
    # the fold sorts by replicate index, so sums run in the same order
    b2 = aggregate(sorted(reps[::-1], key=lambda r: r.r), RunConfig(n_perm=99))
    assert a.to_dict() == b2.to_dict()
    for c in COLUMNS:
        np.testing.assert_allclose(np.array(a.mean[c], float), np.array(b.mean[c], float), rtol=1e-14)
    assert a.marks == b.marks


def test_csv_round_trip_and_text_columns(tmp_path):
    rng = np.random.default_rng(2)
    reps = [fake(r, rng.standard_normal(19), d_equals_c=False) for r in range(10)]
    reps[0].columns["f"][3] = None
    t = aggregate(reps, RunConfig(n_perm=49))
    emit(t, tmp_path, formats=("csv",))
    assert read_table_csv(tmp_path / "table.csv") == t
    lines = render_text(t).splitlines()
    assert len(lines[0].split()) == 8
    assert all(len(line.split()) >= 8 for line in lines[1:20])


def test_reemit_is_byte_identical(tmp_path):
    rng = np.random.default_rng(3)
    t = aggregate([fake(r, rng.standard_normal(19)) for r in range(10)], RunConfig(n_perm=49))
    first = emit(t, tmp_path / "a")
    again = emit(read_table_csv(tmp_path / "a" / "table.csv"), tmp_path / "b")
    for p, q in zip(first, again):
        assert p.read_bytes() == q.read_bytes(), p.name


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    t = aggregate([fake(r, np.ones(19) * r) for r in range(2)], RunConfig(n_perm=9))
    with pytest.raises(OSError):
        emit(t, blocker / "sub")


def test_config_file_and_env_overrides(tmp_path, monkeypatch):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\npreset = tanh\nn_obs = 300\nquantiles = 10,50,90\ntrain = false\n"
                   "gamma = 0,0,1\nmaster_seed = 4\n")
    cfg = load_config(ini)
    assert (cfg.preset, cfg.n_obs, cfg.quantiles, cfg.train, cfg.gamma) == \
        ("tanh", 300, (10, 50, 90), False, (0.0, 0.0, 1.0))
    monkeypatch.setenv("CONGAN_SEED", "99")
    monkeypatch.setenv("CONGAN_OUT", str(tmp_path / "o"))
    cfg = load_config(ini, n_obs=500)
    assert cfg.master_seed == 99 and cfg.out_dir == str(tmp_path / "o") and cfg.n_obs == 500
    assert cfg.spec().gamma == (0.0, 0.0, 1.0)


def test_run_table_persists_everything(tmp_path):
    cfg = RunConfig(preset="backbending", n_obs=100, n_replicates=2, train=False, n_perm=9,
                    out_dir=str(tmp_path))
    t, files = harness.run_table(cfg)
    names = sorted(os.listdir(tmp_path))
    assert {"config.json", "replicates", "table.csv", "table.txt", "table.json", "table.png"} <= set(names)
    rec = json.loads((tmp_path / "replicates" / "replicate_001.json").read_text())
    assert rec["seed"] == 1 and ReplicateResult.from_dict(rec).r == 1
    assert t.n_ok == 2
