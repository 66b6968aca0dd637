import math
import time

import numpy as np
import pytest

from sgdtn import harness as hs
from sgdtn.baselines import BaselinePolicy
from sgdtn.cli import main
from sgdtn.config import SimConfig, dump_config, tiny_config
from sgdtn.env import SatelliteEnv, run_episode
from sgdtn.ledger import audit_records

FAST = dict(maml_iterations=0, episode_len=20)


def test_records_and_replay(tmp_path):
    cfg = tiny_config(**FAST)
    res = hs.run(cfg, "madfrl", 0, train_episodes=2, keep_transitions=True)
    assert len(res.records) == cfg.episode_len * cfg.n_followers
    hs.write_run(res, cfg, tmp_path)
    rows = hs.read_csv(tmp_path / "transitions.csv")
    assert len(rows) == 2 * cfg.episode_len * cfg.n_followers
    for row in rows:
        assert hs.replay_reward(row, cfg) == float(row["reward"])
        assert float(row["cpu_freq"]) >= 0 and row["offload"] in ("0", "1")
    for name in ("records.csv", "summary.csv", "config.resolved.cfg", "ledger.jsonl",
                 "checkpoints/actor_0_0.bin"):
        assert (tmp_path / name).exists()
    assert audit_records((tmp_path / "ledger.jsonl").read_text().splitlines()) == []


def test_summary_recomputes_from_records(tmp_path):
    cfg = tiny_config(**FAST)
    res = hs.run(cfg, "marto", 3, train_episodes=1)
    hs.write_run(res, cfg, tmp_path)
    recs = hs.read_csv(tmp_path / "records.csv")
    summ = hs.read_csv(tmp_path / "summary.csv")[0]
    col = lambda k: np.array([float(r[k]) for r in recs])
    per_slot = {}
    for r in recs:
        per_slot.setdefault(r["slot"], float(r["leader_profit"]))
    expected = {"mean_throughput": col("throughput").mean(), "mean_queue": col("queue").mean(),
                "mean_interference": col("interference").mean(), "mean_overhead": col("overhead").mean(),
                "mean_profit": np.mean(list(per_slot.values()))}
    for k, v in expected.items():
        got = float(summ[k])
        assert got == pytest.approx(v, rel=1e-12, abs=1e-300)
    assert set(recs[0]) == set(hs.RECORD_COLUMNS)
    assert list(summ) == list(hs.SUMMARY_COLUMNS)


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        hs.SweepSpec("V", ())
    with pytest.raises(ValueError):
        hs.SweepSpec("V", (1.0, 5.0, 3.0))
    with pytest.raises(ValueError):
        hs.SweepSpec("nope", (1.0,))
    with pytest.raises(ValueError):
        hs.SweepSpec("V", (1.0,), repeats=0)
    assert hs.SweepSpec("n_followers", (2.0,)).config_for(SimConfig(), 3.0).followers_per_mbs == 3


def test_single_point_sweep_equals_run(tmp_path):
    cfg = tiny_config(**FAST)
    rows = hs.run_sweep(hs.SweepSpec("V", (cfg.v_lyapunov,)), cfg, "madfrl", 4, tmp_path, train_episodes=1)
    plain = hs.run(cfg, "madfrl", 4, train_episodes=1)
    for k in hs.METRICS:
        assert rows[0][k] == plain.summary[k]
    sub = tmp_path / f"V={hs.fmt(cfg.v_lyapunov)}" / "seed=4" / "records.csv"
    assert sub.read_text() == hs.records_csv(plain.records)


def test_sweep_rows_sorted_and_parallel_matches_serial(tmp_path):
    cfg = tiny_config(**FAST)
    spec = hs.SweepSpec("V", (1.0, 5.0, 10.0), repeats=2)
    serial = hs.run_sweep(spec, cfg, "mamcc", 0, tmp_path / "a", workers=1, train_episodes=1)
    parallel = hs.run_sweep(spec, cfg, "mamcc", 0, tmp_path / "b", workers=2, train_episodes=1)
    assert [r["axis_value"] for r in serial] == [1.0, 1.0, 5.0, 5.0, 10.0, 10.0]
    assert [r["seed"] for r in serial] == [0, 1] * 3
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    stats = hs.read_csv(tmp_path / "a" / "summary_stats.csv")
    assert [float(s["axis_value"]) for s in stats] == [1.0, 5.0, 10.0]
    v = [r["mean_queue"] for r in serial[:2]]
    assert float(stats[0]["mean_queue_std"]) == pytest.approx(np.std(v, ddof=1), rel=1e-12)


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        hs._write(blocker / "out.csv", "a")


def test_unknown_policy():
    with pytest.raises(ValueError):
        hs.make_policy("greedy", tiny_config(), np.random.SeedSequence(0))


def test_cli_validate_config(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("v_lyapunov = 5\n")
    assert main(["validate-config", str(good)]) == 0
    assert "v_lyapunov = 5.0" in (tmp_path / "good.resolved.cfg").read_text()
    bad = tmp_path / "bad.cfg"
    bad.write_text("# comment\nblock_min = 5e6\nbogus = 1\n")
    assert main(["validate-config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "line 2: block_min" in err and "line 3: bogus" in err
    assert main(["validate-config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_run_and_ledger_audit(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(dump_config(tiny_config(**FAST, fed_every=1)))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--policy", "madfrl", "--seed", "1", "--episodes", "2",
                 "--out", str(out)]) == 0
    assert main(["ledger-audit", str(out / "ledger.jsonl")]) == 0
    assert len((out / "ledger.jsonl").read_text().splitlines()) == 2
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"height": 3}\nnot json\n')
    assert main(["ledger-audit", str(broken)]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_oracle_verify(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(dump_config(tiny_config(**FAST)))
    assert main(["oracle-verify", "--config", str(cfg), "--policy", "marto", "--episodes", "0"]) == 0
    assert "failures=0" in capsys.readouterr().out


def test_runtime_scales_roughly_linearly_in_followers():
    sizes = (16, 32, 64, 128)
    times = []
    for m in sizes:
        cfg = SimConfig(n_mbs=2, followers_per_mbs=m, n_channels=4, episode_len=20)
        best = math.inf
        for rep in range(5):
            pol = BaselinePolicy("marto", cfg, np.random.SeedSequence(rep))
            env = SatelliteEnv(cfg, np.random.default_rng(rep))
            t0 = time.perf_counter()
            run_episode(env, pol, None, cfg)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    # per-slot work is linear in the follower count; the bounds only catch gross regressions
    assert 0.3 <= slope <= 1.7
