import json

import numpy as np
import pytest

from vesmc import cli, io
from vesmc.errors import ConfigurationError
from vesmc.experiments import COMMANDS, DEFAULTS, ExperimentConfig, deep_merge, run_experiment
from vesmc.synth import BeatParams, synth_beat, synth_prior

SMALL = {
    "seed": 3,
    "schedule": {"K": 16, "sigma_min": 1e-2, "sigma_max": 20.0},
    "prior": {"type": "synth", "L": 3, "T": 8, "J": 2, "variance": 0.01},
    "sigma": 0.1,
    "smc": {"M": 10},
    "mle": {"N_c": 2, "N_mle": 2},
    "emd": {"particle_counts": [4, 8]},
    "anomaly": {"n_normal": 1, "n_anomalous": 1},
}


def _run(tmp_path, command, extra=None):
    cfg = ExperimentConfig.build(command, deep_merge(SMALL, extra or {}), out=tmp_path / command)
    return cfg, run_experiment(cfg)


def _metrics(path):
    header, rows = io.read_csv(path / "metrics.csv")
    assert header == ["metric", "key", "value"]
    return {(r[0], r[1]): float(r[2]) for r in rows}


def test_csv_and_json_round_trip(tmp_path):
    io.write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.1], [np.int64(2), np.float64(1 / 3)]])
    header, rows = io.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"] and rows[1] == ["2", repr(1 / 3)]
    io.write_json(tmp_path / "o.json", {"b": np.arange(2), "a": np.float64(0.5)})
    text = (tmp_path / "o.json").read_text()
    assert text.index('"a"') < text.index('"b"') and text.endswith("\n")
    assert io.read_json(tmp_path / "o.json") == {"a": 0.5, "b": [0, 1]}
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigurationError):
        io.read_json(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        io.read_json(tmp_path / "missing.json")


def test_signal_and_particle_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5))
    io.write_signal_csv(tmp_path / "x.csv", x)
    np.testing.assert_array_equal(io.read_signal_csv(tmp_path / "x.csv"), x)
    P = rng.normal(size=(4, 3, 5))
    io.write_particles(tmp_path / "p.bin", P)
    assert (tmp_path / "p.bin").stat().st_size == P.size * 8
    assert io.read_json(tmp_path / "p.bin.json") == {"L": 3, "T": 5, "M": 4, "dtype": "f64"}
    np.testing.assert_array_equal(io.read_particles(tmp_path / "p.bin"), P)
    (tmp_path / "p.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ConfigurationError):
        io.read_particles(tmp_path / "p.bin")


def test_synthetic_beat_normalisation():
    params = BeatParams()
    x = synth_beat(4, 200, params, np.random.default_rng(1))
    t = np.linspace(0, 1, 200)
    win = (t >= 0.25) & (t <= 0.35)
    np.testing.assert_allclose(np.abs(x[:, win]).max(axis=1), 1.0, rtol=1e-15)
    # the sharp spike at 0.3 dominates the window
    assert np.all(np.abs(t[np.argmax(np.abs(x), axis=1)] - 0.3) < 0.02)


def test_synthetic_beat_zero_channel_and_correlation():
    z = synth_beat(2, 50, BeatParams(lead_gains=[1.0, 0.0]), np.random.default_rng(2))
    np.testing.assert_array_equal(z[1], 0.0)
    # full correlation with equal gains: all channels identical
    x = synth_beat(3, 50, BeatParams(correlation=1.0), np.random.default_rng(3))
    np.testing.assert_allclose(x[0], x[2], rtol=1e-14)
    with pytest.raises(ConfigurationError):
        synth_beat(2, 50, BeatParams(correlation=1.5))
    with pytest.raises(ConfigurationError):
        BeatParams.from_dict({"bogus": 1})
    assert BeatParams.from_dict(BeatParams().to_dict()) == BeatParams()


def test_synthetic_beat_zero_amplitudes_and_seeds():
    z = synth_beat(3, 40, BeatParams(amplitudes=(0.0, 0.0, 0.0)), np.random.default_rng(0))
    np.testing.assert_array_equal(z, 0.0)
    a = synth_beat(2, 40, rng=np.random.default_rng(1))
    b = synth_beat(2, 40, rng=np.random.default_rng(2))
    assert not np.array_equal(a, b)


def test_synthetic_prior_is_reproducible():
    a = synth_prior(2, 16, 3, 0.02, seed=4)
    b = synth_prior(2, 16, 3, 0.02, seed=4)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_allclose(a.weights, 1 / 3)
    assert a.shape == (2, 16)


def test_denoise_outputs(tmp_path):
    cfg, written = _run(tmp_path, "denoise")
    names = {p.name for p in written}
    assert names == {"config-echo.json", "metrics.csv", "diagnostics.csv", "particles.bin", "particles.bin.json"}
    m = _metrics(cfg.out)
    assert {("rescaled_mahalanobis", str(ell)) for ell in range(3)} <= set(m)
    assert np.isfinite(m[("log_normalizer", "all")])
    assert io.read_particles(cfg.out / "particles.bin").shape == (10, 3, 8)
    header, rows = io.read_csv(cfg.out / "diagnostics.csv")
    assert header[:2] == ["run", "k"] and len(rows) == 16
    echo = io.read_json(cfg.out / "config-echo.json")
    assert echo["command"] == "denoise" and echo["seed"] == 3 and "out" not in echo


def test_inpaint_writes_r2_for_withheld_leads(tmp_path):
    cfg, _ = _run(tmp_path, "inpaint", {"mask": {"withhold": [0, 2]}})
    header, rows = io.read_csv(cfg.out / "r2.csv")
    assert header == ["lead", "r2"] and [r[0] for r in rows] == ["0", "2"]
    assert all(float(r[1]) <= 1.0 for r in rows)


def test_emd_sweep_summary(tmp_path):
    cfg, _ = _run(tmp_path, "emd-sweep")
    m = _metrics(cfg.out)
    e4, e8 = m[("emd", "4")], m[("emd", "8")]
    assert m[("emd_monotone_decreasing", "all")] == float(e8 <= e4)
    assert m[("emd_log_slope", "all")] == pytest.approx(np.log(e8 / e4) / np.log(2), rel=1e-9)


def test_mask_index_lists_from_csv(tmp_path):
    (tmp_path / "leads.csv").write_text("2\n0\n")
    (tmp_path / "times.csv").write_text("1,3,5\n")
    cfg = ExperimentConfig.build("denoise", deep_merge(SMALL, {"mask": {"leads": "leads.csv", "times": "times.csv"}}),
                                 out=tmp_path / "o", base_dir=tmp_path)
    run_experiment(cfg)
    m = _metrics(cfg.out)
    assert ("rescaled_mahalanobis", "1") in m
    (tmp_path / "times.csv").write_text("1,x\n")
    with pytest.raises(ConfigurationError):
        run_experiment(cfg)


def test_mle_and_anomaly_and_schedule_outputs(tmp_path):
    cfg, _ = _run(tmp_path, "mle")
    header, rows = io.read_csv(cfg.out / "mle.csv")
    assert header == ["iteration", "step_size", "grad_norm", "phi_0", "phi_1", "phi_2"] and len(rows) == 2
    cfg, _ = _run(tmp_path, "anomaly")
    header, rows = io.read_csv(cfg.out / "scores.csv")
    assert header == ["index", "label", "score"] and [r[1] for r in rows] == ["0", "1"]
    cfg, _ = _run(tmp_path, "schedule-dump")
    header, rows = io.read_csv(cfg.out / "schedule.csv")
    assert header == ["k", "upsilon", "rho", "eta", "gamma2"] and len(rows) == 17
    assert io.read_json(cfg.out / "schedule.json")["K"] == 16


def test_generate_outputs(tmp_path):
    cfg, _ = _run(tmp_path, "generate")
    assert io.read_particles(cfg.out / "particles.bin").shape == (10, 3, 8)
    assert ("emd_vs_prior_samples", "all") in _metrics(cfg.out)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.build("denoise", {"colour": "red"}, out="x")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.build("paint", {}, out="x")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.build("denoise", {"seed": -1}, out="x")
    assert deep_merge(DEFAULTS, {"smc": {"M": 3}})["smc"]["delta"] == DEFAULTS["smc"]["delta"]


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.main(["schedule-dump", "--config", str(cfg), "--out", str(tmp_path / "o"), "--steps", "5"]) == 0
    assert "schedule.csv" in capsys.readouterr().out
    assert io.read_json(tmp_path / "o" / "schedule.json")["K"] == 5
    cfg.write_text(json.dumps({"nope": 1}))
    assert cli.main(["denoise", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["denoise", "--config", str(tmp_path / "missing.json")]) == 2
    cfg.write_text(json.dumps(deep_merge(SMALL, {"mask": {"withhold": [9]}})))
    assert cli.main(["inpaint", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps(deep_merge(SMALL, {"sigma": 100.0})))
    capsys.readouterr()
    assert cli.main(["denoise", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "GuidanceInfeasibleError" in capsys.readouterr().err
    for bad in (["denoise", "--seed", "-1"], ["denoise", "--particles", "0"], ["frobnicate"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(bad)
        assert exc.value.code == 2


def test_every_command_is_registered():
    parser = cli.build_parser()
    for name in COMMANDS:
        assert parser.parse_args([name]).command == name
