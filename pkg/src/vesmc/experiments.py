"""Experiment orchestration behind the command-line subcommands.

Every experiment is described by one JSON-compatible dictionary (defaults
below, overridden by a config file and CLI flags). All randomness is
derived from the single ``seed`` so a run is reproducible byte for byte,
whatever the number of worker threads.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import io
from . import rng as _rng
from .diffusion import backward_generate
from .errors import ConfigurationError
from .gmm import GmmPrior, gmm_exact_posterior
from .metrics import emd_exact, per_lead_rescaled_mahalanobis, r2_score
from .mle import MleConfig, run_mle
from .observation import Observation, ObservationMask, make_guidance, observe
from .schedule import NoiseSchedule, loss_weights, schedule_from_dict
from .smc import SmcConfig, SmcResult, run_guided_smc
from .synth import BeatParams, synth_prior

COMMANDS = ("generate", "denoise", "inpaint", "mle", "anomaly", "emd-sweep", "schedule-dump")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "schedule": {"K": 150, "sigma_min": 2e-4, "sigma_max": 80.0, "grid": "geometric", "eta_rule": "ddpm_matching"},
    "prior": {"type": "synth", "L": 3, "T": 32, "J": 4, "variance": 0.01, "beat": {}},
    "sigma": 0.1,
    "mask": {"leads": None, "times": None, "withhold": None},
    "smc": {"M": 50, "delta": 0.01, "ess_threshold": None, "weight_eta": "derived", "denominator": "active"},
    "mle": {"N_c": 4, "N_mle": 10, "gamma": 4e-4, "phi0": None},
    "emd": {"particle_counts": [8, 64, 512]},
    "anomaly": {"n_normal": 5, "n_anomalous": 5, "distortion": 1.0},
}

# spawn words keeping the random streams of different experiment parts apart
_TRUTH, _NOISE, _SAMPLER, _REFERENCE, _PRIOR = 1, 2, 3, 4, 5


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    command: str
    settings: dict
    out: Path
    workers: int = 1
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        unknown = set(self.settings) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        seed = self.settings.get("seed")
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigurationError("seed must be an integer in [0, 2**64)")

    @classmethod
    def build(cls, command: str, file_settings: dict | None = None, overrides: dict | None = None, *,
              out, workers: int = 1, base_dir=".") -> "ExperimentConfig":
        settings = deep_merge(DEFAULTS, file_settings or {})
        settings = deep_merge(settings, overrides or {})
        return cls(command, settings, Path(out), workers, Path(base_dir))

    @property
    def seed(self) -> int:
        return int(self.settings["seed"])

    def echo(self) -> dict:
        """Settings as run; excludes the output location and thread count."""
        return {"command": self.command, **self.settings}


# -- building blocks ----------------------------------------------------------

def load_prior(cfg: ExperimentConfig) -> GmmPrior:
    spec = cfg.settings["prior"]
    kind = spec.get("type", "synth")
    if kind == "gmm":
        if "path" in spec:
            path = Path(spec["path"])
            path = path if path.is_absolute() else cfg.base_dir / path
            return GmmPrior.from_dict(io.read_json(path))
        return GmmPrior.from_dict(spec)
    if kind == "synth":
        try:
            L, T, J = int(spec["L"]), int(spec["T"]), int(spec["J"])
            variance = float(spec["variance"])
        except KeyError as exc:
            raise ConfigurationError(f"synthetic prior missing {exc}") from None
        params = BeatParams.from_dict(spec.get("beat"))
        return synth_prior(L, T, J, variance, params, _rng.Streams(cfg.seed).spawn(_PRIOR))
    raise ConfigurationError(f"unknown prior type {kind!r}")


def _index_list(cfg: ExperimentConfig, value, n: int) -> list[int]:
    # None selects everything; a string names a CSV file of indices
    if value is None:
        return list(range(n))
    if isinstance(value, str):
        path = Path(value)
        return io.read_index_csv(path if path.is_absolute() else cfg.base_dir / path)
    return [int(v) for v in value]


def build_mask(cfg: ExperimentConfig, L: int, T: int, default_withhold=None) -> ObservationMask:
    spec = cfg.settings["mask"]
    leads = _index_list(cfg, spec.get("leads"), L)
    times = _index_list(cfg, spec.get("times"), T)
    withhold = spec.get("withhold")
    if withhold is None:
        withhold = default_withhold or []
    withhold = [int(v) for v in withhold]
    if any(not 0 <= w < L for w in withhold):
        raise ConfigurationError("withheld lead out of range")
    leads = [ell for ell in leads if ell not in withhold]
    mask = ObservationMask(leads, times)
    try:
        mask.check_bounds(L, T)
    except IndexError as exc:
        raise ConfigurationError(str(exc)) from None
    return mask


def sigma_vector(cfg: ExperimentConfig, n: int) -> np.ndarray:
    s = np.asarray(cfg.settings["sigma"], dtype=float).reshape(-1)
    if s.size == 1:
        s = np.full(n, s[0])
    if s.size != n:
        raise ConfigurationError(f"sigma needs 1 or {n} entries, got {s.size}")
    return s


def smc_config(cfg: ExperimentConfig, M: int | None = None) -> SmcConfig:
    s = cfg.settings["smc"]
    return SmcConfig(M=int(M if M is not None else s["M"]), delta=float(s["delta"]), seed=cfg.seed,
                     ess_threshold=s.get("ess_threshold"), weight_eta=s.get("weight_eta", "derived"),
                     denominator=s.get("denominator", "active"), workers=cfg.workers)


def draw_truth(prior: GmmPrior, streams: _rng.Streams) -> np.ndarray:
    return prior.sample(1, streams)[0]


def make_observation(x, mask: ObservationMask, sigma, streams: _rng.Streams) -> Observation:
    return observe(x, mask, sigma, streams.generator(_rng.OBSERVE))


def sample_posterior(obs, cfg, schedule, prior, streams, M=None) -> SmcResult:
    sc = smc_config(cfg, M)
    guidance = make_guidance(obs, schedule, sc.delta)
    return run_guided_smc(obs, sc, schedule, prior.denoiser(), guidance, shape=prior.shape, streams=streams)


def _diag_rows(result: SmcResult, run: int = 0):
    for d in result.diagnostics:
        yield [run, d["k"], d["ess"], d["log_normalizer_increment"], d["n_active"], int(d["resampled"])]


_DIAG_HEADER = ["run", "k", "ess", "log_normalizer_increment", "n_active", "resampled"]
_METRIC_HEADER = ["metric", "key", "value"]


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


# -- subcommands ---------------------------------------------------------------

def cmd_schedule_dump(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    io.write_json(cfg.out / "schedule.json", schedule.to_dict())
    g2 = loss_weights(schedule)
    rows = []
    for k in range(schedule.K + 1):
        rho = schedule.rho[k] if k else float("nan")
        eta = schedule.eta[k] if k < schedule.K else float("nan")
        rows.append([k, schedule.upsilon[k], rho, eta, g2[k]])
    io.write_csv(cfg.out / "schedule.csv", ["k", "upsilon", "rho", "eta", "gamma2"], rows)
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER,
                 [["K", "all", schedule.K], ["sigma_min", "all", schedule.sigma_min],
                  ["sigma_max", "all", schedule.sigma_max]])


def cmd_generate(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    prior = load_prior(cfg)
    root = _rng.Streams(cfg.seed)
    M = int(cfg.settings["smc"]["M"])
    x = backward_generate(M, prior.shape, prior.denoiser(), schedule, root.spawn(_SAMPLER), workers=cfg.workers)
    ref = prior.sample(M, root.spawn(_REFERENCE))
    io.write_particles(cfg.out / "particles.bin", x)
    rows = [["emd_vs_prior_samples", "all", emd_exact(x, ref)]]
    gen_mean, prior_mean = x.mean(axis=0), prior.mean()
    for ell in range(prior.shape[0]):
        rows.append(["mean_rmse", ell, _rmse(gen_mean[ell], prior_mean[ell])])
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)


def _posterior_run(cfg, schedule, default_withhold=None):
    prior = load_prior(cfg)
    L, T = prior.shape
    root = _rng.Streams(cfg.seed)
    mask = build_mask(cfg, L, T, default_withhold)
    x = draw_truth(prior, root.spawn(_TRUTH))
    obs = make_observation(x, mask, sigma_vector(cfg, len(mask.leads)), root.spawn(_NOISE))
    result = sample_posterior(obs, cfg, schedule, prior, root.spawn(_SAMPLER))
    return prior, x, obs, result


def cmd_denoise(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    prior, x, obs, result = _posterior_run(cfg, schedule)
    P = result.particles
    io.write_particles(cfg.out / "particles.bin", P)
    io.write_csv(cfg.out / "diagnostics.csv", _DIAG_HEADER, _diag_rows(result))
    scores = per_lead_rescaled_mahalanobis(x, P)
    rows = [["rescaled_mahalanobis", ell, s] for ell, s in enumerate(scores)]
    rows.append(["rescaled_mahalanobis_mean", "all", float(scores.mean())])
    rows.append(["posterior_mean_rmse_vs_exact", "all", _rmse(P.mean(0), gmm_exact_posterior(prior, obs).mean())])
    rows.append(["log_normalizer", "all", result.log_evidence])
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)


def cmd_inpaint(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    prior, x, obs, result = _posterior_run(cfg, schedule, default_withhold=[0])
    P = result.particles
    L = prior.shape[0]
    hidden = [ell for ell in range(L) if ell not in set(obs.mask.leads.tolist())]
    est = P.mean(axis=0)
    io.write_particles(cfg.out / "particles.bin", P)
    io.write_csv(cfg.out / "diagnostics.csv", _DIAG_HEADER, _diag_rows(result))
    r2 = [[ell, r2_score(est[ell], x[ell])] for ell in hidden]
    io.write_csv(cfg.out / "r2.csv", ["lead", "r2"], r2)
    rows = [["r2", ell, v] for ell, v in r2]
    rows.append(["posterior_mean_rmse_vs_exact", "all", _rmse(est, gmm_exact_posterior(prior, obs).mean())])
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)


def cmd_mle(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    prior = load_prior(cfg)
    L, T = prior.shape
    root = _rng.Streams(cfg.seed)
    mask = build_mask(cfg, L, T)
    truth_sigma = sigma_vector(cfg, len(mask.leads))
    x = draw_truth(prior, root.spawn(_TRUTH))
    obs = make_observation(x, mask, truth_sigma, root.spawn(_NOISE))
    m = cfg.settings["mle"]
    phi0 = m.get("phi0")
    mc = MleConfig(M=int(cfg.settings["smc"]["M"]), N_c=int(m["N_c"]), N_mle=int(m["N_mle"]),
                   gamma=float(m["gamma"]), phi0=2 * truth_sigma if phi0 is None else phi0,
                   seed=cfg.seed, delta=float(cfg.settings["smc"]["delta"]), workers=cfg.workers)
    res = run_mle(obs, mc, schedule, prior.denoiser(), shape=prior.shape)
    S = len(mask.leads)
    io.write_csv(cfg.out / "mle.csv", ["iteration", "step_size", "grad_norm"] + [f"phi_{ell}" for ell in mask.leads],
                 ([h["iteration"], h["step_size"], h["grad_norm"], *h["phi"]] for h in res.history))
    rows = [["phi", int(mask.leads[i]), res.phi[i]] for i in range(S)]
    rows += [["phi_abs_error", int(mask.leads[i]), abs(res.phi[i] - truth_sigma[i])] for i in range(S)]
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)


def cmd_anomaly(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    """Score signals by how far their withheld leads sit from the reconstruction.

    Anomalous signals have their withheld leads sign-flipped and scaled by
    ``1 + distortion``, so they disagree with what the observed leads imply.
    """
    prior = load_prior(cfg)
    L, T = prior.shape
    a = cfg.settings["anomaly"]
    n_norm, n_anom = int(a["n_normal"]), int(a["n_anomalous"])
    root = _rng.Streams(cfg.seed)
    mask = build_mask(cfg, L, T, default_withhold=[0])
    hidden = [ell for ell in range(L) if ell not in set(mask.leads.tolist())]
    if not hidden:
        raise ConfigurationError("anomaly scoring needs at least one withheld lead")
    sigma = sigma_vector(cfg, len(mask.leads))
    scores, diags = [], []
    for i in range(n_norm + n_anom):
        label = int(i >= n_norm)
        x = draw_truth(prior, root.spawn(_TRUTH, i))
        if label:
            x[hidden] *= -(1.0 + float(a["distortion"]))
        obs = make_observation(x, mask, sigma, root.spawn(_NOISE, i))
        result = sample_posterior(obs, cfg, schedule, prior, root.spawn(_SAMPLER, i))
        per_lead = per_lead_rescaled_mahalanobis(x, result.particles)
        scores.append([i, label, float(per_lead[hidden].mean())])
        diags.extend(_diag_rows(result, i))
    io.write_csv(cfg.out / "scores.csv", ["index", "label", "score"], scores)
    io.write_csv(cfg.out / "diagnostics.csv", _DIAG_HEADER, diags)
    vals = np.array([s[2] for s in scores])
    labels = np.array([s[1] for s in scores])
    rows = []
    for lab, name in ((0, "normal"), (1, "anomalous")):
        if (labels == lab).any():
            rows.append(["mean_score", name, float(vals[labels == lab].mean())])
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)


def cmd_emd_sweep(cfg: ExperimentConfig, schedule: NoiseSchedule) -> None:
    """EMD between guided-SMC clouds and equally sized exact posterior samples, per particle count."""
    prior = load_prior(cfg)
    L, T = prior.shape
    root = _rng.Streams(cfg.seed)
    mask = build_mask(cfg, L, T)
    x = draw_truth(prior, root.spawn(_TRUTH))
    obs = make_observation(x, mask, sigma_vector(cfg, len(mask.leads)), root.spawn(_NOISE))
    post = gmm_exact_posterior(prior, obs)
    counts = [int(m) for m in cfg.settings["emd"]["particle_counts"]]
    if not counts or min(counts) < 1:
        raise ConfigurationError("particle_counts must be positive")
    rows, diags, emds = [], [], []
    for j, M in enumerate(counts):
        result = sample_posterior(obs, cfg, schedule, prior, root.spawn(_SAMPLER, j), M=M)
        ref = post.sample(M, root.spawn(_REFERENCE, j))
        emds.append(emd_exact(result.particles, ref))
        rows.append(["emd", M, emds[-1]])
        diags.extend(_diag_rows(result, j))
    order = np.argsort(counts, kind="stable")
    ordered = np.asarray(emds)[order]
    rows.append(["emd_monotone_decreasing", "all", int(np.all(np.diff(ordered) <= 0))])
    if len(set(counts)) > 1:
        slope = np.polyfit(np.log(np.asarray(counts, dtype=float)), np.log(np.maximum(emds, 1e-300)), 1)[0]
        rows.append(["emd_log_slope", "all", float(slope)])
    io.write_csv(cfg.out / "metrics.csv", _METRIC_HEADER, rows)
    io.write_csv(cfg.out / "diagnostics.csv", _DIAG_HEADER, diags)


_HANDLERS: dict[str, Callable[[ExperimentConfig, NoiseSchedule], None]] = {
    "generate": cmd_generate,
    "denoise": cmd_denoise,
    "inpaint": cmd_inpaint,
    "mle": cmd_mle,
    "anomaly": cmd_anomaly,
    "emd-sweep": cmd_emd_sweep,
    "schedule-dump": cmd_schedule_dump,
}


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Run one subcommand and return the files it wrote (sorted)."""
    schedule = schedule_from_dict(cfg.settings["schedule"])
    if not math.isfinite(schedule.sigma_max):
        raise ConfigurationError("sigma_max must be finite")
    cfg.out.mkdir(parents=True, exist_ok=True)
    io.write_json(cfg.out / "config-echo.json", cfg.echo())
    _HANDLERS[cfg.command](cfg, schedule)
    return sorted(p for p in cfg.out.iterdir() if p.is_file())
