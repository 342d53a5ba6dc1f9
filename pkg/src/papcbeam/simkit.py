"""Monte Carlo outage simulation for the beamforming solvers.

Users are dropped uniformly on a disk around the base station, channels get
pathloss, log-normal shadowing and Rayleigh fading, and the transmitter sees
them through an additive Gaussian estimation error. Channels are expressed
relative to the receiver noise, so every solver runs with unit noise power.

With the default ``error_model = "relative"`` a user's error variance is the
configured fraction of that user's large-scale gain, the same scale as the
Rayleigh entries of its estimate. ``"absolute"`` uses the configured variance
directly, in noise-normalised units.

Each realisation draws from its own generator seeded by
``(rng_seed, realization_index)``; every algorithm at a sweep point therefore
sees bit-identical channels, whatever the number of workers.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import mrt, offsetmax, zf
from .errors import BeamformingError
from .model import BeamformerSet, ChannelEstimate, ChannelSet, OutageStats, ScenarioConfig, sinr_all

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("total_power", "n_antennas")
ERROR_MODELS = ("relative", "absolute")
CSV_COLUMNS = (
    "sweep_value",
    "algorithm",
    "outage_mean",
    "outage_max_user",
    "stderr",
    "n_real",
    "n_nonconverged",
    "mean_iters",
    "mean_ms",
)


@dataclass(frozen=True)
class PropagationModel:
    """Large-scale fading and the noise floor used to normalise channels.

    ``noise_power`` is the receiver noise in the run's linear power unit.
    ``error_model`` says how the scenario's error variance is scaled per user.
    """

    cell_radius: float = 3200.0
    pathloss_exponent: float = 3.52
    shadow_std_db: float = 8.0
    reference_distance: float = 1.0
    min_distance: float = 35.0
    noise_power: float = 1e-12
    error_model: str = "relative"

    def __post_init__(self):
        if self.error_model not in ERROR_MODELS:
            raise ValueError(f"error_model must be one of {ERROR_MODELS}")
        if not self.pathloss_exponent > 2:
            raise ValueError("pathloss_exponent must exceed 2")
        if not self.cell_radius > self.min_distance > 0:
            raise ValueError("need cell_radius > min_distance > 0")
        if not (self.reference_distance > 0 and self.noise_power > 0 and self.shadow_std_db >= 0):
            raise ValueError("reference_distance and noise_power must be positive, shadow_std_db non-negative")


@dataclass(frozen=True)
class ExperimentSpec:
    sweep_variable: str
    sweep_values: Tuple[float, ...]
    algorithms: Tuple[str, ...]
    n_realizations: int = 2000
    error_draws_per_realization: int = 1
    rng_seed: int = 0
    tolerance_fraction: float = 0.1
    generalized_papc_factor: float = 1.2

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep_variable must be one of {SWEEP_VARIABLES}")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep_values is empty")
        if len(self.algorithms) == 0:
            raise ValueError("no algorithms")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithm(s) {unknown}")
        if self.n_realizations < 1 or self.error_draws_per_realization < 1:
            raise ValueError("n_realizations and error_draws_per_realization must be positive")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))


# ---------------------------------------------------------------- channels


def realization_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def draw_large_scale(rng: np.random.Generator, n_users: int, prop: PropagationModel):
    """User distances, shadowing in dB and the linear large-scale gain (before noise)."""
    # uniform on the annulus min_distance <= d <= radius
    r0, r1 = prop.min_distance, prop.cell_radius
    d = np.sqrt(r0**2 + rng.random(n_users) * (r1**2 - r0**2))
    shadow_db = rng.normal(0.0, prop.shadow_std_db, n_users)
    gain = (d / prop.reference_distance) ** (-prop.pathloss_exponent) * 10.0 ** (shadow_db / 10.0)
    return d, shadow_db, gain


def _complex_gaussian(rng, shape, variance):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * math.sqrt(variance / 2.0)


def draw_realization(rng: np.random.Generator, cfg: ScenarioConfig, prop: PropagationModel) -> ChannelSet:
    """Estimated channels ``sqrt(g_k / noise) * CN(0, I)`` plus errors ``CN(0, s2_k I)``.

    ``s2_k`` is ``error_variance * g_k / noise`` under the relative model and
    ``error_variance`` under the absolute one.
    """
    _, _, gain = draw_large_scale(rng, cfg.n_users, prop)
    small = _complex_gaussian(rng, (cfg.n_antennas, cfg.n_users), 1.0)
    scale = gain / prop.noise_power
    est = small * np.sqrt(scale)
    s2 = cfg.error_variances * (scale if prop.error_model == "relative" else 1.0)
    return ChannelSet(est, draw_errors(rng, cfg, s2), s2)


def draw_errors(rng: np.random.Generator, cfg: ScenarioConfig, variances=None) -> np.ndarray:
    """One error draw; ``variances`` (per user) overrides the scenario's."""
    s2 = cfg.error_variances if variances is None else np.asarray(variances, dtype=float)
    return _complex_gaussian(rng, (cfg.n_antennas, cfg.n_users), 1.0) * np.sqrt(s2)


def select_users(channels, cfg: ScenarioConfig) -> np.ndarray:
    """Users with ``||h_k||^2 P_t / (K sigma_k^2) >= gamma_k``."""
    h = channels.estimated if isinstance(channels, (ChannelSet, ChannelEstimate)) else np.asarray(channels)
    strength = np.sum(np.abs(h) ** 2, axis=0) * cfg.total_power / (cfg.n_users * cfg.noise_powers)
    return np.flatnonzero(strength >= cfg.sinr_targets)


# ---------------------------------------------------------------- algorithms


class Design(NamedTuple):
    beams: BeamformerSet
    iterations: int
    converged: bool
    trace: Optional[np.ndarray] = None  # violated-antenna counts per outer iteration


@dataclass(frozen=True)
class Algorithm:
    name: str
    papc_mode: str  # papc_only | generalized | total_only
    solve: Callable[[ScenarioConfig, ChannelEstimate, Optional[offsetmax.StepSchedule]], Design]
    description: str = ""


def _iterative(fn):
    def run(cfg, est, schedule=None):
        res = fn(cfg, est, schedule=schedule)
        trace = np.array([t.n_violations for t in res.trace], dtype=int)
        return Design(res.beams, res.iterations, res.converged, trace)

    return run


def _one_shot(cfg, est, schedule=None):
    if not cfg.uniform_papc:
        return _iterative(mrt.solve_mrt_nominal)(cfg, est, schedule)
    beams, _ = mrt.one_shot_mrt(cfg, est)
    return Design(beams, 1, True, np.zeros(1, dtype=int))


def _registry() -> Dict[str, Algorithm]:
    om = offsetmax
    entries = [
        Algorithm("nominal_r0", "papc_only", _iterative(lambda c, h, schedule: om.solve_offset_max_papc(c, h, "nominal_r0", schedule=schedule)),
                  "zero-offset nominal PAPC design rescaled to the budget"),
        Algorithm("alg1", "papc_only", _iterative(lambda c, h, schedule: om.solve_offset_max_papc(c, h, "nominal", schedule=schedule)),
                  "offset maximisation, nominal loading"),
        Algorithm("alg1_accel", "papc_only", _iterative(lambda c, h, schedule: om.solve_offset_max_papc(c, h, "nominal", True, schedule)),
                  "offset maximisation, nominal loading, dual prediction"),
        Algorithm("alg2", "papc_only", _iterative(lambda c, h, schedule: om.solve_offset_max_papc(c, h, "robust", schedule=schedule)),
                  "offset maximisation, robust loading"),
        Algorithm("alg2_accel", "papc_only", _iterative(lambda c, h, schedule: om.solve_offset_max_papc(c, h, "robust", True, schedule)),
                  "offset maximisation, robust loading, dual prediction"),
        Algorithm("alg3", "generalized", _iterative(om.solve_offset_max_general), "offset maximisation, total budget and PAPCs"),
        Algorithm("tp_robust_offset", "total_only", _iterative(om.solve_offset_max_total), "robust offset maximisation, total budget only"),
        Algorithm("alg4", "papc_only", _iterative(lambda c, h, schedule: zf.solve_zf_papc(c, h, "robust", schedule)), "ZF, robust loading"),
        Algorithm("alg5", "generalized", _iterative(zf.solve_zf_general), "ZF, total budget and PAPCs"),
        Algorithm("zf_uniform_t", "papc_only", _iterative(lambda c, h, schedule: zf.solve_zf_papc(c, h, "uniform_t", schedule)),
                  "ZF, equal nominal gain on normalised channels"),
        Algorithm("zf_uniform_t_unnorm", "papc_only", _iterative(lambda c, h, schedule: zf.solve_zf_papc(c, h, "uniform_t_unnormalized", schedule)),
                  "ZF, equal received power on raw channels"),
        Algorithm("tp_robust_zf", "total_only", _iterative(zf.solve_zf_total), "robust ZF, total budget only"),
        Algorithm("alg6", "papc_only", _iterative(mrt.solve_mrt_nominal), "MRT, equal nominal gain"),
        Algorithm("alg7", "papc_only", _one_shot, "one-shot MRT"),
        Algorithm("alg8", "papc_only", _iterative(mrt.solve_mrt_robust), "MRT, robust loading"),
        Algorithm("alg9", "generalized", _iterative(mrt.solve_mrt_general), "MRT, total budget and PAPCs"),
        Algorithm("tp_robust_mrt", "total_only", _iterative(mrt.solve_mrt_total), "robust MRT, total budget only"),
    ]
    return {a.name: a for a in entries}


ALGORITHMS: Dict[str, Algorithm] = _registry()


def scenario_for(template: ScenarioConfig, n_antennas: int, total_power: float, papc_mode: str,
                 tolerance_fraction: float = 0.1, generalized_factor: float = 1.2) -> ScenarioConfig:
    """Scenario at one sweep point with budgets set by the algorithm family."""
    if papc_mode == "papc_only":
        factor = 1.0
    elif papc_mode == "generalized":
        factor = generalized_factor
    elif papc_mode == "total_only":
        factor = 1.0
    else:
        raise ValueError(f"unknown papc_mode {papc_mode!r}")
    cfg = ScenarioConfig.uniform(
        n_antennas,
        template.n_users,
        total_power,
        papc_factor=factor,
        sinr_target=1.0,
        noise_power=1.0,
        error_variance=template.error_variance,
        tolerance_fraction=tolerance_fraction,
        max_outer_iterations=template.max_outer_iterations,
        fixed_point_tolerance=template.fixed_point_tolerance,
    )
    cfg = replace(cfg, sinr_targets=template.sinr_targets, noise_powers=template.noise_powers)
    if papc_mode == "total_only":
        cfg = cfg.with_papc(np.full(n_antennas, np.inf))
    return cfg


# ---------------------------------------------------------------- simulation


@dataclass
class RealizationRecord:
    """Outcome of one algorithm on one realisation."""

    served: np.ndarray
    outages: np.ndarray  # draws x served
    iterations: int = 0
    converged: bool = True
    failed: bool = False
    elapsed_ms: float = 0.0
    trace: Optional[np.ndarray] = None


@dataclass
class SweepRow:
    sweep_value: float
    algorithm: str
    stats: OutageStats
    n_nonconverged: int
    n_failed: int
    n_skipped: int
    mean_iters: float
    mean_ms: float
    violation_fraction: Optional[np.ndarray] = None

    def csv_fields(self, timing: bool = False) -> List[str]:
        return [
            _fmt(self.sweep_value),
            self.algorithm,
            _fmt(self.stats.mean_outage),
            _fmt(self.stats.max_outage),
            _fmt(self.stats.stderr),
            str(self.stats.realizations_used),
            str(self.n_nonconverged),
            _fmt(self.mean_iters),
            _fmt(self.mean_ms) if timing else "",
        ]

    def to_dict(self) -> dict:
        s = self.stats
        out = {
            "sweep_value": self.sweep_value,
            "algorithm": self.algorithm,
            "outage_mean": s.mean_outage,
            "outage_max_user": s.max_outage,
            "stderr": s.stderr,
            "max_user_stderr": s.max_stderr,
            "per_user_outage": [float(x) for x in s.per_user_outage],
            "served_counts": [int(x) for x in s.served_counts],
            "n_real": s.realizations_used,
            "n_nonconverged": self.n_nonconverged,
            "n_failed": self.n_failed,
            "n_skipped": self.n_skipped,
            "mean_iters": self.mean_iters,
        }
        if self.violation_fraction is not None:
            out["violation_fraction"] = [float(x) for x in self.violation_fraction]
        return out


def _fmt(x: float) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "nan" if not np.isfinite(x) else repr(round(float(x), 12))


def _point_config(spec: ExperimentSpec, template: ScenarioConfig, value) -> Tuple[int, float]:
    if spec.sweep_variable == "total_power":
        return template.n_antennas, float(value)
    return int(value), template.total_power


def simulate_realization(index: int, spec: ExperimentSpec, template: ScenarioConfig, prop: PropagationModel,
                         value, algorithms: Sequence[str], timing: bool = True) -> Optional[Dict[str, RealizationRecord]]:
    """Run every algorithm on realisation ``index``; ``None`` if no user qualifies."""
    n_ant, p_tot = _point_config(spec, template, value)
    base = scenario_for(template, n_ant, p_tot, "papc_only", spec.tolerance_fraction, spec.generalized_papc_factor)
    rng = realization_rng(spec.rng_seed, index)
    channels = draw_realization(rng, base, prop)
    served = select_users(channels, base)
    if served.size == 0:
        return None
    s2 = channels.error_variances
    errors = [channels.errors] + [draw_errors(rng, base, s2) for _ in range(spec.error_draws_per_realization - 1)]
    est = channels.estimate.subset(served)
    out = {}
    for name in algorithms:
        alg = ALGORITHMS[name]
        cfg = scenario_for(template, n_ant, p_tot, alg.papc_mode, spec.tolerance_fraction, spec.generalized_papc_factor)
        # step sizes follow the scenario's user count, not the number selected
        schedule = offsetmax.StepSchedule.default(n_ant, p_tot, template.n_users)
        cfg = cfg.subset(served)
        if prop.error_model == "relative":
            cfg = replace(cfg, error_variance=s2[served])
        start = time.perf_counter()
        try:
            design = alg.solve(cfg, est, schedule)
        except (BeamformingError, np.linalg.LinAlgError, ValueError) as exc:
            # a failed design serves nobody: every selected user is in outage
            log.debug("realisation %d, %s failed: %s", index, name, exc)
            out[name] = RealizationRecord(served, np.ones((len(errors), served.size), dtype=bool), failed=True, converged=False)
            continue
        elapsed = (time.perf_counter() - start) * 1e3 if timing else 0.0
        w = design.beams.weights
        outages = np.empty((len(errors), served.size), dtype=bool)
        for d, e in enumerate(errors):
            true = est.estimated + e[:, served]
            outages[d] = sinr_all(true, w, cfg.noise_powers) < cfg.sinr_targets
        out[name] = RealizationRecord(served, outages, design.iterations, design.converged, False, elapsed, design.trace)
    return out


def _chunk_worker(args):
    indices, spec, template, prop, value, algorithms, timing = args
    return [(i, simulate_realization(i, spec, template, prop, value, algorithms, timing)) for i in indices]


def summarize(records: List[Optional[Dict[str, RealizationRecord]]], algorithm: str, n_users: int, seed: int,
              value, max_trace: Optional[int] = None) -> SweepRow:
    outage = np.zeros(n_users)
    served = np.zeros(n_users)
    used = skipped = nonconv = failed = 0
    iters, ms, traces = [], [], []
    for rec in records:
        if rec is None:
            skipped += 1
            continue
        r = rec[algorithm]
        used += 1
        outage[r.served] += r.outages.sum(axis=0)
        served[r.served] += r.outages.shape[0]
        nonconv += int(not r.converged and not r.failed)
        failed += int(r.failed)
        if not r.failed:
            iters.append(r.iterations)
            ms.append(r.elapsed_ms)
        if max_trace is not None:
            traces.append(r.trace)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_user = np.where(served > 0, outage / np.maximum(served, 1), np.nan)
    total = served.sum()
    mean = outage.sum() / total if total else float("nan")
    stderr = math.sqrt(mean * (1 - mean) / total) if total else float("nan")
    if np.any(served > 0):
        k = int(np.nanargmax(per_user))
        mx = float(per_user[k])
        mx_se = math.sqrt(mx * (1 - mx) / served[k])
    else:
        mx, mx_se = float("nan"), float("nan")
    stats = OutageStats(per_user, mx, used, seed, float(mean), stderr, mx_se, served.astype(int))
    frac = None
    if max_trace is not None:
        frac = violation_fraction(traces, max_trace)
    return SweepRow(
        float(value), algorithm, stats, nonconv, failed, skipped,
        float(np.mean(iters)) if iters else float("nan"), float(np.mean(ms)) if ms else float("nan"), frac,
    )


def violation_fraction(traces: Sequence[Optional[np.ndarray]], length: int) -> np.ndarray:
    """Fraction of runs with at least one violated PAPC at each outer iteration.

    Failed runs count as violating throughout; finished runs as clear after
    their last iteration (unless that iteration still violated).
    """
    counts = np.zeros(length)
    n = 0
    for tr in traces:
        n += 1
        if tr is None:
            counts += 1
            continue
        v = np.zeros(length, dtype=bool)
        m = min(len(tr), length)
        v[:m] = tr[:m] > 0
        if len(tr) and tr[-1] > 0 and len(tr) < length:
            v[len(tr):] = True
        counts += v
    return counts / max(n, 1)


def run_point(spec: ExperimentSpec, template: ScenarioConfig, prop: PropagationModel, value,
              algorithms: Optional[Sequence[str]] = None, workers: int = 1, timing: bool = True):
    """All realisations at one sweep point, in realisation order."""
    algorithms = tuple(algorithms or spec.algorithms)
    indices = list(range(spec.n_realizations))
    if workers <= 1:
        return [simulate_realization(i, spec, template, prop, value, algorithms, timing) for i in indices]
    size = max(1, math.ceil(len(indices) / (workers * 4)))
    chunks = [indices[i:i + size] for i in range(0, len(indices), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_chunk_worker, [(c, spec, template, prop, value, algorithms, timing) for c in chunks])
        results = dict(item for part in parts for item in part)
    return [results[i] for i in indices]


def run_sweep(spec: ExperimentSpec, template: ScenarioConfig, prop: PropagationModel, workers: int = 1,
              trace: bool = False, timing: bool = True) -> List[SweepRow]:
    """One row per (sweep value, algorithm), sweep values outermost.

    With ``trace`` each row carries the per-iteration violation fraction, as
    long as the longest run at that point.
    """
    rows = []
    for value in spec.sweep_values:
        records = run_point(spec, template, prop, value, workers=workers, timing=timing)
        for name in spec.algorithms:
            length = None
            if trace:
                length = max((len(r[name].trace) for r in records if r is not None and r[name].trace is not None), default=1)
            rows.append(summarize(records, name, template.n_users, spec.rng_seed, value, length))
        log.info("sweep value %s done", value)
    return rows


def estimate_outage(solver: str, spec: ExperimentSpec, cfg: ScenarioConfig, prop: PropagationModel,
                    workers: int = 1) -> List[OutageStats]:
    """Outage statistics of one registered algorithm at every sweep value."""
    if solver not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {solver!r}")
    single = ExperimentSpec(**{**asdict(spec), "algorithms": (solver,)})
    return [row.stats for row in run_sweep(single, cfg, prop, workers=workers)]


def pooled_separation(a: OutageStats, b: OutageStats, use_max: bool = True) -> float:
    """``(a - b)`` in units of the pooled standard error; positive means ``a`` is worse."""
    if use_max:
        diff, se = a.max_outage - b.max_outage, math.hypot(a.max_stderr, b.max_stderr)
    else:
        diff, se = a.mean_outage - b.mean_outage, math.hypot(a.stderr, b.stderr)
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / se


def write_csv(rows: Sequence[SweepRow], path, timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row.csv_fields(timing)) + "\n")
