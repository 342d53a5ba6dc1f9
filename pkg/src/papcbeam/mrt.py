"""Maximum-ratio transmission under per-antenna power constraints.

With a diagonal dual weighting ``Q`` the optimal MRT direction for user ``k``
is ``normalize(Q^-1 h_k)``. The iterative solvers tune ``Q`` by projected
subgradient steps; ``one_shot_mrt`` builds ``Q`` in closed form for uniform
budgets and fixes the per-antenna powers with an elementwise correction.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import ZeroChannelEntry, ZeroDiagonal
from .model import BeamformerSet, DualState, ScenarioConfig, as_estimate
from .offsetmax import StepSchedule, dual_update_general, dual_update_papc_only, initial_papc_duals
from .outer import SolveResult, run_outer_loop
from .powerload import PowerEquation, PowerLoadingState, load_under_papcs, margin_moments, robust_power_loading

# duals below this fraction of the largest are lifted before inverting Q
DUAL_FLOOR = 1e-8


class MrtClosedForm(NamedTuple):
    antenna_weights: np.ndarray
    duals: np.ndarray
    signal_level: float
    correction: np.ndarray


def mrt_directions(base, channels) -> np.ndarray:
    """Unit columns ``normalize(diag(base)^-1 h_k)``."""
    base = np.asarray(base, dtype=float)
    if np.any(base < 1e-14):
        raise ZeroDiagonal(f"dual weighting vanishes on antenna(s) {np.flatnonzero(base < 1e-14).tolist()}")
    d = np.asarray(channels, dtype=complex) / base[:, None]
    return d / np.linalg.norm(d, axis=0)


def _floored(q, flags: set) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    floor = DUAL_FLOOR * q.max()
    if np.any(q < floor):
        flags.add("dual_floor")
        return np.maximum(q, floor)
    return q


def _equal_gain_state(u, hn, h, cfg, total) -> PowerLoadingState:
    # beta_k |h_k^H u_k|^2 = t for every k, with sum(beta) = total
    gain = np.abs(np.sum(hn.conj() * u, axis=0)) ** 2
    t = total / np.sum(1.0 / gain)
    beta = t / gain
    mean, var = margin_moments(u, beta, h, cfg.sinr_targets, cfg.noise_powers, cfg.error_variance)
    return PowerLoadingState(mean, np.sqrt(var), beta, float(t), 1)


def solve_mrt_nominal(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None, callback=None) -> SolveResult:
    """Iterative nominal MRT: every user gets the same nominal signal power ``t``, ``sum(beta) = sum(p)``."""
    est = as_estimate(channels)
    h, hn = est.estimated, est.normalized
    p = cfg.papc
    if np.any(p <= 0):
        raise ValueError("per-antenna budgets must be positive")
    schedule = schedule or StepSchedule.default(cfg.n_antennas, p.sum(), cfg.n_users)
    flags: set = set()
    duals = DualState(initial_papc_duals(p), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        lambda d: mrt_directions(_floored(d.papc_duals, flags), hn),
        lambda u, d: _equal_gain_state(u, hn, h, cfg, p.sum()),
        lambda d, w: dual_update_papc_only(d, w, p, schedule),
        flags=flags,
        callback=callback,
    )


def closed_form_duals(normalized, weights=None) -> MrtClosedForm:
    """Antenna weights ``g``, duals ``q`` and level ``t`` before the power correction."""
    hn = np.asarray(normalized, dtype=complex)
    k = hn.shape[1]
    nu = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    g = (np.abs(hn) ** 2) @ (nu**2)
    t = float(np.sum(np.sqrt(g)))
    return MrtClosedForm(g, t * np.sqrt(g), t, np.ones(hn.shape[0]))


def one_shot_mrt(cfg: ScenarioConfig, channels, weights=None):
    """Closed-form approximate nominal MRT for uniform per-antenna budgets.

    ``weights`` are the per-user SINR duals (default ``1/K`` each). Returns the
    beams and the :class:`MrtClosedForm` record; after the correction each
    antenna radiates exactly its budget. Only vectors of length ``N_t`` and the
    ``N_t x K`` beam matrix are allocated.
    """
    if not cfg.uniform_papc:
        raise ValueError("the one-shot closed form needs uniform per-antenna budgets; use solve_mrt_nominal")
    hn = as_estimate(channels).normalized
    k = hn.shape[1]
    nu = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if nu.shape != (k,) or np.any(nu <= 0):
        raise ValueError("weights must be K positive values")
    g = closed_form_duals(hn, nu).antenna_weights
    if np.any(g == 0):
        raise ZeroChannelEntry(f"antenna(s) {np.flatnonzero(g == 0).tolist()} see no user")
    w, g, q, t, z = kernels.one_shot_mrt(hn, nu, cfg.papc)
    beams = BeamformerSet.from_weights(w, offset=t)
    return beams, MrtClosedForm(g, q, float(t), z)


def solve_mrt_robust(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None, callback=None) -> SolveResult:
    """MRT directions from the PAPC duals with robust power loading."""
    est = as_estimate(channels)
    h, hn = est.estimated, est.normalized
    p = cfg.papc
    if np.any(p <= 0):
        raise ValueError("per-antenna budgets must be positive")
    schedule = schedule or StepSchedule.default(cfg.n_antennas, p.sum(), cfg.n_users)
    flags: set = set()

    def load(u, duals):
        return load_under_papcs(lambda eq: robust_power_loading(u, h, cfg, eq), u, duals.papc_duals, p, flags)

    duals = DualState(initial_papc_duals(p), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        lambda d: mrt_directions(_floored(d.papc_duals, flags), hn),
        load,
        lambda d, w: dual_update_papc_only(d, w, p, schedule),
        flags=flags,
        callback=callback,
    )


def solve_mrt_general(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None, callback=None) -> SolveResult:
    """MRT with a total budget and PAPCs: directions ``(I + Q)^-1 h_k``, robust loading at ``sum(beta) = P_t``."""
    est = as_estimate(channels)
    h, hn = est.estimated, est.normalized
    schedule = schedule or StepSchedule.default(cfg.n_antennas, cfg.total_power, cfg.n_users)
    eq = PowerEquation.total_power(cfg.total_power, cfg.n_users)
    duals = DualState(np.zeros(cfg.n_antennas), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        lambda d: mrt_directions(1.0 + d.papc_duals, hn),
        lambda u, d: robust_power_loading(u, h, cfg, eq),
        lambda d, w: dual_update_general(d, w, cfg.papc, schedule),
        callback=callback,
    )


def solve_mrt_total(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None) -> SolveResult:
    """Total-power-only benchmark: plain MRT with robust loading."""
    return solve_mrt_general(cfg.with_papc(np.full(cfg.n_antennas, np.inf)), channels, schedule)


def duality_gap(result: SolveResult, cfg: ScenarioConfig, channels) -> float:
    """Relative gap between ``t`` and ``sum_i q_i p_i`` for a nominal MRT solution.

    The solver's duals are normalised to ``sum_i q_i p_i = sum_i p_i``; the
    stationarity conditions fix the scale ``s`` at which the SINR duals
    ``nu_k = s / (h_k^H Q^-1 h_k)`` sum to one, so the comparison uses ``s q``.
    """
    hn = as_estimate(channels).normalized
    q = np.maximum(result.duals.papc_duals, DUAL_FLOOR * result.duals.papc_duals.max())
    quad = np.sum(np.abs(hn) ** 2 / q[:, None], axis=0)
    s = 1.0 / np.sum(1.0 / quad)
    t = result.beams.offset
    return float(abs(t - s * np.sum(q * cfg.papc)) / t)
