"""Offset-maximisation beamforming under per-antenna power constraints.

For a diagonal weighting ``B`` (the PAPC duals, possibly plus identity) the
optimal directions are ``normalize((B + sum_j nu_j h_j h_j^H)^+ h_k)`` where the
SINR duals ``nu`` solve a standard fixed point. The PAPC duals are found by a
projected subgradient method; between updates the powers come from either the
nominal offset loader or the robust loader.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import DegenerateChannel, DegenerateDirection
from .model import DualState, ScenarioConfig, as_estimate
from .outer import SolveResult, run_outer_loop
from .powerload import PowerEquation, load_under_papcs, nominal_power_loading, robust_power_loading

MODES = ("nominal", "robust", "nominal_r0")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``t_n = t_{n-1} - t_{n-1}^2 / damping``."""

    t0: float
    damping: float = 1000.0

    def __post_init__(self):
        if not (self.t0 > 0 and self.damping > 0):
            raise ValueError("t0 and damping must be positive")

    @classmethod
    def default(cls, n_antennas: int, total_power: float, n_users: int, damping: float = 1000.0):
        return cls(n_antennas / (total_power * n_users), damping)

    def next(self, t: float) -> float:
        return t - t * t / self.damping

    def steps(self, n: int) -> np.ndarray:
        out = np.empty(n)
        t = self.t0
        for i in range(n):
            out[i] = t
            t = self.next(t)
        return out


@dataclass(frozen=True)
class Prediction:
    """Affine jump ``q <- scale * q + shift`` applied once, after the first update."""

    enabled: bool = False
    scale: float = 2.8
    shift: float = -1.8

    def apply(self, duals: DualState, papc: np.ndarray) -> DualState:
        q = project_duals(self.scale * duals.papc_duals + self.shift, papc)
        return DualState(q, duals.sinr_duals, duals.step_size, duals.iteration)


class NuSolution(NamedTuple):
    nu: np.ndarray
    iterations: int
    converged: bool


def fixed_point_duals(base, channels, gammas, tol: float = 1e-9, max_iter: int = 500, nu0=None) -> NuSolution:
    """SINR duals for diagonal weighting ``base``.

    Solves ``1/nu_k = h_k^H (diag(base) + sum_j nu_j h_j h_j^H)^+ h_k (1 + 1/gamma_k)``
    by Picard iteration, damped over the first five steps. The default start
    is ``gamma_k / ((1 + gamma_k) ||h_k||^2)``.
    """
    h = np.asarray(channels, dtype=complex)
    if h.ndim == 1:
        h = h[:, None]
    gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (h.shape[1],))
    base = np.broadcast_to(np.asarray(base, dtype=float), (h.shape[0],))
    if np.any(base < 0):
        raise ValueError("base weights must be non-negative")
    norms2 = np.sum(np.abs(h) ** 2, axis=0)
    if np.any(norms2 == 0):
        raise DegenerateChannel(f"zero channel for user(s) {np.flatnonzero(norms2 == 0).tolist()}")
    if nu0 is None or np.any(np.asarray(nu0) <= 0):
        nu0 = gammas / ((1.0 + gammas) * norms2)
    nu, it, status = kernels.nu_fixed_point(base, h, gammas, nu0, tol, max_iter)
    return NuSolution(nu, it, status == kernels.CONVERGED)


def beam_directions(base, nu, channels) -> np.ndarray:
    """Unit-norm ``(diag(base) + sum_j nu_j h_j h_j^H)^+ h_k`` for every user."""
    h = np.asarray(channels, dtype=complex)
    if h.ndim == 1:
        h = h[:, None]
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0):
        raise ValueError("nu must be non-negative")
    base = np.broadcast_to(np.asarray(base, dtype=float), (h.shape[0],))
    w = kernels.apply_inverse(base, h, nu)
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms < 1e-14):
        raise DegenerateDirection(f"direction for user(s) {np.flatnonzero(norms < 1e-14).tolist()} vanished")
    return w / norms


def project_duals(q_raw, papc) -> np.ndarray:
    """Euclidean projection onto ``{q >= 0, sum_i q_i p_i = sum_i p_i}``."""
    p = np.asarray(papc, dtype=float)
    if np.any(p <= 0):
        raise ValueError("per-antenna budgets must be positive")
    q, _ = kernels.project_duals(np.asarray(q_raw, dtype=float), p)
    return q


def initial_papc_duals(papc) -> np.ndarray:
    """Uniform-weight feasible start: ``q_i = sum(p) / (N p_i)``, all ones for uniform ``p``."""
    p = np.asarray(papc, dtype=float)
    return p.sum() / (p.size * p)


def dual_update_papc_only(state: DualState, antenna_powers, papc, schedule: StepSchedule) -> DualState:
    """Projected subgradient step for the PAPC-only problems."""
    q, t = state.papc_duals, state.step_size
    p = np.asarray(papc, dtype=float)
    powers = np.asarray(antenna_powers, dtype=float)
    if np.all(p == p[0]) and np.all(q > 0):
        raw = q + t * (powers - p)
    else:
        # shifting along p does not move the projection, so p need not be subtracted
        raw = q + t * powers
    return DualState(project_duals(raw, p), state.sinr_duals, schedule.next(t), state.iteration + 1)


def dual_update_general(state: DualState, antenna_powers, papc, schedule: StepSchedule) -> DualState:
    """``q <- max(q + t (powers - p), 0)`` for problems that also have a total budget."""
    t = state.step_size
    q = np.maximum(state.papc_duals + t * (np.asarray(antenna_powers) - np.asarray(papc)), 0.0)
    return DualState(q, state.sinr_duals, schedule.next(t), state.iteration + 1)


def _require_positive_papc(cfg: ScenarioConfig):
    if np.any(cfg.papc <= 0):
        raise ValueError("per-antenna budgets must be positive")


def _offset_directions(h, gamma, regularized: bool, flags: set):
    def directions(duals: DualState):
        base = duals.papc_duals + 1.0 if regularized else duals.papc_duals
        sol = fixed_point_duals(base, h, gamma, nu0=duals.sinr_duals)
        if not sol.converged:
            flags.add("nu_nonconvergence")
        duals.sinr_duals = sol.nu
        return beam_directions(base, sol.nu, h)

    return directions


def solve_offset_max_papc(
    cfg: ScenarioConfig,
    channels,
    mode: str = "robust",
    accelerate: bool = False,
    schedule: Optional[StepSchedule] = None,
    prediction: Optional[Prediction] = None,
    callback=None,
) -> SolveResult:
    """Offset maximisation with PAPCs only.

    ``mode="nominal"`` loads power with a common nominal offset,
    ``mode="robust"`` uses the robust loader and ``mode="nominal_r0"`` solves
    the SINR equalities at zero offset and rescales to the budget.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    _require_positive_papc(cfg)
    h = as_estimate(channels).estimated
    p = cfg.papc
    schedule = schedule or StepSchedule.default(cfg.n_antennas, p.sum(), cfg.n_users)
    if prediction is None:
        prediction = Prediction(enabled=accelerate)
    flags: set = set()

    def loading(u, duals):
        if mode == "robust":
            load = lambda eq: robust_power_loading(u, h, cfg, eq)  # noqa: E731
        else:
            r0 = 0.0 if mode == "nominal_r0" else None
            load = lambda eq: nominal_power_loading(u, h, cfg, eq, fixed_offset=r0)  # noqa: E731
        return load_under_papcs(load, u, duals.papc_duals, p, flags)

    duals = DualState(initial_papc_duals(p), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        _offset_directions(h, cfg.sinr_targets, False, flags),
        loading,
        lambda d, powers: dual_update_papc_only(d, powers, p, schedule),
        (lambda d: prediction.apply(d, p)) if prediction.enabled else None,
        flags,
        callback,
    )


def solve_offset_max_general(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None, callback=None) -> SolveResult:
    """Offset maximisation with both a total budget and PAPCs (robust loading)."""
    h = as_estimate(channels).estimated
    schedule = schedule or StepSchedule.default(cfg.n_antennas, cfg.total_power, cfg.n_users)
    eq = PowerEquation.total_power(cfg.total_power, cfg.n_users)
    flags: set = set()
    duals = DualState(np.zeros(cfg.n_antennas), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        _offset_directions(h, cfg.sinr_targets, True, flags),
        lambda u, d: robust_power_loading(u, h, cfg, eq),
        lambda d, powers: dual_update_general(d, powers, cfg.papc, schedule),
        flags=flags,
        callback=callback,
    )


def solve_offset_max_total(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None) -> SolveResult:
    """Total-power-only benchmark: offset-maximising directions with robust loading, PAPCs ignored."""
    h = as_estimate(channels).estimated
    return solve_offset_max_general(cfg.with_papc(np.full(cfg.n_antennas, np.inf)), h, schedule)
