"""Zero-forcing beamforming under per-antenna power constraints.

Every ZF direction for user ``k`` can be written ``u_zf_k + H_perp m_k``, where
``u_zf_k`` is the minimum-norm unit-gain ZF direction and ``H_perp`` spans the
null space of the (normalised) channels. The PAPC duals pick the scaling
matrix ``M``; power is then loaded robustly or with a common nominal gain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import RankDeficient
from .model import BeamformerSet, DualState, ScenarioConfig, as_estimate, hermitian_pinv, per_antenna_powers
from .offsetmax import (
    StepSchedule,
    dual_update_general,
    dual_update_papc_only,
    initial_papc_duals,
)
from .outer import SolveResult, run_outer_loop
from .powerload import PowerEquation, PowerLoadingState, load_under_papcs, margin_moments, robust_power_loading

LOADINGS = ("robust", "uniform_t", "uniform_t_unnormalized")
CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class ZfBasis:
    zf_directions: np.ndarray
    null_basis: np.ndarray
    scaling: np.ndarray

    @property
    def n_null(self) -> int:
        return self.null_basis.shape[1]

    def beams(self, scaling: Optional[np.ndarray] = None) -> np.ndarray:
        """Unnormalised ZF beams ``U_zf + H_perp M`` (unit gain on the defining channels)."""
        m = self.scaling if scaling is None else scaling
        return self.zf_directions + self.null_basis @ m


def zf_basis(channels) -> ZfBasis:
    """ZF directions and an orthonormal null-space basis for the columns of ``channels``."""
    h = np.asarray(channels, dtype=complex)
    n, k = h.shape
    if k > n:
        raise RankDeficient(f"{k} users cannot be zero-forced with {n} antennas")
    gram = h.conj().T @ h
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise RankDeficient(f"channel Gram matrix condition number {cond:.3g}")
    u_zf = np.linalg.solve(gram, h.conj().T).conj().T
    q, _ = np.linalg.qr(h, mode="complete")
    null = q[:, k:]
    return ZfBasis(u_zf, null, np.zeros((n - k, k), dtype=complex))


def scaling_matrix(basis: ZfBasis, q_diag, regularized: bool = False) -> np.ndarray:
    """``M = -(H_perp^H D H_perp)^+ H_perp^H D U_zf`` with ``D = diag(q)`` (plus ``I`` if regularised)."""
    d = np.asarray(q_diag, dtype=float)
    if np.any(d < 0):
        raise ValueError("dual weights must be non-negative")
    if regularized:
        d = d + 1.0
    if basis.n_null == 0:
        return basis.scaling
    hp = basis.null_basis
    weighted = hp.conj().T * d
    return -hermitian_pinv(weighted @ hp) @ (weighted @ basis.zf_directions)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=0)


def _uniform_state(directions, v, h, cfg, t) -> PowerLoadingState:
    beta = t * np.sum(np.abs(v) ** 2, axis=0)
    mean, var = margin_moments(directions, beta, h, cfg.sinr_targets, cfg.noise_powers, cfg.error_variance)
    return PowerLoadingState(mean, np.sqrt(var), beta, float(t), 1)


def solve_zf_papc(
    cfg: ScenarioConfig, channels, loading: str = "robust", schedule: Optional[StepSchedule] = None, callback=None
) -> SolveResult:
    """ZF with PAPCs only.

    ``loading="robust"`` applies the robust loader on every iteration.
    The ``uniform_t`` variants give every user the same nominal signal gain
    ``t`` (towards the normalised channel, or the raw estimate for
    ``uniform_t_unnormalized``); once the duals settle, ``t`` is the largest
    value that meets every PAPC exactly.
    """
    if loading not in LOADINGS:
        raise ValueError(f"loading must be one of {LOADINGS}")
    if np.any(cfg.papc <= 0):
        raise ValueError("per-antenna budgets must be positive")
    est = as_estimate(channels)
    h = est.estimated
    basis = zf_basis(h if loading == "uniform_t_unnormalized" else est.normalized)
    p = cfg.papc
    schedule = schedule or StepSchedule.default(cfg.n_antennas, p.sum(), cfg.n_users)
    current = {}
    flags: set = set()

    def directions(duals):
        v = basis.beams(scaling_matrix(basis, duals.papc_duals))
        current["v"] = v
        return _normalize(v)

    def uniform(u, eq):
        v = current["v"]
        denom = eq.coefficients @ np.sum(np.abs(v) ** 2, axis=0)
        if not denom > 0:
            return None  # the beams miss the active set; the caller falls back
        return _uniform_state(u, v, h, cfg, eq.rhs / denom)

    def load(u, duals):
        if loading == "robust":
            return load_under_papcs(lambda eq: robust_power_loading(u, h, cfg, eq), u, duals.papc_duals, p, flags)
        return load_under_papcs(lambda eq: uniform(u, eq), u, duals.papc_duals, p, flags)

    duals = DualState(initial_papc_duals(p), np.zeros(cfg.n_users), schedule.t0)
    result = run_outer_loop(
        cfg, duals, directions, load, lambda d, w: dual_update_papc_only(d, w, p, schedule), flags=flags, callback=callback
    )
    if loading != "robust":
        v = current["v"]
        unit = per_antenna_powers(BeamformerSet(_normalize(v), np.sum(np.abs(v) ** 2, axis=0)))
        # antennas the beams never touch impose no limit on t
        t = float(np.min(p[unit > 0] / unit[unit > 0]))
        result.loading = _uniform_state(result.beams.directions, v, h, cfg, t)
        result.beams = BeamformerSet(result.beams.directions, result.loading.powers, t)
    return result


def solve_zf_general(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None, callback=None) -> SolveResult:
    """ZF with a total budget and PAPCs, robust loading at ``sum(beta) = P_t``."""
    est = as_estimate(channels)
    h = est.estimated
    basis = zf_basis(est.normalized)
    schedule = schedule or StepSchedule.default(cfg.n_antennas, cfg.total_power, cfg.n_users)
    eq = PowerEquation.total_power(cfg.total_power, cfg.n_users)

    def directions(duals):
        return _normalize(basis.beams(scaling_matrix(basis, duals.papc_duals, regularized=True)))

    duals = DualState(np.zeros(cfg.n_antennas), np.zeros(cfg.n_users), schedule.t0)
    return run_outer_loop(
        cfg,
        duals,
        directions,
        lambda u, d: robust_power_loading(u, h, cfg, eq),
        lambda d, w: dual_update_general(d, w, cfg.papc, schedule),
        callback=callback,
    )


def solve_zf_total(cfg: ScenarioConfig, channels, schedule: Optional[StepSchedule] = None) -> SolveResult:
    """Total-power-only benchmark: plain ZF directions with robust loading."""
    return solve_zf_general(cfg.with_papc(np.full(cfg.n_antennas, np.inf)), channels, schedule)
