"""Power loading for fixed beam directions.

Two loaders share the same linear structure. For directions ``u_j`` the
nominal margin of user ``k`` is linear in the powers ``beta``::

    h_k^H Q_k h_k - sigma_k^2 = sum_j A_kj beta_j - sigma_k^2

and the robust loader adds the error-induced mean and variance of that margin.
The robust loader equalises ``mean_k / std_k`` across users by iterative
linearisation; the nominal loader equalises the nominal margins themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import SingularSystem
from .model import ScenarioConfig, as_estimate

STD_FLOOR = 1e-12
OFFSET_CAP = 1e12
MAX_LOADING_ITERATIONS = 100
ANDERSON_DEPTH = 3
POLISH_STEPS = 5
POLISH_TOL = 1e-14
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class PowerEquation:
    """One extra linear equation ``coefficients @ beta = rhs`` closing the system.

    Build it with :meth:`total_power` or :meth:`active_set`.
    """

    variant: str
    coefficients: np.ndarray
    rhs: float
    antennas: Optional[np.ndarray] = None

    @classmethod
    def total_power(cls, total: float, n_users: int) -> "PowerEquation":
        return cls("total_power", np.ones(n_users), float(total))

    @classmethod
    def active_set(cls, directions: np.ndarray, antennas, papc) -> "PowerEquation":
        """Sum of the per-antenna power equalities over ``antennas``."""
        antennas = np.asarray(antennas, dtype=int)
        if antennas.dtype == bool or antennas.size == 0:
            raise ValueError("active set must name at least one antenna")
        row = np.sum(np.abs(directions[antennas, :]) ** 2, axis=0)
        return cls("active_set", row, float(np.sum(np.asarray(papc)[antennas])), antennas)

    def residual(self, powers: np.ndarray) -> float:
        return float(self.coefficients @ powers - self.rhs)


@dataclass(frozen=True)
class PowerLoadingState:
    margins_mean: np.ndarray
    margins_std: np.ndarray
    powers: np.ndarray
    offset: float
    iterations: int
    converged: bool = True
    negative_power: bool = False


def _gains(directions: np.ndarray, channels: np.ndarray) -> np.ndarray:
    """``inner[j, k] = u_j^H h_k``."""
    return directions.conj().T @ channels


def _weights(gamma: np.ndarray) -> np.ndarray:
    """``c[k, j]``: +1/gamma_k on the diagonal, -1 elsewhere, so Q_k = sum_j c_kj beta_j u_j u_j^H."""
    c = -np.ones((gamma.size, gamma.size))
    np.fill_diagonal(c, 1.0 / gamma)
    return c


def nominal_matrix(gain2: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``A[k, j]`` with ``h_k^H Q_k h_k = (A @ beta)[k]``; ``gain2[j, k] = |u_j^H h_k|^2``."""
    return _weights(gamma) * gain2.T


def robust_matrix(gain2: np.ndarray, gamma: np.ndarray, error_variance) -> np.ndarray:
    # sigma_ek^2 tr(Q_k) contributes sigma_ek^2 * c_kj to row k
    c = _weights(gamma)
    s2 = np.asarray(error_variance, dtype=float)
    return c * gain2.T + (s2[:, None] if s2.ndim else s2) * c


def margin_moments(directions, powers, channels, gamma, noise, error_variance):
    """Mean and variance of every user's margin ``f_k(e)`` under ``e_k ~ CN(0, sigma_ek^2 I)``.

    ``error_variance`` is a scalar or one variance per user.

    Uses the ``K x K`` Gram matrices only, so no ``N_t x N_t`` matrix is formed.
    """
    directions = np.asarray(directions, dtype=complex)
    channels = np.asarray(channels, dtype=complex)
    powers = np.asarray(powers, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), powers.shape)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), powers.shape)
    inner = _gains(directions, channels)
    gram = directions.conj().T @ directions
    c = _weights(gamma)
    mean = robust_matrix(np.abs(inner) ** 2, gamma, error_variance) @ powers - noise
    coef = c * powers  # coef[k, j] = c_kj beta_j
    v = coef * inner.T  # v[k, j] = c_kj beta_j u_j^H h_k, so Q_k h_k = U v[k]
    qh2 = np.real(np.einsum("kj,jl,kl->k", v.conj(), gram, v))
    trq2 = np.einsum("kj,jl,kl->k", coef, np.abs(gram) ** 2, coef)
    s2 = np.asarray(error_variance, dtype=float)
    var = 2.0 * s2 * qh2 + s2**2 * trq2
    return mean, np.maximum(var, 0.0)


def margin_mean(directions, powers, channel, user, gamma, noise, error_variance) -> float:
    """Mean of ``f_k(e)`` for one user; ``channel`` is that user's estimate."""
    d = np.asarray(directions, dtype=complex)
    beta = np.asarray(powers, dtype=float)
    h = np.asarray(channel, dtype=complex)
    a = np.abs(d.conj().T @ h) ** 2
    c = -np.ones(beta.size)
    c[user] = 1.0 / gamma
    return float(c @ (beta * a) - noise + error_variance * (c @ beta))


def margin_variance(directions, powers, channel, user, gamma, error_variance) -> float:
    d = np.asarray(directions, dtype=complex)
    beta = np.asarray(powers, dtype=float)
    c = -np.ones(beta.size)
    c[user] = 1.0 / gamma
    qk = (d * (c * beta)) @ d.conj().T
    qh = qk @ np.asarray(channel, dtype=complex)
    var = 2.0 * error_variance * np.vdot(qh, qh).real + error_variance**2 * np.sum(np.abs(qk) ** 2)
    return float(max(var, 0.0))


class _Bordered:
    """Solves ``A beta - noise = r * s`` with ``row @ beta = rhs`` for many ``s``.

    ``A`` is factored once; each solve is two triangular sweeps plus a rank-one
    bordering step for the offset ``r``.
    """

    def __init__(self, a: np.ndarray, noise: np.ndarray, eq: PowerEquation):
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularSystem("power-loading matrix is singular", cond)
        self.cond = cond
        self.lu = scipy.linalg.lu_factor(a, check_finite=False)
        self.base = scipy.linalg.lu_solve(self.lu, noise, check_finite=False)
        self.eq = eq

    def solve(self, s: np.ndarray):
        d = scipy.linalg.lu_solve(self.lu, s, check_finite=False)
        denom = self.eq.coefficients @ d
        if denom == 0 or not np.isfinite(denom):
            raise SingularSystem("bordered power equation is degenerate", self.cond)
        r = (self.eq.rhs - self.eq.coefficients @ self.base) / denom
        r = float(np.clip(r, -OFFSET_CAP, OFFSET_CAP))
        return self.base + r * d, r


def _estimated(channels) -> np.ndarray:
    if isinstance(channels, np.ndarray):
        return channels.astype(complex, copy=False)
    return as_estimate(channels).estimated


def robust_power_loading(
    directions,
    channels,
    cfg: ScenarioConfig,
    power_eq: PowerEquation,
    tol: Optional[float] = None,
    max_iter: int = MAX_LOADING_ITERATIONS,
) -> PowerLoadingState:
    """Choose ``beta`` and a common ``r`` with ``mean_k = r * std_k`` and the power equation tight.

    Starts from unit standard deviations and alternates the linear solve with a
    standard-deviation update (Anderson-mixed) until the relative change drops
    below ``tol``.
    With no channel error the deviations stay at one, which is the nominal
    offset-maximising loading.
    """
    tol = cfg.fixed_point_tolerance if tol is None else tol
    h = _estimated(channels)
    u = np.asarray(directions, dtype=complex)
    gamma, noise, s2 = cfg.sinr_targets, cfg.noise_powers, cfg.error_variance
    gain2 = np.abs(_gains(u, h)) ** 2
    system = _Bordered(robust_matrix(gain2, gamma, s2), noise, power_eq)

    def update(std):
        beta, r = system.solve(std)
        _, var = margin_moments(u, beta, h, gamma, noise, s2)
        return np.maximum(np.sqrt(var), STD_FLOOR)

    std = np.ones(u.shape[1])
    noisy = bool(np.any(np.asarray(s2) > 0.0))
    converged = not noisy
    it = 0
    # Anderson mixing over the last few iterates; the plain map contracts slowly when r is large
    xs, fs = [], []
    polish = 0
    while noisy and it < max_iter and polish <= POLISH_STEPS:
        g = update(std)
        f = g - std
        it += 1
        change = np.max(np.abs(f) / std)
        if change < tol:
            # keep going a few steps so the margins match the returned powers to rounding
            converged = True
            polish += 1
            if change < POLISH_TOL:
                std = g
                break
        xs.append(std)
        fs.append(f)
        if len(fs) > ANDERSON_DEPTH + 1:
            xs.pop(0)
            fs.pop(0)
        nxt = g
        if len(fs) > 1:
            df = np.diff(np.array(fs), axis=0).T
            dx = np.diff(np.array(xs), axis=0).T
            coef, *_ = np.linalg.lstsq(df, f, rcond=None)
            cand = g - (dx + df) @ coef
            if np.all(np.isfinite(cand)) and np.all(cand > 0):
                nxt = cand
        std = nxt
    beta, r = system.solve(std)
    mean, var = margin_moments(u, beta, h, gamma, noise, s2)
    if noisy:
        std = np.sqrt(var)
    return PowerLoadingState(
        margins_mean=mean,
        margins_std=std,
        powers=beta,
        offset=r,
        iterations=it,
        converged=converged,
        negative_power=bool(np.any(beta < 0)),
    )


def nominal_power_loading(
    directions,
    channels,
    cfg: ScenarioConfig,
    power_eq: PowerEquation,
    fixed_offset: Optional[float] = None,
) -> PowerLoadingState:
    """Offset-maximising loading: every nominal margin equals a common ``r``.

    With ``fixed_offset`` the ``K`` margin equations are solved at that offset
    and the powers are then scaled by one factor so the power equation holds.
    """
    h = _estimated(channels)
    u = np.asarray(directions, dtype=complex)
    gamma, noise = cfg.sinr_targets, cfg.noise_powers
    a = nominal_matrix(np.abs(_gains(u, h)) ** 2, gamma)
    system = _Bordered(a, noise, power_eq)
    if fixed_offset is None:
        beta, r = system.solve(np.ones(u.shape[1]))
    else:
        beta = system.base + float(fixed_offset) * scipy.linalg.lu_solve(
            system.lu, np.ones(u.shape[1]), check_finite=False
        )
        total = power_eq.coefficients @ beta
        if total > 0:
            beta = beta * (power_eq.rhs / total)
        margins = a @ beta - noise
        r = float(np.min(margins))
    mean, var = margin_moments(u, beta, h, gamma, noise, cfg.error_variance)
    return PowerLoadingState(
        margins_mean=mean,
        margins_std=np.sqrt(var),
        powers=beta,
        offset=r,
        iterations=1,
        converged=True,
        negative_power=bool(np.any(beta < 0)),
    )


def load_under_papcs(loader, directions, papc_duals, papc, flags: Optional[set] = None) -> PowerLoadingState:
    """Run ``loader(power_eq)`` with the active-set equation over antennas whose dual is positive.

    Any loading that meets every PAPC has ``sum(beta) <= sum(p)``. When the
    active-set solution breaks that bound (the duals sit on antennas the
    directions barely use) the aggregate equation ``sum(beta) = sum(p)`` is used
    instead and ``"active_set_fallback"`` is added to ``flags``.
    """
    p = np.asarray(papc, dtype=float)
    active = np.flatnonzero(np.asarray(papc_duals) > 0)
    n_users = directions.shape[1]
    if 0 < active.size < p.size:
        try:
            state = loader(PowerEquation.active_set(directions, active, p))
        except SingularSystem:
            state = None
        if state is not None and np.all(np.isfinite(state.powers)) and state.powers.sum() <= p.sum() * (1 + 1e-9):
            return state
        if flags is not None:
            flags.add("active_set_fallback")
    return loader(PowerEquation.total_power(p.sum(), n_users))
