"""Domain types and the SINR / interference arithmetic shared by all solvers.

All powers are linear. Channel matrices are ``N_t x K`` with one user per
column, beamformers likewise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateChannel


def _vector(value, length: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ConfigError(f"expected length {length}, got shape {arr.shape}", name)
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScenarioConfig:
    """Static problem data for one beamforming instance.

    Vector fields accept scalars, which are broadcast to the right length.
    ``error_variance`` stays a float when given as one; a length-``K`` vector
    gives every user its own error variance.
    """

    n_antennas: int
    n_users: int
    total_power: float
    papc: np.ndarray
    sinr_targets: np.ndarray
    noise_powers: np.ndarray
    error_variance: Union[float, np.ndarray] = 0.0
    papc_tolerance: Optional[np.ndarray] = None
    max_outer_iterations: int = 200
    fixed_point_tolerance: float = 1e-8

    def __post_init__(self):
        if int(self.n_antennas) < 1:
            raise ConfigError("must be a positive integer", "n_antennas")
        if int(self.n_users) < 1:
            raise ConfigError("must be a positive integer", "n_users")
        object.__setattr__(self, "n_antennas", int(self.n_antennas))
        object.__setattr__(self, "n_users", int(self.n_users))
        n, k = self.n_antennas, self.n_users
        if not self.total_power >= 0:
            raise ConfigError("must be non-negative", "total_power")
        papc = _vector(self.papc, n, "papc")
        if np.any(papc < 0):
            raise ConfigError("must be non-negative", "papc")
        gamma = _vector(self.sinr_targets, k, "sinr_targets")
        if np.any(gamma <= 0):
            raise ConfigError("must be positive", "sinr_targets")
        noise = _vector(self.noise_powers, k, "noise_powers")
        if np.any(noise < 0):
            raise ConfigError("must be non-negative", "noise_powers")
        s2 = self.error_variance
        if np.ndim(s2) == 0:
            s2 = float(s2)
        else:
            s2 = _vector(s2, k, "error_variance")
        if not np.all(np.asarray(s2) >= 0):
            raise ConfigError("must be non-negative", "error_variance")
        tol = self.papc_tolerance
        tol = _vector(0.1 * papc if tol is None else tol, n, "papc_tolerance")
        if np.any(tol <= 0):
            raise ConfigError("must be positive", "papc_tolerance")
        if int(self.max_outer_iterations) < 1:
            raise ConfigError("must be a positive integer", "max_outer_iterations")
        if not self.fixed_point_tolerance > 0:
            raise ConfigError("must be positive", "fixed_point_tolerance")
        object.__setattr__(self, "total_power", float(self.total_power))
        object.__setattr__(self, "error_variance", s2)
        object.__setattr__(self, "papc", papc)
        object.__setattr__(self, "sinr_targets", gamma)
        object.__setattr__(self, "noise_powers", noise)
        object.__setattr__(self, "papc_tolerance", tol)
        object.__setattr__(self, "max_outer_iterations", int(self.max_outer_iterations))

    @classmethod
    def uniform(
        cls,
        n_antennas: int,
        n_users: int,
        total_power: float,
        *,
        papc_factor: float = 1.0,
        sinr_target: float = 2.0,
        noise_power: float = 1.0,
        error_variance: float = 0.0,
        tolerance_fraction: float = 0.1,
        **kwargs,
    ) -> "ScenarioConfig":
        """Uniform users and antennas with ``p_i = papc_factor * P_t / N_t``."""
        p = papc_factor * total_power / n_antennas
        return cls(
            n_antennas=n_antennas,
            n_users=n_users,
            total_power=total_power,
            papc=np.full(n_antennas, p),
            sinr_targets=np.full(n_users, sinr_target),
            noise_powers=np.full(n_users, noise_power),
            error_variance=error_variance,
            papc_tolerance=np.full(n_antennas, tolerance_fraction * p),
            **kwargs,
        )

    def subset(self, users: Sequence[int]) -> "ScenarioConfig":
        """Configuration restricted to the given users."""
        users = np.asarray(users, dtype=int)
        return replace(
            self,
            n_users=len(users),
            sinr_targets=self.sinr_targets[users],
            noise_powers=self.noise_powers[users],
            error_variance=self.error_variance if np.ndim(self.error_variance) == 0 else self.error_variance[users],
        )

    def with_papc(self, papc, tolerance_fraction: Optional[float] = None) -> "ScenarioConfig":
        papc = _vector(papc, self.n_antennas, "papc")
        if tolerance_fraction is None:
            return replace(self, papc=papc)
        return replace(self, papc=papc, papc_tolerance=tolerance_fraction * papc)

    @property
    def error_variances(self) -> np.ndarray:
        """Per-user error variances, broadcast from a scalar if needed."""
        return np.broadcast_to(np.asarray(self.error_variance, dtype=float), (self.n_users,))

    @property
    def uniform_papc(self) -> bool:
        return bool(np.all(self.papc == self.papc[0]))


def normalize_columns(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms == 0):
        raise DegenerateChannel(f"zero-norm column(s) {np.flatnonzero(norms == 0).tolist()}")
    return mat / norms


@dataclass(frozen=True)
class ChannelEstimate:
    """What the transmitter knows: estimated channels and their directions.

    Solvers only ever receive this type, never the true channels.
    """

    estimated: np.ndarray
    normalized: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        est = np.asarray(self.estimated, dtype=complex)
        if est.ndim == 1:
            est = est[:, None]
        object.__setattr__(self, "estimated", est)
        object.__setattr__(self, "normalized", normalize_columns(est))

    @property
    def n_antennas(self) -> int:
        return self.estimated.shape[0]

    @property
    def n_users(self) -> int:
        return self.estimated.shape[1]

    def subset(self, users) -> "ChannelEstimate":
        return ChannelEstimate(self.estimated[:, np.asarray(users, dtype=int)])


def as_estimate(channels) -> ChannelEstimate:
    if isinstance(channels, ChannelEstimate):
        return channels
    if isinstance(channels, ChannelSet):
        return channels.estimate
    return ChannelEstimate(channels)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realisation: estimate, estimation error and true channel.

    ``error_variances`` optionally records the per-user variance the errors
    were drawn with.
    """

    estimated: np.ndarray
    errors: np.ndarray
    error_variances: Optional[np.ndarray] = None

    def __post_init__(self):
        est = np.asarray(self.estimated, dtype=complex)
        err = np.asarray(self.errors, dtype=complex)
        if est.shape != err.shape:
            raise ValueError("estimated and errors must have the same shape")
        object.__setattr__(self, "estimated", est)
        object.__setattr__(self, "errors", err)
        if self.error_variances is not None:
            s2 = np.broadcast_to(np.asarray(self.error_variances, dtype=float), (est.shape[1],)).copy()
            s2.setflags(write=False)
            object.__setattr__(self, "error_variances", s2)

    @property
    def true_channels(self) -> np.ndarray:
        return self.estimated + self.errors

    @property
    def normalized(self) -> np.ndarray:
        return normalize_columns(self.estimated)

    @property
    def estimate(self) -> ChannelEstimate:
        return ChannelEstimate(self.estimated)

    def subset(self, users) -> "ChannelSet":
        users = np.asarray(users, dtype=int)
        s2 = None if self.error_variances is None else self.error_variances[users]
        return ChannelSet(self.estimated[:, users], self.errors[:, users], s2)


@dataclass(frozen=True)
class BeamformerSet:
    """Unit-norm directions ``u_k`` and powers ``beta_k``; ``w_k = sqrt(beta_k) u_k``."""

    directions: np.ndarray
    powers: np.ndarray
    offset: float = float("nan")

    def __post_init__(self):
        u = np.asarray(self.directions, dtype=complex)
        if u.ndim == 1:
            u = u[:, None]
        beta = np.atleast_1d(np.asarray(self.powers, dtype=float))
        if beta.shape != (u.shape[1],):
            raise ValueError(f"powers shape {beta.shape} does not match {u.shape[1]} beams")
        if np.any(beta < 0):
            raise ValueError("beam powers must be non-negative")
        object.__setattr__(self, "directions", u)
        object.__setattr__(self, "powers", beta)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_weights(cls, weights, offset: float = float("nan")) -> "BeamformerSet":
        w = np.asarray(weights, dtype=complex)
        if w.ndim == 1:
            w = w[:, None]
        norms = np.linalg.norm(w, axis=0)
        u = np.zeros_like(w)
        nz = norms > 0
        u[:, nz] = w[:, nz] / norms[nz]
        # zero beams get an arbitrary unit direction so the invariant holds
        u[0, ~nz] = 1.0
        return cls(u, norms**2, offset)

    @property
    def weights(self) -> np.ndarray:
        return self.directions * np.sqrt(self.powers)

    @property
    def n_users(self) -> int:
        return self.directions.shape[1]


@dataclass
class DualState:
    """Diagonal PAPC duals ``q``, SINR duals ``nu`` and the step-size state."""

    papc_duals: np.ndarray
    sinr_duals: np.ndarray
    step_size: float
    iteration: int = 0

    def __post_init__(self):
        self.papc_duals = np.asarray(self.papc_duals, dtype=float)
        self.sinr_duals = np.asarray(self.sinr_duals, dtype=float)
        if np.any(self.papc_duals < 0) or np.any(self.sinr_duals < 0):
            raise ValueError("dual variables must be non-negative")


@dataclass(frozen=True)
class OutageStats:
    per_user_outage: np.ndarray
    max_outage: float
    realizations_used: int
    seed: int
    mean_outage: float = float("nan")
    stderr: float = float("nan")
    max_stderr: float = float("nan")
    served_counts: Optional[np.ndarray] = None


def _check_user(beams: BeamformerSet, user: int) -> int:
    k = beams.n_users
    if not -k <= user < k or isinstance(user, bool):
        raise IndexError(f"user {user} out of range for {k} beams")
    return user % k


def interference_matrix(beams: BeamformerSet, user: int, gamma: float) -> np.ndarray:
    """``Q_k = w_k w_k^H / gamma - sum_{j != k} w_j w_j^H`` (Hermitian)."""
    k = _check_user(beams, user)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    w = beams.weights
    wk = w[:, k]
    q = (1.0 / gamma + 1.0) * np.outer(wk, wk.conj()) - w @ w.conj().T
    return 0.5 * (q + q.conj().T)


def sinr(channel, beams: BeamformerSet, user: int, noise: float) -> float:
    k = _check_user(beams, user)
    if not noise > 0:
        raise ValueError("noise must be positive")
    g = np.abs(np.asarray(channel).conj() @ beams.weights) ** 2
    return float(g[k] / (g.sum() - g[k] + noise))


def sinr_all(channels: np.ndarray, weights: np.ndarray, noise) -> np.ndarray:
    """SINR of every user ``k`` for channel column ``k`` and beam column ``k``."""
    g = np.abs(channels.conj().T @ weights) ** 2
    signal = np.diag(g)
    return signal / (g.sum(axis=1) - signal + noise)


def per_antenna_powers(beams: BeamformerSet) -> np.ndarray:
    """Diagonal of ``sum_k w_k w_k^H``."""
    return kernels.antenna_powers(beams.directions, beams.powers)


def papc_violations(powers, cfg: ScenarioConfig) -> np.ndarray:
    """Indices ``i`` with ``powers_i - p_i > eps_i``; empty means feasible."""
    powers = np.asarray(powers, dtype=float)
    if powers.shape != cfg.papc.shape:
        raise ValueError("powers and papc lengths differ")
    return np.flatnonzero(powers - cfg.papc > cfg.papc_tolerance)


def hermitian_pinv(mat: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse of a Hermitian matrix, dropping eigenvalues below ``rtol * max|lambda|``."""
    mat = 0.5 * (mat + mat.conj().T)
    lam, vec = np.linalg.eigh(mat)
    scale = np.max(np.abs(lam)) if lam.size else 0.0
    keep = np.abs(lam) > rtol * scale
    if not np.any(keep):
        return np.zeros_like(mat)
    v = vec[:, keep]
    return (v / lam[keep]) @ v.conj().T
