"""Pure numpy implementations of the hot kernels.

These define the reference behaviour; ``_kernels.pyx`` must agree with them
to rounding. Argument validation lives in :mod:`papcbeam.kernels`.
"""

import numpy as np

CONVERGED, MAX_ITER, NEEDS_PINV = 0, 1, 2


def antenna_powers(directions, powers):
    return (np.abs(directions) ** 2) @ powers


def project_duals(q_raw, p):
    """Projection of ``q_raw`` onto ``{q >= 0, sum q_i p_i = sum p_i}``.

    Alternates ``q = max(q_raw - p*s, 0)`` and the closed-form ``s`` over the
    current non-zero set, starting from ``s = 0``. The ``s`` update is a Newton
    step on a convex piecewise-linear function, so the active set settles in at
    most ``n + 1`` sweeps.

    Returns ``(q, sweeps)``.
    """
    n = q_raw.shape[0]
    target = p.sum()
    s = 0.0
    active = None
    for sweep in range(1, 2 * n + 3):
        cand = q_raw - p * s
        new_active = cand > 0
        if not new_active.any():
            # nothing survives: reopen the entry that is closest to positive
            new_active = np.zeros(n, dtype=bool)
            new_active[np.argmax(q_raw / p)] = True
        if active is not None and np.array_equal(new_active, active):
            break
        active = new_active
        pa = p[active]
        s = (pa @ q_raw[active] - target) / (pa @ pa)
    q = np.maximum(q_raw - p * s, 0.0)
    return q, sweep


def _apply_inverse(base, channels, nu, rtol):
    a = (channels * nu) @ channels.conj().T
    a[np.diag_indices_from(a)] += base
    lam_bound = base.max() + nu @ np.sum(np.abs(channels) ** 2, axis=0)
    if base.min() > rtol * lam_bound:
        return np.linalg.solve(a, channels)
    a = 0.5 * (a + a.conj().T)
    lam, vec = np.linalg.eigh(a)
    keep = np.abs(lam) > rtol * np.max(np.abs(lam))
    v = vec[:, keep]
    return (v / lam[keep]) @ (v.conj().T @ channels)


def nu_fixed_point(base, channels, gamma, nu0, tol, max_iter, damped_iters, damping, rtol=1e-10):
    """Picard iteration for ``1/nu_k = h_k^H (B + sum_j nu_j h_j h_j^H)^+ h_k (1 + 1/gamma_k)``.

    The first ``damped_iters`` steps blend with weight ``damping`` on the old
    iterate. Returns ``(nu, iterations, status)``.
    """
    nu = nu0.copy()
    scale = 1.0 + 1.0 / gamma
    for it in range(1, max_iter + 1):
        x = _apply_inverse(base, channels, nu, rtol)
        quad = np.real(np.sum(channels.conj() * x, axis=0))
        new = 1.0 / (np.maximum(quad, 1e-300) * scale)
        if it <= damped_iters:
            new = damping * nu + (1.0 - damping) * new
        change = np.max(np.abs(new - nu) / np.maximum(nu, 1e-300))
        nu = new
        if change < tol:
            return nu, it, CONVERGED
    return nu, max_iter, MAX_ITER


def one_shot_mrt(normalized, nu, p):
    """Closed-form PAPC MRT with per-antenna correction.

    Returns ``(weights, g, q, t, z)``; the weights meet every PAPC with
    equality.
    """
    g = (np.abs(normalized) ** 2) @ (nu**2)
    root = np.sqrt(g)
    t = root.sum()
    q = t * root
    d = normalized / q[:, None]
    d /= np.linalg.norm(d, axis=0)
    gain = np.abs(np.sum(normalized.conj() * d, axis=0)) ** 2
    w = d * np.sqrt(t / gain)
    y = np.sum(np.abs(w) ** 2, axis=1)
    z = np.sqrt(p / y)
    return w * z[:, None], g, q, t, z
