"""Hot numerical kernels, compiled when available.

The Cython extension ``papcbeam._kernels`` is imported if it was built;
otherwise the numpy versions in ``papcbeam._fallback`` are used. Set
``PAPCBEAM_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
active implementation.
"""

import os

import numpy as np

from . import _fallback

_ext = None
if not os.environ.get("PAPCBEAM_PURE_PYTHON"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _fallback

CONVERGED, MAX_ITER, NEEDS_PINV = _fallback.CONVERGED, _fallback.MAX_ITER, _fallback.NEEDS_PINV


def use_backend(name):
    """Switch between ``"cython"`` and ``"python"``; returns the previous name."""
    global _impl, BACKEND
    if name == "cython" and _ext is None:
        raise RuntimeError("compiled kernels are not available")
    if name not in ("cython", "python"):
        raise ValueError(name)
    previous = BACKEND
    _impl = _ext if name == "cython" else _fallback
    BACKEND = name
    return previous


def antenna_powers(directions, powers):
    directions = np.ascontiguousarray(directions, dtype=np.complex128)
    powers = np.ascontiguousarray(powers, dtype=np.float64)
    return _impl.antenna_powers(directions, powers)


def project_duals(q_raw, p):
    q_raw = np.ascontiguousarray(q_raw, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    return _impl.project_duals(q_raw, p)


def nu_fixed_point(base, channels, gamma, nu0, tol=1e-9, max_iter=500, damped_iters=5, damping=0.5):
    base = np.ascontiguousarray(base, dtype=np.float64)
    channels = np.ascontiguousarray(channels, dtype=np.complex128)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    nu0 = np.array(nu0, dtype=np.float64)
    if _impl is _ext:
        nu, it, status = _ext.nu_fixed_point(base, channels, gamma, nu0, tol, max_iter, damped_iters, damping)
        if status != NEEDS_PINV:
            return nu, it, status
        # singular weighting: finish on the pseudo-inverse path from the current iterate
        nu, more, status = _fallback.nu_fixed_point(
            base, channels, gamma, nu, tol, max(max_iter - it, 1), max(damped_iters - it, 0), damping
        )
        return nu, it + more, status
    return _fallback.nu_fixed_point(base, channels, gamma, nu0, tol, max_iter, damped_iters, damping)


def one_shot_mrt(normalized, nu, p):
    normalized = np.ascontiguousarray(normalized, dtype=np.complex128)
    nu = np.ascontiguousarray(nu, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    return _impl.one_shot_mrt(normalized, nu, p)


def apply_inverse(base, channels, nu, rtol=1e-10):
    """``(diag(base) + sum_j nu_j h_j h_j^H)^+ @ channels`` with an eigenvalue cutoff of ``rtol * lambda_max``."""
    base = np.asarray(base, dtype=np.float64)
    channels = np.asarray(channels, dtype=np.complex128)
    nu = np.asarray(nu, dtype=np.float64)
    return _fallback._apply_inverse(base, channels, nu, rtol)
