import logging
import tracemalloc
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from papcbeam import kernels
from papcbeam.errors import ZeroChannelEntry, ZeroDiagonal
from papcbeam.model import ScenarioConfig, as_estimate, per_antenna_powers
from papcbeam.mrt import (
    closed_form_duals,
    duality_gap,
    mrt_directions,
    one_shot_mrt,
    solve_mrt_general,
    solve_mrt_nominal,
    solve_mrt_robust,
    solve_mrt_total,
)
from papcbeam.offsetmax import StepSchedule
from papcbeam.powerload import margin_moments

from conftest import crandn, random_channels, scenario

seeds = st.integers(0, 2**32 - 1)
log = logging.getLogger(__name__)


def nominal_gains(channels, beams):
    hn = as_estimate(channels).normalized
    return beams.powers * np.abs(np.sum(hn.conj() * beams.directions, axis=0)) ** 2


def test_identity_weighting_is_classic_mrt(rng):
    hn = as_estimate(crandn(rng, 5, 2)).normalized
    assert np.allclose(mrt_directions(np.ones(5), hn), hn)


def test_diagonal_weighting_example():
    hn = np.array([[1.0], [1.0]]) / np.sqrt(2)
    u = mrt_directions([4.0, 1.0], hn)
    expected = np.array([0.25, 1.0]) / np.linalg.norm([0.25, 1.0])
    assert np.allclose(u[:, 0], expected)


@given(seeds)
def test_weighting_keeps_matched_component(seed):
    rng = np.random.default_rng(seed)
    hn = as_estimate(crandn(rng, 6, 3)).normalized
    u = mrt_directions(rng.uniform(0.01, 10, 6), hn)
    assert np.all(np.abs(np.sum(hn.conj() * u, axis=0)) > 0)
    # the inner product is real and positive: no phase flip
    assert np.all(np.real(np.sum(hn.conj() * u, axis=0)) > 0)


def test_zero_diagonal_rejected(rng):
    with pytest.raises(ZeroDiagonal):
        mrt_directions([1.0, 0.0, 1.0], crandn(rng, 3, 1))


# ---------------------------------------------------------------- one-shot closed form


@pytest.mark.parametrize("n", [16, 64, 128])
def test_one_shot_powers_exact(rng, n, backend):
    cfg = scenario(n, 8, 1.0)
    for _ in range(5):
        beams, cf = one_shot_mrt(cfg, crandn(rng, n, 8))
        assert np.allclose(per_antenna_powers(beams), cfg.papc, rtol=1e-12, atol=0)
        assert np.allclose(cf.duals, np.sum(np.sqrt(cf.antenna_weights)) * np.sqrt(cf.antenna_weights))
        assert np.all(cf.antenna_weights >= 0)
        assert np.allclose(np.linalg.norm(beams.directions, axis=0), 1.0, atol=1e-12)


def test_one_shot_backends_agree(rng):
    if kernels._ext is None:
        pytest.skip("compiled kernels not built")
    cfg = scenario(32, 4, 1.0)
    h = crandn(rng, 32, 4)
    prev = kernels.use_backend("python")
    try:
        a, _ = one_shot_mrt(cfg, h)
    finally:
        kernels.use_backend(prev)
    kernels.use_backend("cython")
    b, _ = one_shot_mrt(cfg, h)
    assert np.allclose(a.weights, b.weights, atol=1e-14)


def test_one_shot_single_user_is_equal_gain(rng):
    h = crandn(rng, 6, 1)
    beams, cf = one_shot_mrt(scenario(6, 1, 3.0), h)
    w = beams.weights[:, 0]
    assert np.allclose(np.abs(w) ** 2, 0.5)
    assert np.allclose(np.angle(w * h[:, 0].conj()), 0.0, atol=1e-12)
    assert np.allclose(cf.duals / np.abs(h[:, 0]), cf.duals[0] / abs(h[0, 0]))


def test_one_shot_constant_magnitude_is_plain_mrt(rng):
    h = np.exp(2j * np.pi * rng.random((8, 3)))
    beams, cf = one_shot_mrt(scenario(8, 3, 2.0), h)
    assert np.allclose(cf.antenna_weights, cf.antenna_weights[0])
    hn = as_estimate(h).normalized
    assert np.allclose(np.abs(np.sum(hn.conj() * beams.directions, axis=0)), 1.0)


def test_one_shot_closed_form_record(rng):
    hn = as_estimate(crandn(rng, 8, 3)).normalized
    cf = closed_form_duals(hn)
    assert np.allclose(cf.antenna_weights, np.sum(np.abs(hn) ** 2, axis=1) / 9)
    assert np.isclose(cf.signal_level, np.sum(np.sqrt(cf.antenna_weights)))


def test_one_shot_requires_uniform_budgets(rng):
    cfg = ScenarioConfig(4, 2, 4.0, [1.0, 1.0, 1.0, 2.0], 2.0, 1.0)
    with pytest.raises(ValueError):
        one_shot_mrt(cfg, crandn(rng, 4, 2))
    h = crandn(rng, 4, 2)
    h[2] = 0.0
    with pytest.raises(ZeroChannelEntry):
        one_shot_mrt(scenario(4, 2, 4.0), h)
    with pytest.raises(ValueError):
        one_shot_mrt(scenario(4, 2, 4.0), crandn(rng, 4, 2), weights=[1.0, -1.0])


def test_one_shot_never_builds_square_matrix(rng):
    n, k = 2048, 4
    cfg = scenario(n, k, 1.0)
    h = crandn(rng, n, k)
    one_shot_mrt(cfg, h)  # warm caches
    tracemalloc.start()
    one_shot_mrt(cfg, h)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    # an N x N complex matrix alone would need 64 MiB; the closed form needs a few N x K arrays
    assert peak < 40 * n * k * 16
    assert peak < n * n * 16 / 50


def test_one_shot_close_to_iterative(rng):
    cfg = scenario(64, 8, 1.0)
    h = crandn(rng, 64, 8)
    one, _ = one_shot_mrt(cfg, h)
    it = solve_mrt_nominal(cfg, h)
    cos = np.abs(np.sum(one.directions.conj() * it.beams.directions, axis=0))
    angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    log.info("one-shot vs iterative MRT direction angles (deg): max %.2f mean %.2f", angles.max(), angles.mean())
    assert np.all(np.isfinite(angles))


# ---------------------------------------------------------------- iterative solvers


def test_nominal_single_user_equal_gain(rng):
    h = crandn(rng, 4, 1)
    cfg = replace(scenario(4, 1, 4.0), papc_tolerance=np.full(4, 1e-6), max_outer_iterations=2000)
    res = solve_mrt_nominal(cfg, h, schedule=StepSchedule(0.05))
    assert res.converged
    hn = as_estimate(h).normalized
    assert res.beams.offset == pytest.approx(np.sum(np.abs(hn)) ** 2, rel=1e-5)


def test_nominal_symmetric_profiles_equal_powers(rng):
    mags = rng.uniform(0.5, 2, 8)
    h = mags[:, None] * np.exp(2j * np.pi * rng.random((8, 2)))
    res = solve_mrt_nominal(scenario(8, 2, 2.0), h)
    assert np.isclose(res.beams.powers[0], res.beams.powers[1], rtol=1e-9)


def test_nominal_equalities_and_gap(rng):
    cfg = scenario(16, 4, 1.0)
    gaps = []
    for _ in range(10):
        h = crandn(rng, 16, 4)
        res = solve_mrt_nominal(cfg, h)
        if not res.converged:
            continue
        t = res.beams.offset
        assert np.max(np.abs(nominal_gains(h, res.beams) - t)) < 1e-8 * t
        assert np.all(per_antenna_powers(res.beams) <= cfg.papc + cfg.papc_tolerance)
        assert np.isclose(res.beams.powers.sum(), cfg.papc.sum())
        gaps.append(duality_gap(res, cfg, h))
    log.info("MRT duality gaps: %s", np.round(gaps, 4))
    assert len(gaps) >= 8
    assert np.median(gaps) < 0.05


def test_robust_residuals(rng):
    cfg = scenario(16, 4, 1.0)
    for _ in range(5):
        h = random_channels(rng, 16, 4, 5, 50)
        res = solve_mrt_robust(cfg, h)
        st_ = res.loading
        if not (res.converged and st_.converged):
            continue
        mean, var = margin_moments(res.beams.directions, res.beams.powers, h, cfg.sinr_targets, cfg.noise_powers, cfg.error_variance)
        assert np.max(np.abs(mean - st_.offset * np.sqrt(var))) < 1e-8 * (1 + abs(st_.offset))


def test_robust_symmetric_users_equal_powers():
    h = np.zeros((4, 2), dtype=complex)
    h[:2, 0] = [1.0, 1.0j]
    h[2:, 1] = [1.0j, -1.0]
    res = solve_mrt_robust(scenario(4, 2, 2.0), h * 3)
    assert np.isclose(res.beams.powers[0], res.beams.powers[1])


def test_robust_without_error_equalises_nominal_margins(rng):
    cfg = scenario(8, 3, 2.0, error_variance=0.0)
    h = crandn(rng, 8, 3) * 3
    res = solve_mrt_robust(cfg, h)
    mean, _ = margin_moments(res.beams.directions, res.beams.powers, h, cfg.sinr_targets, cfg.noise_powers, 0.0)
    assert np.ptp(mean) < 1e-8 * (1 + np.abs(mean).max())


def test_general_generous_budgets(rng):
    h = crandn(rng, 8, 3)
    cfg = scenario(8, 3, 1.0, papc_factor=50.0)
    a, b = solve_mrt_general(cfg, h), solve_mrt_total(cfg, h)
    assert a.iterations == 1
    assert np.allclose(a.beams.directions, as_estimate(h).normalized)
    assert np.allclose(a.beams.weights, b.beams.weights)


def test_general_single_user(rng):
    h = crandn(rng, 8, 1)
    res = solve_mrt_general(scenario(8, 1, 1.0, papc_factor=50.0), h)
    assert np.isclose(res.beams.powers[0], 1.0)


def test_general_binding_feasibility(rng):
    cfg = scenario(16, 4, 1.0, papc_factor=1.2)
    for _ in range(5):
        res = solve_mrt_general(cfg, crandn(rng, 16, 4) * 4)
        assert res.converged
        assert abs(res.beams.powers.sum() - 1.0) < 1e-8
        assert np.all(per_antenna_powers(res.beams) <= cfg.papc + cfg.papc_tolerance)
