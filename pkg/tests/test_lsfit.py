import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from oscifit.lsfit import (
    FREE_PARAMS,
    BoundsError,
    FitOptions,
    FitProblem,
    default_bounds,
    fit_to_clean,
    jacobian,
    lm_fit,
    read_fits_csv,
    residuals,
    write_fits_csv,
)
from oscifit.rng import make_stream, sub_stream
from oscifit.signalgen import TWO_PI, LatentParams, ProcessKind, TimeGrid, generate, sample_latents

MONO, AM, FM = ProcessKind.MONO, ProcessKind.AM, ProcessKind.FM
T = 256
GRID = TimeGrid(T)


def truth(kind, seed, sigma=0.0):
    return sample_latents(kind, make_stream(seed), T).replace(sigma=sigma)


def noiseless(p):
    return generate(GRID, p).clean


def fit(kind, series, init, **opt):
    return lm_fit(FitProblem(kind, series, GRID, init, options=FitOptions(**opt)))


# ---------------------------------------------------------------- residuals / jacobian


def test_residuals_zero_and_offset():
    p = truth(AM, 1)
    x = noiseless(p)
    assert np.array_equal(residuals(AM, p, x, GRID), np.zeros(T))
    np.testing.assert_allclose(residuals(AM, p, x + 0.25, GRID), 0.25, atol=1e-15)


def test_residuals_match_generator():
    p = truth(FM, 2)
    series = make_stream(0).standard_normal(T)
    assert np.array_equal(residuals(FM, p, series, GRID), series - noiseless(p))


def test_residuals_check_bounds():
    p = truth(MONO, 3)
    bounds = default_bounds(MONO, T)
    with pytest.raises(BoundsError):
        residuals(MONO, p.replace(fc=0.5), noiseless(p), GRID, bounds)


def test_jacobian_shape_and_phase_column():
    p = truth(AM, 4)
    series = noiseless(p) + 0.1
    J = jacobian(AM, p, series, GRID)
    assert J.shape == (T, 5) and np.all(np.isfinite(J))
    assert jacobian(MONO, truth(MONO, 4), series, GRID).shape == (T, 3)
    h = 1e-6
    central = (residuals(AM, p.replace(phi=p.phi + h), series, GRID)
               - residuals(AM, p.replace(phi=p.phi - h), series, GRID)) / (2 * h)
    k = FREE_PARAMS[AM].index("phi")
    np.testing.assert_allclose(J[:, k], central, rtol=1e-4, atol=1e-6)


def test_jacobian_steps_back_at_upper_bound():
    bounds = default_bounds(MONO, T)
    p = truth(MONO, 5).replace(fc=bounds["fc"][1])
    J = jacobian(MONO, p, fit_to_clean(p, GRID), GRID, bounds)
    assert np.all(np.isfinite(J))


# ---------------------------------------------------------------- fits


@pytest.mark.parametrize("kind", list(ProcessKind))
def test_truth_is_a_fixed_point(kind):
    p = truth(kind, 6)
    res = fit(kind, noiseless(p), p)
    assert res.converged and res.iterations == 0 and res.sse == 0.0
    for name in FREE_PARAMS[kind]:
        assert getattr(res.params, name) == getattr(p, name)


@pytest.mark.parametrize("kind", [MONO, AM])
@pytest.mark.parametrize("seed", range(3))
def test_perturbed_carrier_recovered(kind, seed):
    p = truth(kind, 10 + seed)
    x = noiseless(p)
    init = p.replace(fc=p.fc * 1.02)
    res = fit(kind, x, init)
    # independent solver from the same start must land on the same point
    names = FREE_PARAMS[kind]
    bounds = default_bounds(kind, T)
    ref = least_squares(
        lambda v: residuals(kind, init.replace(**dict(zip(names, v))), x, GRID),
        [getattr(init, n) for n in names], bounds=tuple(zip(*(bounds[n] for n in names))),
        x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000,
    )
    for i, name in enumerate(names):
        if name == "phi":
            continue
        assert getattr(res.params, name) == pytest.approx(getattr(p, name), rel=1e-6)
        assert getattr(res.params, name) == pytest.approx(ref.x[i], rel=1e-6)
    d = (res.params.phi - p.phi + math.pi) % TWO_PI - math.pi
    assert abs(d) < 1e-6
    assert res.sse <= 1e-10


def test_far_start_reports_local_minimum():
    # a carrier near the top of the range, started from the bottom of the bounds
    p = truth(MONO, 37)
    assert p.fc > 0.09
    x = noiseless(p)
    lo = default_bounds(MONO, T)["fc"][0]
    res = fit(MONO, x, p.replace(fc=lo))
    assert math.isfinite(res.sse) and res.sse > 1.0
    assert abs(res.params.fc - p.fc) > 0.01


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(ProcessKind)), st.floats(0.0, 2.0))
def test_fit_invariants(seed, kind, sigma):
    p = truth(kind, seed, sigma)
    pair = generate(GRID, p, sub_stream(seed, 1))
    bounds = default_bounds(kind, T)
    init = p.replace(fc=min(p.fc * 1.05, bounds["fc"][1]), tau=p.tau * 0.9)
    res = lm_fit(FitProblem(kind, pair.noisy, GRID, init, bounds, FitOptions(max_iter=60)))
    assert all(b <= a * (1 + 1e-15) for a, b in zip(res.trace, res.trace[1:]))
    assert res.sse == res.trace[-1]
    assert 0.0 <= res.params.phi < TWO_PI
    for name in FREE_PARAMS[kind]:
        lo, hi = bounds[name]
        assert lo <= getattr(res.params, name) <= hi
    assert res.sigma_hat == pytest.approx(math.sqrt(res.sse / T), rel=1e-15)
    assert res.params.sigma == res.sigma_hat
    if res.converged:
        assert res.iterations <= 60


def test_phase_gauge():
    p = truth(AM, 7)
    a = fit_to_clean(p, GRID)
    b = fit_to_clean(p.replace(phi=p.phi + TWO_PI), GRID)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_noise_floor_small_sample():
    ratios = []
    for i in range(30):
        p = truth(MONO, 100 + i, 1.0)
        pair = generate(GRID, p, sub_stream(100, i))
        ratios.append(fit(MONO, pair.noisy, p).sse / T)
    assert sum(0.7 <= r <= 1.3 for r in ratios) >= 27


def test_fit_to_clean_matches_generator():
    p = truth(FM, 8)
    res = fit(FM, noiseless(p), p)
    np.testing.assert_allclose(fit_to_clean(res, GRID), noiseless(p), atol=1e-8)
    assert np.array_equal(fit_to_clean(res, GRID), generate(GRID, res.params.replace(sigma=0.0)).clean)


def test_init_outside_bounds_rejected():
    p = truth(MONO, 9)
    with pytest.raises(BoundsError):
        FitProblem(MONO, noiseless(p), GRID, p.replace(tau=1e6))


def test_non_finite_series_is_an_error():
    p = truth(MONO, 9)
    x = noiseless(p)
    x[3] = np.nan
    with pytest.raises(FloatingPointError):
        fit(MONO, x, p)


def test_series_length_checked():
    p = truth(MONO, 9)
    with pytest.raises(ValueError):
        FitProblem(MONO, np.zeros(T + 1), GRID, p)


def test_default_bounds_widen_ranges():
    b = default_bounds(AM, 512)
    fc_lo, fc_hi = 10 / 512, 0.1
    pad = 0.1 * (fc_hi - fc_lo)
    assert b["fc"] == pytest.approx((fc_lo - pad, fc_hi + pad))
    assert b["im"][0] == 0.0 and b["phi"] == (-math.inf, math.inf)
    assert set(default_bounds(MONO, 512)) == {"fc", "phi", "tau"}


def test_fits_csv_roundtrip(tmp_path):
    results = [fit(k, noiseless(truth(k, 30 + i)), truth(k, 30 + i)) for i, k in enumerate(ProcessKind)]
    write_fits_csv(tmp_path / "f.csv", results, [5, 6, 7])
    rows = read_fits_csv(tmp_path / "f.csv")
    assert [sid for sid, _ in rows] == [5, 6, 7]
    for (_, back), res in zip(rows, results):
        assert back.params == res.params and back.sse == res.sse and back.converged == res.converged
