import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from poisson_tgv.harness import (
    DegradationSpec,
    degrade,
    disk_psf,
    load_problem,
    make_phantom,
    poisson_field,
    poisson_sample,
    relative_error,
    save_problem,
    snr_db,
    snr_scale,
)
from poisson_tgv.linops import Image

# -- disk_psf -----------------------------------------------------------------


def test_disk_psf_tiny_radius_is_point_mass():
    kernel = disk_psf(0.5)
    assert kernel.shape == (3, 3)
    want = np.zeros((3, 3))
    want[1, 1] = 1.0
    np.testing.assert_array_equal(kernel, want)


def test_disk_psf_radius_one_is_five_point_plus():
    kernel = disk_psf(1.0)
    want = np.array([[0.0, 0.2, 0.0], [0.2, 0.2, 0.2], [0.0, 0.2, 0.0]])
    np.testing.assert_allclose(kernel, want, atol=1e-15)


def test_disk_psf_radius_two_has_13_pixels():
    kernel = disk_psf(2.0)
    assert kernel.shape == (5, 5)
    assert np.count_nonzero(kernel) == 13
    assert kernel.sum() == pytest.approx(1.0)


def test_disk_psf_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        disk_psf(0.0)


# -- SNR calibration ---------------------------------------------------------------


def test_snr_db_round_number():
    assert snr_db(1e8, 0.0) == pytest.approx(40.0)


def test_snr_scale_matches_bisection_oracle(rng):
    exact = Image(8, 8, rng.uniform(0.1, 2.0, 64))
    n_exact = float(exact.data.sum())
    for target in (25.0, 38.0, 45.0):
        background = float(rng.uniform(0.0, 0.2) * n_exact)
        closed = snr_scale(exact, background, target)
        oracle = oracles.snr_bisection(n_exact, background, target)
        assert closed == pytest.approx(oracle, rel=1e-9)


def test_snr_scale_postcondition_on_many_triples(rng):
    for _ in range(1000):
        n_exact = float(rng.uniform(1e2, 1e9))
        n_bg = float(rng.uniform(0.0, 0.3) * n_exact)
        target = float(rng.uniform(10.0, 60.0))
        s = snr_scale(Image(1, 1, np.array([n_exact])), n_bg, target)
        assert snr_db(s * n_exact, s * n_bg) == pytest.approx(target, abs=1e-9)


def test_snr_scale_rejects_empty_image():
    with pytest.raises(ValueError):
        snr_scale(Image(2, 2, np.zeros(4)), 0.0, 40.0)


# -- Poisson sampling ----------------------------------------------------------------


def test_poisson_mean_zero_is_always_zero(rng):
    out = poisson_field(np.zeros(1000), rng)
    np.testing.assert_array_equal(out, np.zeros(1000))
    assert poisson_sample(0.0, rng) == 0


def test_poisson_rejects_bad_means(rng):
    with pytest.raises(ValueError):
        poisson_field(np.array([-1.0]), rng)
    with pytest.raises(ValueError):
        poisson_field(np.array([np.inf]), rng)


def test_poisson_small_mean_statistics(rng):
    draws = poisson_field(np.full(10**6, 4.0), rng)
    assert np.all(draws >= 0)
    assert np.all(draws == np.round(draws))
    assert 3.99 <= draws.mean() <= 4.01
    assert 3.96 <= draws.var() <= 4.04


def test_poisson_large_mean_statistics(rng):
    draws = poisson_field(np.full(10**5, 1e4), rng)
    assert abs(draws.mean() - 1e4) <= 0.005 * 1e4
    assert np.all(draws == np.round(draws))


def test_poisson_extreme_mean_is_finite(rng):
    draws = poisson_field(np.full(4, 1e30), rng)
    assert np.all(np.isfinite(draws))
    np.testing.assert_allclose(draws, 1e30, rtol=1e-10)


# -- relative_error ---------------------------------------------------------------


def test_relative_error_identities(rng):
    star = Image(4, 4, rng.uniform(0.5, 2.0, 16))
    assert relative_error(star, star) == 0.0
    double = Image(4, 4, 2.0 * star.data)
    assert relative_error(double, star) == pytest.approx(1.0)
    bump = star.data.copy()
    bump[0] += np.linalg.norm(star.data)
    assert relative_error(Image(4, 4, bump), star) == pytest.approx(1.0)


def test_relative_error_rejects_zero_reference():
    with pytest.raises(ValueError):
        relative_error(Image(2, 2, np.ones(4)), Image(2, 2, np.zeros(4)))
    with pytest.raises(ValueError):
        relative_error(Image(2, 2, np.ones(4)), Image(1, 4, np.ones(4)))


# -- make_phantom -----------------------------------------------------------------


def test_phantom_is_normalized_and_piecewise_constant():
    img = make_phantom(64, 64)
    assert img.data.min() >= 0.0
    assert img.data.max() == pytest.approx(1.0)
    assert len(np.unique(img.data)) <= 8
    np.testing.assert_array_equal(img.data, make_phantom(64, 64).data)


def test_phantom_size_validation():
    with pytest.raises(ValueError):
        make_phantom(1, 10)


# -- degrade -----------------------------------------------------------------------


def test_degrade_high_snr_identity_blur_recovers_exact():
    spec = DegradationSpec(
        psf_kind="identity",
        target_snr_db=200.0,
        background_level=1e-6,
        rng_seed=1,
    )
    problem = degrade(make_phantom(32, 32), spec)
    working = problem.working_data()
    rms = np.sqrt(np.mean((working.b - problem.exact.data) ** 2))
    assert rms <= 1e-3 * np.sqrt(np.mean(problem.exact.data**2))


def test_degrade_is_deterministic():
    spec = DegradationSpec(radius=2.0, target_snr_db=40.0, rng_seed=11)
    one = degrade(make_phantom(32, 32), spec)
    two = degrade(make_phantom(32, 32), spec)
    np.testing.assert_array_equal(one.observed.b, two.observed.b)
    assert one.applied_scale == two.applied_scale


def test_degrade_empirical_snr_calibrated_over_seeds():
    target = 40.0
    exact = make_phantom(64, 64)
    gaps = []
    for seed in range(20):
        spec = DegradationSpec(radius=2.0, target_snr_db=target, rng_seed=seed)
        problem = degrade(exact, spec)
        n_bg = float(problem.observed.gamma.sum())
        signal = float(problem.observed.b.sum()) - n_bg
        gaps.append(abs(snr_db(signal, n_bg) - target))
    assert max(gaps) <= 0.1


def test_degrade_counts_are_integers_and_background_positive():
    spec = DegradationSpec(radius=1.0, target_snr_db=35.0, rng_seed=5)
    problem = degrade(make_phantom(24, 24), spec)
    b = problem.observed.b
    assert np.all(b >= 0)
    np.testing.assert_array_equal(b, np.round(b))
    assert np.all(problem.observed.gamma > 0)
    assert abs(problem.blur.spectrum[0, 0] - 1.0) < 1e-12


def test_degrade_working_units_peak_at_one():
    spec = DegradationSpec(radius=2.0, target_snr_db=40.0, rng_seed=0)
    problem = degrade(make_phantom(32, 32), spec)
    assert problem.observed_image().data.max() == pytest.approx(1.0)
    assert problem.working_data().gamma[0] == pytest.approx(
        problem.observed.gamma[0] * problem.applied_scale
    )


def test_degrade_rejects_empty_image():
    with pytest.raises(ValueError):
        degrade(Image(4, 4, np.zeros(16)), DegradationSpec())


def test_degradation_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec(psf_kind="motion")
    with pytest.raises(ValueError):
        DegradationSpec(radius=-1.0)
    with pytest.raises(ValueError):
        DegradationSpec(psf_kind="custom", kernel=None)
    with pytest.raises(ValueError):
        DegradationSpec(background_level=0.0)


def test_degrade_snr_ordering_at_same_seed():
    # Lower target SNR means relatively larger deviation from the blurred
    # ground truth.
    exact = make_phantom(48, 48)

    def deviation(snr):
        spec = DegradationSpec(radius=2.0, target_snr_db=snr, rng_seed=9)
        problem = degrade(exact, spec)
        blurred = problem.blur.apply(problem.exact).data + problem.working_data().gamma
        counts = problem.working_data().b
        return np.linalg.norm(counts - blurred) / np.linalg.norm(blurred)

    assert deviation(38.0) > deviation(42.0)


# -- problem folders ----------------------------------------------------------------


def test_problem_folder_round_trip(tmp_path):
    # At 30 dB the peak count fits in 16 bits, so storage is exact.
    spec = DegradationSpec(radius=2.0, target_snr_db=30.0, rng_seed=7)
    problem = degrade(make_phantom(32, 32), spec)
    assert problem.observed.b.max() < 65535
    save_problem(problem, tmp_path / "prob")
    for name in ("exact.pgm", "observed.pgm", "problem.json"):
        assert (tmp_path / "prob" / name).exists()

    loaded = load_problem(tmp_path / "prob")
    np.testing.assert_array_equal(loaded.observed.b, problem.observed.b)
    np.testing.assert_allclose(loaded.observed.gamma, problem.observed.gamma, rtol=1e-12)
    np.testing.assert_allclose(
        loaded.exact.data, problem.exact.data, atol=problem.exact.data.max() / 65535
    )
    np.testing.assert_allclose(loaded.blur.spectrum, problem.blur.spectrum, atol=1e-12)
    assert loaded.spec.rng_seed == 7
    assert loaded.applied_scale == pytest.approx(problem.applied_scale, rel=1e-12)


def test_problem_folder_round_trip_beyond_16_bits(tmp_path):
    # Counts above 65535 ride on the float scale recorded in the metadata.
    spec = DegradationSpec(radius=2.0, target_snr_db=40.0, rng_seed=7)
    problem = degrade(make_phantom(32, 32), spec)
    assert problem.observed.b.max() > 65535
    save_problem(problem, tmp_path / "prob")
    loaded = load_problem(tmp_path / "prob")
    quantum = problem.observed.b.max() / 65535
    np.testing.assert_allclose(
        loaded.observed.b, problem.observed.b, atol=0.51 * quantum
    )


def test_custom_kernel_round_trip(tmp_path):
    kernel = np.array([[0.25, 0.25], [0.25, 0.25]])
    spec = DegradationSpec(psf_kind="custom", kernel=kernel, rng_seed=2)
    problem = degrade(make_phantom(16, 16), spec)
    save_problem(problem, tmp_path / "prob")
    loaded = load_problem(tmp_path / "prob")
    np.testing.assert_allclose(loaded.blur.spectrum, problem.blur.spectrum, atol=1e-12)


# -- properties --------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31 - 1),
    snr=st.floats(min_value=25.0, max_value=50.0, allow_nan=False),
)
def test_degrade_properties(seed, snr):
    spec = DegradationSpec(radius=1.0, target_snr_db=snr, rng_seed=seed)
    problem = degrade(make_phantom(16, 16), spec)
    b = problem.observed.b
    assert np.all(b >= 0)
    np.testing.assert_array_equal(b, np.round(b))
    assert np.all(problem.observed.gamma > 0)
    assert math.isfinite(problem.applied_scale) and problem.applied_scale > 0
