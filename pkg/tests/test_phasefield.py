import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epidenoise.errors import ConfigurationError, DataError, NumericalError
from epidenoise.phasefield import (PolyCoeffs, apply_phase, compose_phase_map, evaluate_poly, fit_polynomial_phase,
                                   random_poly, synthetic_phase_map)


def monomial_oracle(c, width, height):
    out = np.zeros((height, width))
    for y in range(height):
        for x in range(width):
            xt = 2.0 * x / (width - 1) - 1.0
            yt = 2.0 * y / (height - 1) - 1.0
            for p in range(c.shape[0]):
                for q in range(c.shape[1]):
                    out[y, x] += c[p, q] * xt ** p * yt ** q
    return out


def direct_blur(img, sigma, passes, truncate=4.0):
    """Explicit-loop separable convolution, half-sample symmetric borders."""
    r = int(np.floor(truncate * sigma + 0.5))
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k /= k.sum()
    out = img.astype(float)
    for _ in range(passes):
        for axis in (0, 1):
            pad = np.pad(out, [(r, r) if a == axis else (0, 0) for a in (0, 1)], mode="symmetric")
            new = np.zeros_like(out)
            for i, kv in enumerate(k):
                sl = [slice(None), slice(None)]
                sl[axis] = slice(i, i + out.shape[axis])
                new += kv * pad[tuple(sl)]
            out = new
    return out


def test_evaluate_constant_and_odd():
    c = np.zeros((4, 4))
    c[0, 0] = 0.5
    np.testing.assert_array_equal(evaluate_poly(PolyCoeffs(3, c), 7, 5), 0.5)
    c = np.zeros((2, 2))
    c[1, 0] = 2.0
    m = evaluate_poly(PolyCoeffs(1, c), 9, 4)
    assert np.all(m[:, 4] == 0)
    np.testing.assert_allclose(np.diff(m, axis=1), 0.5, atol=1e-15)
    np.testing.assert_array_equal(m, m[0][None].repeat(4, 0))


def test_evaluate_matches_summation_oracle():
    c = np.random.default_rng(3).uniform(-1, 1, (4, 4))
    np.testing.assert_allclose(evaluate_poly(PolyCoeffs(3, c), 16, 16), monomial_oracle(c, 16, 16), atol=1e-12)


def test_coefficient_count_invariant():
    with pytest.raises(ConfigurationError):
        PolyCoeffs(3, np.zeros(9))


def test_fit_round_trip_full_mask():
    c = np.random.default_rng(4).uniform(-1, 1, (4, 4))
    m = evaluate_poly(PolyCoeffs(3, c), 40, 30)
    fit, resid = fit_polynomial_phase(m, np.ones_like(m, bool), 3)
    assert np.max(np.abs(fit.coeffs - c)) < 1e-8
    assert resid < 1e-8


def test_fit_constant():
    fit, _ = fit_polynomial_phase(np.full((12, 14), -1.25), np.ones((12, 14), bool), 3)
    assert abs(fit.coeffs[0, 0] + 1.25) < 1e-10
    assert np.max(np.abs(fit.coeffs.ravel()[1:])) < 1e-10


def test_fit_underdetermined_and_degenerate():
    mask = np.zeros((10, 10), bool)
    mask[2, 3] = mask[5, 5] = mask[7, 1] = True
    with pytest.raises(NumericalError):
        fit_polynomial_phase(np.zeros((10, 10)), mask, 3)
    line = np.zeros((10, 10), bool)
    line[4, :] = True  # collinear pixels: y-terms unidentifiable
    with pytest.raises(NumericalError):
        fit_polynomial_phase(np.zeros((10, 10)), line, 1)
    with pytest.raises(DataError):
        fit_polynomial_phase(np.zeros((10, 10)), np.ones((5, 5), bool), 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3]))
def test_fit_evaluate_property(seed, degree):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, (degree + 1, degree + 1))
    m = evaluate_poly(PolyCoeffs(degree, c), 24, 20)
    n_coef = (degree + 1) ** 2
    mask = np.zeros(m.shape, bool)
    mask.ravel()[rng.choice(m.size, 4 * n_coef, replace=False)] = True
    fit, _ = fit_polynomial_phase(m, mask, degree)
    assert np.max(np.abs(fit.coeffs - c)) < 1e-8


def test_compose_consistent_field_interior_unchanged():
    c3 = np.zeros((4, 4))
    c3[0, 0], c3[1, 0], c3[0, 1] = 0.3, 0.2, -0.1
    inside = PolyCoeffs(3, c3)
    outside = PolyCoeffs(1, c3[:2, :2])
    mask = np.zeros((40, 50), bool)
    mask[10:30, 10:40] = True
    out = compose_phase_map(inside, outside, mask)
    ref = evaluate_poly(inside, 50, 40)
    # a linear field is reproduced by a symmetric kernel away from the borders
    assert np.max(np.abs(out[8:32, 8:42] - ref[8:32, 8:42])) < 1e-6


def test_compose_empty_mask_is_bilinear():
    inside = random_poly(np.random.default_rng(0), 3)
    outside = random_poly(np.random.default_rng(1), 1)
    out = compose_phase_map(inside, outside, np.zeros((20, 30), bool))
    np.testing.assert_allclose(out, direct_blur(evaluate_poly(outside, 30, 20), 0.75, 5), atol=1e-12)


def test_compose_step_smoothed_against_convolution_oracle():
    one = PolyCoeffs(1, [[1.0, 0.0], [0.0, 0.0]])
    zero = PolyCoeffs(1, np.zeros(4))
    mask = np.zeros((30, 30), bool)
    mask[:, 15:] = True
    out = compose_phase_map(one, zero, mask, 0.75, 5)
    raw = mask.astype(float)
    np.testing.assert_allclose(out, direct_blur(raw, 0.75, 5), atol=1e-12)
    assert np.abs(np.diff(out, axis=1)).max() < np.abs(np.diff(raw, axis=1)).max()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compose_c0_bounded(seed):
    rng = np.random.default_rng(seed)
    inside, outside = random_poly(rng, 3), random_poly(rng, 1)
    mask = rng.random((24, 28)) > 0.5
    raw = np.where(mask, evaluate_poly(inside, 28, 24), evaluate_poly(outside, 28, 24))
    out = compose_phase_map(inside, outside, mask)
    for axis in (0, 1):
        assert np.abs(np.diff(out, axis=axis)).max() <= np.abs(np.diff(raw, axis=axis)).max() + 1e-12


def test_apply_phase_examples():
    img = np.random.default_rng(5).random((6, 7))
    out = apply_phase(img, np.zeros_like(img))
    np.testing.assert_array_equal(out.real, img)
    assert np.all(out.imag == 0)
    out = apply_phase(img, np.full_like(img, np.pi / 2))
    assert np.max(np.abs(out.real)) < 1e-15
    np.testing.assert_allclose(out.imag, img, atol=1e-15)
    with pytest.raises(DataError):
        apply_phase(img, np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_apply_phase_preserves_modulus(seed, scale):
    rng = np.random.default_rng(seed)
    img = rng.random((8, 9)) * 10
    th = rng.standard_normal((8, 9)) * scale
    assert np.max(np.abs(np.abs(apply_phase(img, th)) - img)) < 1e-12


def test_json_round_trip(tmp_path):
    c = random_poly(np.random.default_rng(2), 3)
    c.save(tmp_path / "c.json")
    back = PolyCoeffs.load(tmp_path / "c.json")
    assert back.degree == 3 and np.array_equal(back.coeffs, c.coeffs)


def test_random_poly_ranges_and_synthetic_map():
    rng = np.random.default_rng(9)
    for _ in range(50):
        c = random_poly(rng, 3, np.pi, 1.0).coeffs
        assert abs(c[0, 0]) <= np.pi and np.all(np.abs(c.ravel()[1:]) <= 1.0)
    mask = np.zeros((32, 48), bool)
    mask[8:24, 12:36] = True
    a = synthetic_phase_map(np.random.default_rng(1), mask)
    b = synthetic_phase_map(np.random.default_rng(1), mask)
    assert a.shape == mask.shape and np.array_equal(a, b) and np.all(np.isfinite(a))
