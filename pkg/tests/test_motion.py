import math
import warnings

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy import ndimage

from epidenoise.calibration import gaussian_blur
from epidenoise.errors import ConfigurationError, NumericalError
from epidenoise.motion import (BICUBIC, NEAREST, AffineTransform, MotionTrace, RegistrationWarning, apply_affine,
                               estimate_affine, generate_motion_trace, register_back)


def blob_image(h=64, w=80, seed=0):
    """Smooth textured object on a zero background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:h, :w]
    obj = ((yy - h / 2) / (h * 0.33)) ** 2 + ((xx - w / 2) / (w * 0.33)) ** 2 <= 1
    tex = gaussian_blur(rng.random((h, w)), 2.0)
    return obj * (1 + 4 * (tex - tex.min()) / np.ptp(tex))


def keys(s, a=-0.5):
    s = abs(s)
    if s <= 1:
        return (a + 2) * s ** 3 - (a + 3) * s ** 2 + 1
    if s < 2:
        return a * s ** 3 - 5 * a * s ** 2 + 8 * a * s - 4 * a
    return 0.0


def oracle_nearest(img, t):
    """Pull-resampling by explicit per-pixel index arithmetic."""
    h, w = img.shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    inv = np.linalg.inv(t.linear)
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            px = x - cx - t.translation[0]
            py = y - cy - t.translation[1]
            u = inv[0, 0] * px + inv[0, 1] * py + cx
            v = inv[1, 0] * px + inv[1, 1] * py + cy
            if -1e-9 <= u <= w - 1 + 1e-9 and -1e-9 <= v <= h - 1 + 1e-9:
                out[y, x] = img[min(int(math.floor(v + 0.5)), h - 1), min(int(math.floor(u + 0.5)), w - 1)]
    return out


# ---------------------------------------------------------------- transforms

def test_transform_algebra_and_json():
    t = AffineTransform.from_params(1.5, -2.0, 7.0, 1.1)
    ident = t.compose(t.inverse())
    assert ident.is_identity(1e-12)
    back = AffineTransform.from_json(t.to_json())
    np.testing.assert_array_equal(back.linear, t.linear)
    with pytest.raises(NumericalError):
        AffineTransform(np.zeros((2, 2)), np.zeros(2))


# ---------------------------------------------------------------- apply_affine

def test_identity_bit_identical():
    img = blob_image()
    assert apply_affine(img, AffineTransform.identity(), NEAREST).tobytes() == img.tobytes()
    assert register_back(img, AffineTransform.identity()).tobytes() == img.tobytes()


def test_integer_translation_exact_shift():
    img = np.random.default_rng(1).random((20, 24))
    out = apply_affine(img, AffineTransform.from_params(2, -3), NEAREST)
    expected = np.zeros_like(img)
    expected[0:17, 2:24] = img[3:20, 0:22]
    np.testing.assert_array_equal(out, expected)


def test_rotation_round_trip_against_oracle():
    img = np.random.default_rng(2).random((40, 48))
    fwd, bwd = AffineTransform.from_params(rotation_deg=10), AffineTransform.from_params(rotation_deg=-10)
    got = apply_affine(apply_affine(img, fwd, NEAREST), bwd, NEAREST)
    oracle = oracle_nearest(oracle_nearest(img, fwd), bwd)
    inner = (slice(5, -5), slice(5, -5))
    assert np.mean(got[inner] == oracle[inner]) >= 0.95


def test_nearest_preserves_histogram_for_integer_translation():
    img = np.zeros((30, 30))
    img[8:22, 8:22] = np.random.default_rng(3).random((14, 14))
    out = apply_affine(img, AffineTransform.from_params(-4, 5), NEAREST)
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(img.ravel()))


def test_unknown_interpolation():
    with pytest.raises(ConfigurationError):
        apply_affine(np.zeros((4, 4)), AffineTransform.from_params(0.5), "linear")


def test_stack_input():
    vol = np.stack([blob_image(seed=s) for s in range(3)])
    t = AffineTransform.from_params(1.3, 0.2, 3.0)
    out = apply_affine(vol, t, BICUBIC)
    np.testing.assert_array_equal(out[1], apply_affine(vol[1], t, BICUBIC))


# ---------------------------------------------------------------- register_back

def test_integer_translation_register_back_exact():
    img = blob_image()
    t = AffineTransform.from_params(3, -2)
    back = register_back(apply_affine(img, t, NEAREST), t)
    assert np.max(np.abs(back[4:-4, 5:-5] - img[4:-4, 5:-5])) < 1e-10


def test_subpixel_translation_matches_separable_oracle():
    img = blob_image(32, 36, 4)
    t = AffineTransform.from_params(1.3, -0.6)
    moved = apply_affine(img, t, NEAREST)
    back = register_back(moved, t)
    h, w = img.shape
    oracle = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            u, v = x + 1.3, y - 0.6  # source of the inverse translation
            if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
                continue
            u0, v0 = math.floor(u), math.floor(v)
            acc = 0.0
            for j in range(-1, 3):
                for i in range(-1, 3):
                    yy = min(max(v0 + j, 0), h - 1)
                    xx = min(max(u0 + i, 0), w - 1)
                    acc += keys(v - (v0 + j)) * keys(u - (u0 + i)) * moved[yy, xx]
            oracle[y, x] = acc
    assert np.max(np.abs(back - oracle)) < 1e-10
    # bicubic ripple on the nearest-neighbour round trip stays a fraction of the signal range
    inner = (slice(4, -4), slice(4, -4))
    assert np.max(np.abs(back[inner] - img[inner])) < 0.75 * np.ptp(img)


@pytest.mark.xfail(strict=True, reason="cubic-convolution taps reach two pixels, so the round trip can leak "
                                       "signal 2 px beyond the support; see the 2-px bound test below")
def test_round_trip_support_within_one_pixel_dilation():
    img = blob_image()
    support = ndimage.binary_dilation(img > 0, np.ones((3, 3), bool))
    for seed in range(10):
        rng = np.random.default_rng(seed)
        t = AffineTransform.from_params(*rng.uniform(-2, 2, 2), rng.uniform(-2, 2))
        back = register_back(apply_affine(img, t, NEAREST), t)
        assert np.all(np.abs(back[~support]) < 1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_round_trip_support_within_two_pixel_dilation(tx, ty, rot):
    img = blob_image()
    support = ndimage.binary_dilation(img > 0, np.ones((5, 5), bool))
    t = AffineTransform.from_params(tx, ty, rot)
    back = register_back(apply_affine(img, t, NEAREST), t)
    assert np.all(np.abs(back[~support]) < 1e-12)


# ---------------------------------------------------------------- estimation

def test_estimate_identity():
    img = blob_image()
    est = estimate_affine(img, img)
    assert est.converged
    assert np.max(np.abs(est.transform.translation)) < 0.05
    rot = math.degrees(math.atan2(est.transform.linear[1, 0], est.transform.linear[0, 0]))
    assert abs(rot) < 0.1


def test_estimate_known_translation():
    img = blob_image()
    moving = ndimage.shift(img, (1.5, 3.0), order=3, mode="constant")
    est = estimate_affine(img, moving)
    np.testing.assert_allclose(est.transform.translation, [3.0, 1.5], atol=0.1)


@settings(max_examples=4, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-5, 5))
@example(0.0, 0.0, 1.0)
def test_estimate_recovers_rigid_motion(tx, ty, rot):
    img = blob_image(seed=5)
    t = AffineTransform.from_params(tx, ty, rot)
    est = estimate_affine(img, apply_affine(img, t, BICUBIC))
    np.testing.assert_allclose(est.transform.translation, [tx, ty], atol=0.1)
    got = math.degrees(math.atan2(est.transform.linear[1, 0], est.transform.linear[0, 0]))
    assert abs(got - rot) < 0.2


def test_estimate_noise_pair_flagged():
    rng = np.random.default_rng(9)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        est = estimate_affine(rng.standard_normal((48, 48)), rng.standard_normal((48, 48)))
    assert not est.converged
    assert any(issubclass(r.category, RegistrationWarning) for r in rec)


# ---------------------------------------------------------------- traces

def test_trace_examples(tmp_path):
    assert len(generate_motion_trace(0, 1)) == 1 and generate_motion_trace(0, 1)[0].is_identity()
    assert all(t.is_identity() for t in generate_motion_trace(0, 6, 0.0, 0.0))
    a, b = generate_motion_trace(3, 10), generate_motion_trace(3, 10)
    assert all(np.array_equal(x.linear, y.linear) and np.array_equal(x.translation, y.translation)
               for x, y in zip(a, b))
    a.save(tmp_path / "trace.json")
    back = MotionTrace.load(tmp_path / "trace.json")
    assert len(back) == 10 and np.array_equal(back[4].translation, a[4].translation)
    with pytest.raises(ConfigurationError):
        generate_motion_trace(0, 0)
    with pytest.raises(ConfigurationError):
        MotionTrace((AffineTransform.from_params(1.0),))


def test_trace_within_bounds():
    tr = generate_motion_trace(1, 50, 2.0, 2.0)
    for t in tr:
        assert np.all(np.abs(t.translation) <= 2.0)
        assert abs(math.degrees(math.atan2(t.linear[1, 0], t.linear[0, 0]))) <= 2.0 + 1e-12
