import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foa_unet import IllConditionedError, ShapeError
from foa_unet.beamform import (
    FeatureTensor,
    build_beamformers,
    compute_stats,
    extract_features,
    normalize_sequence,
    standardize,
)
from foa_unet.foa import Direction, angular_distance, encode_plane_wave, steering_vector
from foa_unet.stft import Spectrogram, StftConfig, analyze


def constraint_residual(bf, dirs):
    d = np.stack([steering_vector(x) for x in dirs], axis=1)
    return np.abs(bf.vectors.conj() @ d - np.eye(len(dirs))).max()


def random_separated(rng, k, min_sep_deg=25.0):
    while True:
        az = rng.uniform(-math.pi, math.pi, k)
        el = np.arcsin(rng.uniform(-1, 1, k))
        dirs = [Direction(a, e) for a, e in zip(az, el)]
        if all(
            math.degrees(angular_distance(a, b)) >= min_sep_deg
            for i, a in enumerate(dirs)
            for b in dirs[i + 1 :]
        ):
            return dirs


def test_target_only_beamformer():
    bf = build_beamformers(Direction(0, 0))
    np.testing.assert_allclose(bf.vectors[0], [0.25, math.sqrt(3) / 4, 0, 0], atol=1e-15)


def test_orthogonal_interferer_nulled():
    bf = build_beamformers(Direction(0, 0), [Direction(math.pi / 2, 0)])
    d_int = steering_vector(Direction(math.pi / 2, 0))
    assert abs(bf.vectors[0].conj() @ d_int) < 1e-10
    assert abs(bf.vectors[0].conj() @ steering_vector(Direction(0, 0)) - 1) < 1e-10


def test_close_sources_still_constrained():
    t, i = Direction.from_degrees(10, 5), Direction.from_degrees(35, 5)
    bf = build_beamformers(t, [i])
    assert constraint_residual(bf, [t, i]) < 1e-8
    assert np.isfinite(bf.condition) and bf.condition > 1


def test_coincident_directions_rejected():
    with pytest.raises(IllConditionedError):
        build_beamformers(Direction(0.3, 0.2), [Direction(0.3, 0.2)])


def test_constraints_random_tuples():
    rng = np.random.default_rng(0)
    for _ in range(300):
        k = rng.integers(1, 4)
        dirs = random_separated(rng, k)
        bf = build_beamformers(dirs[0], dirs[1:])
        assert constraint_residual(bf, dirs) < 1e-8


def plane_wave_mix(rng, direction, n=4096, cfg=None):
    mono = analyze(rng.standard_normal(n), cfg or StftConfig.from_frame_len(256))
    return mono, encode_plane_wave(mono, direction)


def test_features_of_target_plane_wave():
    rng = np.random.default_rng(1)
    t, i = Direction.from_degrees(0), Direction.from_degrees(90)
    mono, mix = plane_wave_mix(rng, t)
    ft = extract_features(mix, build_beamformers(t, [i]))
    assert ft.features.shape == (3,) + mix.data.shape[1:]
    np.testing.assert_allclose(ft.features[0], np.abs(mono.data[0]), rtol=1e-6)
    np.testing.assert_allclose(ft.features[1], np.abs(mono.data[0]), rtol=1e-5, atol=1e-6)
    assert ft.features[2].max() < 1e-5 * ft.features[1].max()


def test_zero_mixture_gives_zero_features():
    cfg = StftConfig.from_frame_len(16)
    mix = Spectrogram(np.zeros((4, 3, 9), np.complex64), cfg)
    ft = extract_features(mix, build_beamformers(Direction(0), [Direction(1.5)]))
    assert not np.any(ft.features)


def test_feature_count_checked():
    cfg = StftConfig.from_frame_len(16)
    mix = Spectrogram(np.zeros((4, 3, 9), np.complex64), cfg)
    bf = build_beamformers(Direction(0), [Direction(1.5)])
    with pytest.raises(ShapeError):
        extract_features(mix, bf, n_features=4)
    with pytest.raises(ShapeError):
        extract_features(Spectrogram(np.zeros((2, 3, 9), np.complex64), cfg), bf)


def test_two_interferer_null_depth():
    rng = np.random.default_rng(2)
    t, i1, i2 = Direction.from_degrees(0), Direction.from_degrees(45), Direction.from_degrees(-45)
    _, m1 = plane_wave_mix(rng, i1)
    _, m2 = plane_wave_mix(rng, i2)
    _, mt = plane_wave_mix(rng, t)
    bf = build_beamformers(t, [i1, i2])
    leak = extract_features(m1 + m2, bf).features[1]
    ref = extract_features(mt, bf).features[1]
    assert 10 * np.log10(np.sum(leak.astype(np.float64) ** 2) / np.sum(ref.astype(np.float64) ** 2)) < -60


def test_extract_features_linear_in_mixture():
    rng = np.random.default_rng(3)
    cfg = StftConfig.from_frame_len(16)
    bf = build_beamformers(Direction(0), [Direction(2.0)])
    x = rng.standard_normal((4, 5, 9)) + 1j * rng.standard_normal((4, 5, 9))
    y = rng.standard_normal((4, 5, 9)) + 1j * rng.standard_normal((4, 5, 9))
    bx, by, bxy = (bf.apply(v) for v in (x, y, 2 * x - 3 * y))
    np.testing.assert_allclose(bxy, 2 * bx - 3 * by, atol=1e-12)


def test_normalize_constant_and_peak():
    f = np.full((3, 10, 4), 2.5, np.float32)
    out = normalize_sequence(FeatureTensor(f)).features
    assert np.all(out[1:] == 1.0)
    assert np.all(out[0] == 2.5)  # |x_W| untouched

    rng = np.random.default_rng(4)
    f = rng.uniform(0, 5, (4, 40, 16)).astype(np.float32)
    out = normalize_sequence(FeatureTensor(f)).features
    np.testing.assert_array_equal(out[1:].max(axis=1), 1.0)


def test_normalize_zero_band():
    f = np.ones((3, 10, 4), np.float32)
    f[1, :, 2] = 0
    out = normalize_sequence(FeatureTensor(f)).features
    assert np.all(np.isfinite(out))
    assert np.all(out[1, :, 2] == 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_normalize_scale_invariant_and_idempotent(seed, scale):
    rng = np.random.default_rng(seed)
    bf = build_beamformers(Direction(0), [Direction(0.6), Direction(-1.2, 0.3)])
    x = rng.standard_normal((4, 12, 9)) + 1j * rng.standard_normal((4, 12, 9))
    a = normalize_sequence(extract_features(x, bf)).features
    b = normalize_sequence(extract_features(scale * x, bf)).features
    np.testing.assert_allclose(a[1:], b[1:], rtol=1e-5, atol=1e-6)
    twice = normalize_sequence(normalize_sequence(extract_features(x, bf))).features
    np.testing.assert_allclose(twice, a, rtol=1e-6)


def test_standardize_definitions():
    rng = np.random.default_rng(5)
    train = [FeatureTensor(rng.gamma(2.0, 1.0, (3, 40, 8)).astype(np.float32)) for _ in range(6)]
    stats = compute_stats(train)
    mean_input = FeatureTensor(np.broadcast_to(stats.mean[:, None, :], (3, 5, 8)).copy())
    assert np.allclose(standardize(mean_input, stats).features, 0, atol=1e-6)
    z = np.concatenate([standardize(t, stats).features for t in train], axis=1).astype(np.float64)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-6)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-6)


def test_standardize_silent_bin():
    f = np.ones((3, 10, 4), np.float32)
    f[:, :, 1] = 0
    stats = compute_stats([FeatureTensor(f)])
    out = standardize(FeatureTensor(f), stats).features
    assert np.all(np.isfinite(out))
    assert np.all(out[:, :, 1] == 0)
