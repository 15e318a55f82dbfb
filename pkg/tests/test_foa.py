import math

import numpy as np
import pytest

from foa_unet.foa import (
    Direction,
    angular_distance,
    diffuse_noise,
    encode_plane_wave,
    fibonacci_sphere,
    steering_vector,
)
from foa_unet.linalg import pinv
from foa_unet.stft import StftConfig, analyze

SQ3 = math.sqrt(3)


def random_directions(rng, n):
    az = rng.uniform(-math.pi, math.pi, n)
    el = np.arcsin(rng.uniform(-1, 1, n))
    return [Direction(a, e) for a, e in zip(az, el)]


@pytest.mark.parametrize(
    "az, el, expected",
    [
        (0.0, 0.0, [1, SQ3, 0, 0]),
        (math.pi / 2, 0.0, [1, 0, SQ3, 0]),
        (1.234, math.pi / 2, [1, 0, 0, SQ3]),
        (-2.0, -math.pi / 2, [1, 0, 0, -SQ3]),
    ],
)
def test_steering_vector_cases(az, el, expected):
    np.testing.assert_allclose(steering_vector(Direction(az, el)), expected, atol=1e-15)


def test_steering_norm_random():
    rng = np.random.default_rng(0)
    for d in random_directions(rng, 1000):
        v = steering_vector(d)
        assert v[0] == 1.0
        assert abs(v @ v - 4.0) < 1e-12


def test_direction_canonicalization():
    d = Direction(3 * math.pi, 2.0)
    assert -math.pi <= d.azimuth < math.pi
    assert d.azimuth == pytest.approx(-math.pi)
    assert d.elevation == pytest.approx(math.pi / 2)
    assert Direction.from_degrees(90, 0).azimuth == pytest.approx(math.pi / 2)


def test_angular_distance():
    a = Direction.from_degrees(0)
    b = Direction.from_degrees(25)
    assert math.degrees(angular_distance(a, b)) == pytest.approx(25)
    assert angular_distance(Direction(0, math.pi / 2), Direction(2, math.pi / 2)) == pytest.approx(0, abs=1e-7)


def test_encode_plane_wave_channels():
    rng = np.random.default_rng(1)
    mono = analyze(rng.standard_normal(4096))
    enc = encode_plane_wave(mono, Direction(0.0, 0.0))
    assert enc.n_channels == 4
    np.testing.assert_allclose(enc.data[1], SQ3 * enc.data[0], rtol=1e-6)
    assert not np.any(enc.data[2:])


def test_encode_zero_and_linear():
    rng = np.random.default_rng(2)
    d = Direction(0.4, -0.2)
    assert not np.any(encode_plane_wave(np.zeros(100), d))
    x, y = rng.standard_normal((2, 100))
    np.testing.assert_allclose(
        encode_plane_wave(2 * x - 3 * y, d),
        2 * encode_plane_wave(x, d) - 3 * encode_plane_wave(y, d),
        atol=1e-12,
    )


def test_encode_rejects_multichannel():
    rng = np.random.default_rng(3)
    spec = analyze(rng.standard_normal((2, 2048)))
    with pytest.raises(ValueError):
        encode_plane_wave(spec, Direction(0, 0))


def test_encode_then_pinv_beamform_recovers_mono():
    rng = np.random.default_rng(4)
    for d in random_directions(rng, 50):
        mono = rng.standard_normal(256)
        b0 = pinv(steering_vector(d)[:, None])[0]
        rec = b0 @ encode_plane_wave(mono, d)
        np.testing.assert_allclose(rec.real, mono, atol=1e-8)


def test_fibonacci_second_moments():
    # uniform sphere: E[u u^T] = I/3
    u = np.array([d.unit_vector() for d in fibonacci_sphere(256)])
    np.testing.assert_allclose(u.T @ u / 256, np.eye(3) / 3, atol=5e-3)


def spatial_covariance(spec):
    x = spec.data.reshape(4, -1).astype(np.complex128)
    return (x @ x.conj().T).real / x.shape[1]


def test_diffuse_covariance_is_isotropic():
    rng = np.random.default_rng(5)
    template = rng.standard_normal(10 * 16000)
    spec = diffuse_noise(template, 32, seed=11, stft=StftConfig())
    cov = spatial_covariance(spec)
    sigma2 = cov[0, 0]
    np.testing.assert_allclose(np.diag(cov), sigma2, rtol=0.15)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 0.10 * np.min(np.diag(cov))


def test_diffuse_w_keeps_template_power():
    rng = np.random.default_rng(6)
    template = rng.standard_normal(5 * 16000)
    mono = analyze(template)
    spec = diffuse_noise(template, 32, seed=0)
    ratio = np.mean(np.abs(spec.data[0]) ** 2) / np.mean(np.abs(mono.data[0]) ** 2)
    assert ratio == pytest.approx(1.0, rel=0.1)


def test_diffuse_zero_and_deterministic():
    assert not np.any(diffuse_noise(np.zeros(4096), 16, seed=1).data)
    rng = np.random.default_rng(7)
    template = rng.standard_normal(8000)
    a = diffuse_noise(template, 16, seed=3).data
    b = diffuse_noise(template, 16, seed=3).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, diffuse_noise(template, 16, seed=4).data)


def test_diffuse_rejects_short_template_and_few_directions():
    with pytest.raises(ValueError):
        diffuse_noise(np.ones(100), 16, seed=0)
    with pytest.raises(ValueError):
        diffuse_noise(np.ones(4096), 4, seed=0)


def test_direction_on_cone():
    from foa_unet.foa import direction_on_cone

    rng = np.random.default_rng(8)
    for c in random_directions(rng, 50):
        angle, roll = rng.uniform(0.1, 3.0), rng.uniform(0, 6.3)
        d = direction_on_cone(c, angle, roll)
        assert angular_distance(c, d) == pytest.approx(angle, abs=1e-7)
    c = Direction.from_degrees(30)
    d = direction_on_cone(c, math.radians(45), 0.0)
    assert d.to_degrees() == pytest.approx((75.0, 0.0), abs=1e-9)
