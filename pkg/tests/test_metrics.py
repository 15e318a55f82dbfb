import math

import numpy as np
import pytest

from foa_unet.errors import ShapeError, SignalError
from foa_unet.metrics import (
    EvalReport,
    evaluate_pipeline,
    mask_mse,
    mixture_system,
    separation_class,
    si_sdr,
    standard_systems,
)
from foa_unet.scene import desk_scene


def test_si_sdr_caps_and_scale_invariance():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal(4000)
    assert si_sdr(ref, ref) == 60.0
    assert si_sdr(2 * ref, ref) == 60.0
    noisy = ref + 0.1 * rng.standard_normal(4000)
    assert si_sdr(3.7 * noisy, ref) == pytest.approx(si_sdr(noisy, ref), abs=1e-9)


def test_si_sdr_orthogonal_estimate():
    t = np.arange(1600)
    ref = np.sin(2 * np.pi * t / 16)
    est = np.cos(2 * np.pi * t / 16)
    assert si_sdr(est, ref) <= -60.0 + 1e-9


def test_si_sdr_against_direct_formula():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal(500)
    est = 0.8 * ref + 0.3 * rng.standard_normal(500)
    alpha = est @ ref / (ref @ ref)
    expect = 10 * math.log10(np.sum((alpha * ref) ** 2) / np.sum((est - alpha * ref) ** 2))
    assert si_sdr(est, ref) == pytest.approx(expect, abs=1e-10)


def test_si_sdr_errors():
    with pytest.raises(SignalError):
        si_sdr(np.ones(10), np.zeros(10))
    with pytest.raises(ShapeError):
        si_sdr(np.ones(10), np.ones(11))


def test_mask_mse_cases():
    m = np.random.default_rng(2).uniform(size=(5, 9))
    assert mask_mse(m, m) == 0.0
    assert mask_mse(np.zeros((3, 4)), np.ones((3, 4))) == 1.0
    with pytest.raises(ShapeError):
        mask_mse(np.zeros((3, 4)), np.zeros((4, 3)))


@pytest.fixture(scope="module")
def scenes():
    return [desk_scene(s, 1, (25, 45, 90)[s % 3], duration=2.0)[0] for s in range(3)]


def test_constant_half_mse_by_direct_summation(scenes):
    oracle = scenes[0].oracle_mask
    total = 0.0
    for row in oracle:
        for v in row:
            total += (float(v) - 0.5) ** 2
    assert mask_mse(np.full_like(oracle, 0.5), oracle) == pytest.approx(total / oracle.size, rel=1e-12)


def test_separation_class(scenes):
    assert [separation_class(s) for s in scenes] == [25, 45, 90]


def test_identity_improvement_is_zero(scenes):
    report = evaluate_pipeline(scenes, mixture_system)
    assert report.rows["system"]["si_sdr_improvement_db"] == 0.0
    for row in report.per_scene:
        assert row["scores"]["system"]["si_sdr_improvement_db"] == 0.0


def test_report_groups_and_determinism(scenes):
    a = evaluate_pipeline(scenes, standard_systems())
    b = evaluate_pipeline(scenes, standard_systems())
    assert a.to_dict() == b.to_dict()
    assert sorted(a.groups) == ["2spk/25deg", "2spk/45deg", "2spk/90deg"]
    assert a.rows["ideal_mask"]["mask_mse"] == 0.0
    assert a.rows["beamformer"]["mask_mse"] is None
    again = EvalReport.from_dict(a.to_dict())
    assert again.format_table() == a.format_table()


def test_improvement_definition(scenes):
    r = evaluate_pipeline(scenes, standard_systems())
    for row in r.per_scene:
        s = row["scores"]
        for name in s:
            assert s[name]["si_sdr_improvement_db"] == pytest.approx(
                s[name]["si_sdr_db"] - s["mixture"]["si_sdr_db"], abs=1e-12
            )


def test_oracle_filter_anechoic_90deg():
    scenes = [desk_scene(s, 1, 90, duration=2.0)[0] for s in range(3)]
    r = evaluate_pipeline(scenes, standard_systems())
    assert r.rows["ideal_filter"]["si_sdr_improvement_db"] >= 10.0
    assert r.rows["ideal_mask"]["si_sdr_improvement_db"] > 10.0


def test_empty_scene_list():
    with pytest.raises(ValueError):
        evaluate_pipeline([], mixture_system)
