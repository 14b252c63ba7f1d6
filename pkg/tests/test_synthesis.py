import numpy as np
import pytest
from scipy import special

from plcnoise.grid import FrequencyGrid, QuantizationPolicy
from plcnoise.modelfit import TLocationScale
from plcnoise.synthesis import (PUBLISHED_STEP, NoiseModel, published_model, region_anchors,
                                sample_t_location_scale, synthesize, synthesize_samples,
                                validate_roundtrip)


def test_sampler_degenerate_and_scalar():
    rng = np.random.default_rng(0)
    assert sample_t_location_scale(1.5, 0.0, 3.0, rng) == 1.5
    assert np.all(sample_t_location_scale(1.5, 0.0, 3.0, rng, 10) == 1.5)
    assert np.isscalar(sample_t_location_scale(0.0, 1.0, 3.0, rng))


def test_sampler_gaussian_limit():
    x = sample_t_location_scale(0.0, 2.0, 1e6, np.random.default_rng(1), 10**6)
    assert np.var(x, ddof=1) == pytest.approx(4.0, rel=0.01)


def test_sampler_quantiles():
    x = sample_t_location_scale(0.0, 3.47, 2.87, np.random.default_rng(2), 10**7)
    q = np.quantile(x, [0.1, 0.5, 0.9])
    ref = 3.47 * special.stdtrit(2.87, np.array([0.1, 0.5, 0.9]))
    assert np.all(np.abs(q - ref) < 0.01)


def test_zero_step_constant():
    m = NoiseModel(TLocationScale(0.0, 0.0, 3.0), 40.0, (0.0, 80.0), 0.0)
    assert np.all(synthesize(m, 1000) == 40.0)


def test_first_value_is_anchor_and_length():
    m = published_model(seed=3)
    x = synthesize(m, 17, freq_index=700)
    assert len(x) == 17 and x[0] == m.anchor_for(700)
    assert len(synthesize(m, 1)) == 1
    with pytest.raises(ValueError):
        synthesize(m, 0)


def test_determinism_and_independent_streams():
    m = published_model(seed=11)
    a, b = synthesize(m, 5000, 3), synthesize(m, 5000, 3)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a[1:], synthesize(m, 5000, 4)[1:])


def test_pure_walk_steps_are_quantized_iid_draws():
    m = NoiseModel(TLocationScale(0.0, 0.3, 5.0), 50.0, (-20.0, 120.0), 0.0, seed=5)
    x = synthesize(m, 20_000, 2)
    assert x.min() > -20 and x.max() < 120  # band never touched
    steps = sample_t_location_scale(0.0, 0.3, 5.0, np.random.default_rng([5, 2]), 19_999)
    w = m.quantization.bin_width
    np.testing.assert_allclose(np.diff(x), w * np.round(steps / w), atol=1e-9)


def test_band_never_exited():
    m = published_model(seed=1)
    lo, hi = m.band_for(0)
    x = synthesize(m, 10**7, 0)
    assert x.min() >= lo and x.max() <= hi
    q = m.quantization
    k = (x - q.min) / q.bin_width
    assert np.max(np.abs(k - np.round(k))) < 1e-6


def test_reflection_symmetry():
    m = NoiseModel(TLocationScale(0.0, 3.47, 2.87), 50.0, (15.0, 85.0), 0.0, seed=2)
    d = np.round(np.diff(synthesize(m, 10**7, 0)))
    v, c = np.unique(d, return_counts=True)
    counts = dict(zip(v.tolist(), c.tolist()))
    for k, n in counts.items():
        if k > 0 and n >= 50_000:
            assert abs(n - counts.get(-k, 0)) <= 0.02 * n


def test_model_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        NoiseModel(PUBLISHED_STEP, 40.0, (50.0, 60.0))
    with pytest.raises(ValueError):
        NoiseModel(PUBLISHED_STEP, 40.0, kappa=1.0)
    with pytest.raises(ValueError):
        NoiseModel(PUBLISHED_STEP, 40.0, (30.0, 20.0))
    m = published_model(seed=9)
    p = tmp_path / "m.json"
    m.save(p)
    back = NoiseModel.load(p)
    assert back.to_dict() == m.to_dict()
    assert set(m.to_dict()) == {"family", "mu", "sigma", "nu", "loglik", "n", "quantization",
                                "anchor", "band", "kappa", "seed"}
    assert synthesize(back, 300, 5).tobytes() == synthesize(m, 300, 5).tobytes()


def test_region_anchors():
    g = FrequencyGrid()
    a = region_anchors(g)
    assert a[0] == 68.0 and a[-1] == 23.0
    assert sorted(set(a.tolist())) == [23.0, 30.0, 40.0, 68.0]


def test_synthesize_samples_interleaved():
    m = published_model(seed=4)
    s = synthesize_samples(m, 10, [1, 5])
    assert s["freq_index"].tolist()[:4] == [1, 5, 1, 5]
    assert s["timestamp"].tolist()[:4] == [0.0, 0.0, 1.0, 1.0]
    assert np.array_equal(s["level"][1::2], synthesize(m, 10, 5))


def test_roundtrip_constant_is_degenerate():
    r = validate_roundtrip(np.full(1000, 40.0), published_model())
    assert all(c.degenerate for c in r.checks)
    assert not r.passed


def test_roundtrip_quiet_model():
    # small steps: the clamp essentially never engages, so the innovations
    # are the i.i.d. draws up to quantization
    m = NoiseModel(TLocationScale(0.0, 0.5, 2.87), 50.0, (15.0, 85.0), 0.01,
                   QuantizationPolicy(0.01), seed=8)
    x = synthesize(m, 200_000)
    r = validate_roundtrip(x, m)
    assert r.get("in_band").passed
    assert r.get("levels_dependent").passed
    assert r.get("innovations_independent").passed
    assert r.get("sigma").passed and r.get("nu").passed
