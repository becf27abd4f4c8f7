import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcasgd import model
from dcasgd.model import DatasetSample, ModelSpec

SPECS = [ModelSpec.softmax(4, 3), ModelSpec.softmax(1, 2), ModelSpec.mlp(3, 4, 3)]


def rand_case(spec, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=spec.n) * scale
    s = DatasetSample(rng.normal(size=spec.d), int(rng.integers(spec.K)))
    return w, s


def mp_softmax(o):
    mpmath.mp.dps = 50
    e = [mpmath.exp(mpmath.mpf(float(v))) for v in o]
    z = mpmath.fsum(e)
    return [float(v / z) for v in e]


def test_softmax_matches_high_precision():
    rng = np.random.default_rng(0)
    for _ in range(20):
        o = rng.normal(size=6) * 30
        assert np.allclose(model.softmax(o), mp_softmax(o), rtol=1e-13, atol=1e-300)


def test_softmax_extreme_logits_are_finite():
    p = model.softmax(np.array([1000.0, -1000.0, 0.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_loss_matches_high_precision():
    spec = ModelSpec.softmax(3, 4)
    for seed in range(10):
        w, s = rand_case(spec, seed, 3.0)
        o = model.logits(s.x, w, spec)
        mpmath.mp.dps = 50
        lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in o))
        assert model.loss(s, w, spec) == pytest.approx(float(lse - mpmath.mpf(float(o[s.y]))), rel=1e-12)


def test_loss_floor_caps_at_minus_log_floor():
    spec = ModelSpec.softmax(1, 2)
    w = np.array([0.0, 1e6])
    s = DatasetSample([1.0], 0)
    assert model.loss(s, w, spec) == pytest.approx(-math.log(model.PROB_FLOOR))


def test_uniform_model_loss_is_log_k():
    spec = ModelSpec.softmax(5, 7)
    s = DatasetSample(np.ones(5), 3)
    assert model.loss(s, np.zeros(spec.n), spec) == pytest.approx(math.log(7))


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_gradient_matches_finite_differences(spec):
    for seed in range(5):
        w, s = rand_case(spec, seed)
        h = 1e-6
        fd = np.array([(model.loss(s, w + e, spec) - model.loss(s, w - e, spec)) / (2 * h)
                       for e in np.eye(spec.n) * h])
        assert np.allclose(model.gradient(s, w, spec), fd, atol=1e-7)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_hessian_matches_two_oracles(spec):
    for seed in range(3):
        w, s = rand_case(spec, seed)
        H = model.hessian(s, w, spec)
        assert np.allclose(H, H.T)
        assert np.allclose(H, model.exact_hessian(s, w, spec), atol=1e-7)
        if spec.kind == "softmax":
            assert np.allclose(H, model.softmax_regression_hessian(s, w, spec), atol=1e-14)


def test_softmax_hessian_is_label_independent():
    spec = ModelSpec.softmax(3, 4)
    w, s = rand_case(spec, 1)
    Hs = [model.hessian(DatasetSample(s.x, k), w, spec) for k in range(spec.K)]
    assert all(np.array_equal(Hs[0], H) for H in Hs)


def test_outer_product_and_errors():
    spec = ModelSpec.softmax(2, 2)
    w, s = rand_case(spec, 0)
    g = model.gradient(s, w, spec)
    assert np.allclose(model.outer_product_g(s, w, spec), np.outer(g, g))
    with pytest.raises(ValueError, match="shape"):
        model.loss(s, np.zeros(3), spec)
    with pytest.raises(ValueError, match="features"):
        model.loss(DatasetSample(np.zeros(3), 0), w, spec)
    with pytest.raises(ValueError, match="label"):
        model.loss(DatasetSample(np.zeros(2), 5), w, spec)
    with pytest.raises(ValueError, match="empty batch"):
        model.empirical_risk([], w, spec)
    with pytest.raises(ValueError, match="oracle scale exceeded"):
        big = ModelSpec.softmax(100, 30)
        model.exact_hessian(DatasetSample(np.zeros(100), 0), np.zeros(big.n), big)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("cnn", 2, 2)
    with pytest.raises(ValueError):
        ModelSpec.mlp(2, 0, 2)
    with pytest.raises(ValueError):
        ModelSpec.softmax(0, 2)
    assert ModelSpec.mlp(3, 4, 5).n == 3 * 4 + 4 * 5


def test_batched_helpers_agree_with_per_sample():
    for spec in SPECS:
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, spec.d))
        y = rng.integers(spec.K, size=7)
        w = rng.normal(size=spec.n)
        samples = [DatasetSample(x, c) for x, c in zip(X, y)]
        assert model.risk(X, y, w, spec) == pytest.approx(model.empirical_risk(samples, w, spec), rel=1e-13)
        mean_g = np.mean([model.gradient(s, w, spec) for s in samples], axis=0)
        assert np.allclose(model.risk_gradient(X, y, w, spec), mean_g, atol=1e-14)
        mean_h = np.mean([model.hessian(s, w, spec) for s in samples], axis=0)
        assert np.allclose(model.risk_hessian(X, y, w, spec), mean_h, atol=1e-13)


def test_error_rate_ties_go_to_lowest_index():
    spec = ModelSpec.softmax(2, 3)
    X = np.ones((4, 2))
    assert model.error_rate(X, np.array([0, 0, 1, 2]), np.zeros(spec.n), spec) == 0.5


def test_inverse_cdf_edges():
    p = np.array([0.2, 0.3, 0.5])
    assert model.inverse_cdf(p, 0.0) == 0
    assert model.inverse_cdf(p, 0.2) == 1
    assert model.inverse_cdf(p, 0.49999) == 1
    assert model.inverse_cdf(p, 0.5) == 2
    assert model.inverse_cdf(p, 0.9999999999) == 2


def test_sample_label_frequencies_within_binomial_bounds():
    spec = ModelSpec.softmax(2, 3)
    rng = np.random.default_rng(0)
    w = rng.normal(size=spec.n)
    x = rng.normal(size=2)
    p = model.predict_proba(x, w, spec)
    n = 20000
    counts = np.bincount([model.sample_label(x, w, spec, rng) for _ in range(n)], minlength=3)
    sd = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5 * sd)


def test_fit_newton_reaches_stationary_point():
    spec = ModelSpec.softmax(3, 3)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = rng.integers(3, size=300)
    w = model.fit_newton(X, y, spec)
    assert np.linalg.norm(model.risk_gradient(X, y, w, spec)) < 1e-10
    with pytest.raises(ValueError):
        model.fit_newton(X, y, ModelSpec.mlp(3, 2, 3))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-700, 700)))
def test_softmax_is_a_distribution(o):
    p = model.softmax(o)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 20))
def test_loss_nonnegative_and_gradient_sums_to_zero_over_classes(seed, scale):
    spec = ModelSpec.softmax(3, 4)
    w, s = rand_case(spec, seed, scale)
    assert model.loss(s, w, spec) >= 0
    # softmax-regression gradients sum to zero across class blocks
    g = model.gradient(s, w, spec).reshape(spec.K, spec.d)
    assert np.allclose(g.sum(axis=0), 0, atol=1e-12)
