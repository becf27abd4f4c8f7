import numpy as np
import pytest

from dcasgd import dcssgd
from dcasgd.dcssgd import Ordering
from dcasgd.model import ModelSpec


def test_two_gradients_by_hand():
    w_t = np.array([1.0, -1.0])
    g1 = np.array([1.0, 2.0])
    g2 = np.array([2.0, -1.0])
    # sub-step 1: w~ = w_t - 0.5 * g1 = [0.5, -2]
    # sub-step 2: dw = [-0.5, -1]; g~ = g2 + 0.5 * g2^2 * dw = [2 - 1, -1 - 0.5] = [1, -1.5]
    #             w~ = [0.5 - 0.5, -2 + 0.75] = [0, -1.25]
    out = dcssgd.dc_ssgd_step(w_t, [g1, g2], eta_hat=1.0, lam=0.5)
    assert np.allclose(out, [0.0, -1.25])


def test_single_gradient_is_plain_sgd():
    w = np.array([1.0, 2.0])
    g = np.array([0.3, -0.2])
    assert np.allclose(dcssgd.dc_ssgd_step(w, [g], 0.1, 5.0), w - 0.1 * g)


def test_lambda_zero_matches_plain_for_any_ordering():
    rng = np.random.default_rng(0)
    w = rng.normal(size=4)
    gs = list(rng.normal(size=(5, 4)))
    plain = dcssgd.plain_step(w, gs, 0.2)
    for o in Ordering:
        assert np.array_equal(dcssgd.dc_ssgd_step(w, gs, 0.2, 0.0, o), plain)


def test_translation_consistency():
    rng = np.random.default_rng(1)
    w = rng.normal(size=3)
    gs = list(rng.normal(size=(4, 3)))
    shift = rng.normal(size=3)
    a = dcssgd.dc_ssgd_step(w, gs, 0.3, 0.7)
    b = dcssgd.dc_ssgd_step(w + shift, gs, 0.3, 0.7)
    assert np.allclose(b - a, shift)


def test_exact_hessian_tier_is_exact_on_quadratics():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    bs = [np.array([1.0, 0.0]), np.array([0.0, -1.0]), np.array([0.5, 0.5])]
    grad_fns = [lambda w, b=b: A @ w - b for b in bs]
    hess_fns = [lambda w: A for _ in bs]
    d_dc, d_plain = dcssgd.unfold_vs_sequential(np.array([1.0, 1.0]), grad_fns, 0.1, 0.0, hess_fns=hess_fns)
    assert d_dc < 1e-14 < d_plain


def test_greedy_ordering_is_a_permutation_of_the_same_gradients():
    # with lam = 0 the orderings coincide; with lam > 0 the greedy one differs but is finite
    rng = np.random.default_rng(2)
    w = rng.normal(size=3)
    gs = list(rng.normal(size=(4, 3)))
    out = dcssgd.dc_ssgd_step(w, gs, 0.5, 1.0, Ordering.BY_COMPENSATED_NORM)
    assert np.all(np.isfinite(out))
    assert Ordering("by-compensated-norm") is Ordering.BY_COMPENSATED_NORM


def test_errors():
    with pytest.raises(ValueError, match="empty"):
        dcssgd.dc_ssgd_step(np.zeros(2), [], 0.1, 1.0)
    with pytest.raises(ValueError, match="dimension"):
        dcssgd.dc_ssgd_step(np.zeros(2), [np.zeros(3)], 0.1, 1.0)
    with pytest.raises(ValueError, match="partition mismatch"):
        dcssgd.compare_to_sequential(np.zeros(4), [], 0.1, 1.0, ModelSpec.softmax(2, 2))
    with pytest.raises(ValueError, match="partition mismatch"):
        dcssgd.compare_to_sequential(np.zeros(4), [(np.zeros((2, 2)), np.zeros(1, int))], 0.1, 1.0,
                                     ModelSpec.softmax(2, 2))
    with pytest.raises(ValueError):
        dcssgd.dc_ssgd_step(np.zeros(2), [np.zeros(2)], 0.1, 1.0, "random")


def test_compensation_helps_on_softmax_minibatches():
    spec = ModelSpec.softmax(5, 3)
    rng = np.random.default_rng(0)
    w_t = rng.normal(size=spec.n) * 0.1
    batches = [(rng.normal(size=(16, 5)), rng.integers(3, size=16)) for _ in range(4)]
    d_dc, d_plain = dcssgd.compare_to_sequential(w_t, batches, 0.05, 1.0, spec)
    e_dc, _ = dcssgd.compare_to_sequential(w_t, batches, 0.05, 1.0, spec, exact_hessian=True)
    assert e_dc < d_plain


def test_csv(tmp_path):
    path = tmp_path / "c.csv"
    dcssgd.write_comparison_csv([dict(trial=0, dist_dc=0.1, dist_plain=0.2, M=4, eta=0.05,
                                      **{"lambda": 1.0}, ordering="as-given")], path)
    lines = path.read_text().splitlines()
    assert lines == ["trial,dist_dc,dist_plain,M,eta,lambda,ordering", "0,0.1,0.2,4,0.05,1.0,as-given"]
