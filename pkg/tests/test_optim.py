import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcasgd import optim


def test_dc_step_by_hand():
    w_cur = np.array([1.0, 2.0])
    w_bak = np.array([0.5, 2.5])
    g = np.array([2.0, -1.0])
    # g + lam g^2 (w_cur - w_bak) = [2 + 0.5*4*0.5, -1 + 0.5*1*(-0.5)] = [3, -1.25]
    assert np.allclose(optim.compensated_gradient(g, w_cur, w_bak, 0.5), [3.0, -1.25])
    assert np.allclose(optim.dc_asgd_step(w_cur, g, w_bak, 0.1, 0.5), [0.7, 2.125])


def test_lambda_zero_and_no_delay_reduce_to_sgd():
    rng = np.random.default_rng(0)
    w, g, b = rng.normal(size=(3, 5))
    assert np.array_equal(optim.dc_asgd_step(w, g, b, 0.1, 0.0), optim.sgd_step(w, g, 0.1))
    assert np.array_equal(optim.dc_asgd_step(w, g, w, 0.1, 3.0), optim.sgd_step(w, g, 0.1))


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        optim.sgd_step(np.zeros(2), np.zeros(3), 0.1)
    with pytest.raises(ValueError, match="dimension"):
        optim.compensated_gradient(np.zeros(2), np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError, match="dimension"):
        optim.compensated_gradient_exact_hessian(np.zeros(2), np.eye(3), np.zeros(2))


def test_exact_hessian_tier():
    g = np.array([1.0, 0.0])
    H = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(optim.compensated_gradient_exact_hessian(g, H, np.array([1.0, 1.0])), [4.0, 4.0])


def test_adaptive_lambda_values_and_purity():
    st0 = optim.LambdaControllerState.zeros(2)
    g = np.array([2.0, 0.0])
    st1, lam = optim.adaptive_lambda(st0, g, lambda0=1.0, m=0.5)
    assert np.array_equal(st0.mean_square, [0.0, 0.0]) and st0.step_count == 0
    assert np.allclose(st1.mean_square, [2.0, 0.0]) and st1.step_count == 1
    assert np.allclose(lam, [1 / np.sqrt(2.0 + 1e-7), 1 / np.sqrt(1e-7)])
    st2, lam2 = optim.adaptive_lambda(st1, np.array([0.0, 2.0]), 1.0, 0.5)
    assert np.allclose(st2.mean_square, [1.0, 2.0])


def test_adaptive_lambda_is_finite_for_zero_gradient():
    _, lam = optim.adaptive_lambda(optim.LambdaControllerState.zeros(3), np.zeros(3), 2.0, 0.95)
    assert np.all(np.isfinite(lam))


@pytest.mark.parametrize("kw", [dict(m=1.0), dict(m=-0.1), dict(eps=0.0)])
def test_adaptive_lambda_rejects_bad_parameters(kw):
    args = dict(m=0.9, eps=1e-7) | kw
    with pytest.raises(ValueError):
        optim.adaptive_lambda(optim.LambdaControllerState.zeros(1), np.zeros(1), 1.0, **args)
    with pytest.raises(ValueError):
        optim.DcAsgdAdaptive(1.0, **args)


def test_optimizer_kinds():
    with pytest.raises(ValueError):
        optim.DcAsgdConst(-1.0)
    assert set(optim.OPTIMIZERS) == {"sequential", "asgd", "ssgd", "dc-asgd-c", "dc-asgd-a"}
    assert optim.is_delay_compensated(optim.DcAsgdConst(0.1))
    assert not optim.is_delay_compensated(optim.Asgd())


def test_lr_schedule():
    s = optim.LrSchedule(0.5, (80, 120), 10.0)
    assert optim.lr_at(s, 0) == 0.5
    assert optim.lr_at(s, 79) == 0.5
    assert optim.lr_at(s, 80) == pytest.approx(0.05)
    assert optim.lr_at(s, 200) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        optim.lr_at(s, -1)
    with pytest.raises(ValueError):
        optim.LrSchedule(0.5, (10, 10))
    with pytest.raises(ValueError):
        optim.LrSchedule(0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 1), st.floats(0.001, 100))
def test_adaptive_mean_square_stays_nonnegative(gs, m, lam0):
    s = optim.LambdaControllerState.zeros(1)
    for g in gs:
        s, lam = optim.adaptive_lambda(s, np.array([g]), lam0, min(m, 0.999))
        assert s.mean_square[0] >= 0 and lam[0] > 0
