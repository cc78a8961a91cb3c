import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from fedmr.analysis import (
    TheoremSimConfig,
    angle_between,
    angular_spread,
    collapse_metric,
    eigvar_topk,
    empirical_shift,
    fit_linear_classifier,
    motivation_weights,
    random_theorem_configs,
    theorem1_simulate,
)
from fedmr.data import gen_circles, gen_motivation
from fedmr.errors import ContractError, DomainError
from fedmr.model import MlpSpec, init_params

S3 = math.sqrt(3)


# ------------------------------------------------------------ collapse metric


def test_eigvar_examples():
    assert eigvar_topk(np.eye(4) * 2.5, k=4) == 0.0
    assert eigvar_topk(np.diag([0.0, 2.0]), k=2, normalizer=2) == pytest.approx(1.0)
    # top-k truncation after sorting: only 5 and 3 count
    assert eigvar_topk(np.diag([3.0, -1.0, 5.0]), k=2, normalizer=1) == pytest.approx(2.0)
    with pytest.raises(ContractError):
        eigvar_topk(np.eye(2), k=3)


def test_collapse_metric_is_finite_and_deterministic():
    params = init_params(MlpSpec((2, 16, 3, 4), seed=1))
    data = gen_circles(n_per_class=100, seed=0)
    a = collapse_metric(params, data, seed=4)
    assert a == collapse_metric(params, data, seed=4) and a >= 0


# --------------------------------------------------------- motivation example


def test_printed_matrices():
    w_star, clients, w_hat = motivation_weights()
    assert w_star[1] == pytest.approx([-S3 / 2, 0.5])
    assert w_hat[1] == pytest.approx([-1 / 6, (S3 + 2) / 6], abs=1e-15)
    assert np.allclose(sum(clients) / 3, w_hat, atol=1e-15)


def test_angles():
    assert angle_between((1, 0), (0, 1)) == pytest.approx(90.0)
    assert angle_between((0.3, -2.0), (0.3, -2.0)) == pytest.approx(0.0, abs=1e-6)
    w_star, _, w_hat = motivation_weights()
    assert angle_between(w_star[1], w_hat[1]) == pytest.approx(45.0, abs=1e-9)
    with pytest.raises(DomainError):
        angle_between((0, 0), (1, 0))


@given(
    st.tuples(st.floats(-10, 10), st.floats(-10, 10)).filter(lambda v: math.hypot(*v) > 1e-3),
    st.tuples(st.floats(-10, 10), st.floats(-10, 10)).filter(lambda v: math.hypot(*v) > 1e-3),
    st.floats(1e-3, 1e3),
    st.floats(1e-3, 1e3),
)
@example(u=(2.1875, 3.75), v=(2.1875, 3.75), a=1.6839275850447848, b=2.5)
def test_angle_is_scale_invariant(u, v, a, b):
    assert angle_between(np.multiply(a, u), np.multiply(b, v)) == pytest.approx(angle_between(u, v), abs=1e-6)


def test_linear_fit_leaves_absent_rows_zero_and_is_converged():
    ds = gen_motivation(200, seed=1)
    keep = ds.labels != 2
    w = fit_linear_classifier(ds.features[keep], ds.labels[keep], 3)
    assert np.all(w[2] == 0.0)
    w_soft = fit_linear_classifier(ds.features[keep], ds.labels[keep], 3, model="softmax")
    assert np.all(w_soft[2] == 0.0)


def test_empirical_shift_iid_control():
    assert empirical_shift(gen_motivation(1000, seed=0), "iid") <= 5.0


def test_empirical_shift_rejects_unknown_variant():
    with pytest.raises(ContractError):
        empirical_shift(gen_motivation(50, seed=0), "bogus")


# ---------------------------------------------------------- prototype recursion


def test_full_support_without_slack_converges():
    r = theorem1_simulate(TheoremSimConfig(a_star=-0.7, G=2.0, p_k=0.8, p_hat=0.2, delta=0.0, T=200, seed=3))
    assert r.satisfied
    assert r.error[-1] <= 1e-6 * 2.0


def test_no_support_bound_is_two_g():
    r = theorem1_simulate(TheoremSimConfig(a_star=0.1, G=1.5, p_k=0.4, p_hat=0.0, delta=0.0, T=50))
    assert np.allclose(r.bound, 3.0) and r.satisfied


def test_bound_holds_on_random_configs():
    assert all(theorem1_simulate(c).satisfied for c in random_theorem_configs(200, seed=11, T=60))


@given(
    st.floats(0.01, 0.99),
    st.floats(0.0, 1.0),
    st.floats(0.1, 10.0),
    st.floats(-1.0, 1.0),
    st.floats(0.0, 2.0),
    st.integers(0, 10_000),
)
def test_bound_property(p_k, frac, G, a_rel, delta_rel, seed):
    cfg = TheoremSimConfig(a_star=a_rel * G, G=G, p_k=p_k, p_hat=frac * (1 - p_k), delta=delta_rel * G, T=40, seed=seed)
    assert theorem1_simulate(cfg).satisfied


def test_theorem_config_validation():
    with pytest.raises(ContractError):
        TheoremSimConfig(a_star=0.0, G=1.0, p_k=0.6, p_hat=0.5, delta=0.0)
    with pytest.raises(ContractError):
        TheoremSimConfig(a_star=2.0, G=1.0, p_k=0.5, p_hat=0.1, delta=0.0)


# ---------------------------------------------------------------- spread


def test_angular_spread():
    pts = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    assert angular_spread(pts, np.array([0, 0, 1, 1])) == pytest.approx((45.0 + 0.0) / 2)
