import itertools
import warnings

import numpy as np
import pytest
from conftest import central_difference, rel_err
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedmr import autodiff as ad
from fedmr.autodiff import Tensor
from fedmr.errors import DomainError, ProtocolError
from fedmr.losses import (
    DegenerateBatchWarning,
    LossConfig,
    PrototypeSet,
    class_covariances,
    inter_loss,
    inter_loss_lite,
    intra_loss,
    lemma1_residual,
    local_prototypes,
    standardize_per_class,
    total_loss,
)
from fedmr.model import Layout, MlpSpec, init_params


def inter_oracle(z, labels, protos, margin=0.0, contrast_all=False, pull=False):
    """Literal double loop over anchor classes, contrast classes and samples."""
    present = sorted(set(int(c) for c in labels))
    cols = sorted(set(present) | set(protos)) if contrast_all else present
    total, pairs = 0.0, 0
    if pull:
        return sum(
            np.mean([np.linalg.norm(z[n] - protos[ci]) for n in range(len(labels)) if labels[n] == ci])
            for ci in present
        ) / len(present)
    for ci in present:
        rows = [n for n in range(len(labels)) if labels[n] == ci]
        for cj in cols:
            if cj == ci:
                continue
            pairs += 1
            total += np.mean(
                [max(np.linalg.norm(z[n] - protos[ci]) - np.linalg.norm(z[n] - protos[cj]) + margin, 0.0) for n in rows]
            )
    return total / pairs if pairs else 0.0


def proto_set(vectors):
    return PrototypeSet({c: np.asarray(v, dtype=float) for c, v in vectors.items()}, {c: 1 for c in vectors})


# -------------------------------------------------------------- standardization


def test_hand_standardization_uses_bessel_std():
    st_ = standardize_per_class(np.array([[0.0, 0.0], [2.0, 0.0]]), [0, 0])
    zhat = st_.zhat[0].data
    assert zhat[:, 0] == pytest.approx([-1 / np.sqrt(2), 1 / np.sqrt(2)], abs=1e-15)
    assert np.all(zhat[:, 1] == 0.0)
    assert st_.floored and st_.stats[0].std[0] == pytest.approx(np.sqrt(2))


def test_singleton_classes_are_excluded(rng):
    st_ = standardize_per_class(rng.normal(size=(5, 3)), [0, 0, 1, 2, 2])
    assert st_.excluded == [1] and sorted(st_.zhat) == [0, 2]


@given(arrays(np.float64, (9, 3), elements=st.floats(-50, 50)))
def test_standardized_columns_are_centered(z):
    for zh in standardize_per_class(z, np.zeros(9, dtype=int)).zhat.values():
        assert np.all(np.abs(zh.data.mean(axis=0)) <= 1e-12)


def test_removing_the_floor_breaks_constant_columns():
    z = np.array([[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]])
    with pytest.raises(DomainError):
        standardize_per_class(z, [0, 0, 0], eps=0.0)


# ------------------------------------------------------------------ intra loss


def test_decorrelated_features_give_d():
    z = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    m = class_covariances(z, [0] * 4)[0].data
    assert np.allclose(m, np.eye(3), atol=1e-15)
    assert intra_loss(z, [0] * 4).item() == pytest.approx(3.0, abs=1e-12)


def test_rank_one_collapse_gives_four():
    z = np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]])
    assert intra_loss(z, [0, 0, 0]).item() == pytest.approx(4.0, abs=1e-12)
    assert lemma1_residual(class_covariances(z, [0, 0, 0])[0]) <= 1e-12


def test_intra_is_mean_over_classes():
    a = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    b = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    z = np.vstack([a, b])
    assert intra_loss(z, [0] * 4 + [1] * 3).item() == pytest.approx((3.0 + 9.0) / 2)


def test_intra_with_no_includable_class_warns():
    with pytest.warns(DegenerateBatchWarning):
        assert intra_loss(np.ones((2, 3)), [0, 1]).item() == 0.0


def test_covariance_diagonal_is_one(rng):
    m = class_covariances(rng.normal(size=(20, 5)), [0] * 20)[0].data
    assert np.allclose(np.diag(m), 1.0, atol=1e-12)
    assert np.allclose(m, m.T, atol=1e-12)


@given(
    st.integers(3, 30).flatmap(lambda n: arrays(np.float64, (n, 4), elements=st.floats(-10, 10))),
)
def test_intra_bounded_below_by_effective_dimension(z):
    st_ = standardize_per_class(z, np.zeros(len(z), dtype=int))
    m = class_covariances(z, np.zeros(len(z), dtype=int))[0].data
    d_eff = np.trace(m)
    # ||M||_F^2 >= trace^2 / d by Cauchy-Schwarz; trace = d when nothing was floored
    assert intra_loss(z, np.zeros(len(z), dtype=int)).item() >= d_eff**2 / 4 - 1e-9
    if not st_.floored:
        assert d_eff == pytest.approx(4.0, abs=1e-9)


def test_intra_gradient_random_batch(rng):
    z0 = rng.normal(size=(8, 4))
    y = np.array([0, 0, 0, 1, 1, 1, 1, 2])
    t = Tensor(z0, requires_grad=True)
    ad.backward(intra_loss(t, y))
    numeric = central_difference(lambda v: intra_loss(v, y).item(), z0)
    assert rel_err(t.grad, numeric) <= 1e-5


# ------------------------------------------------------------------ spectrum identity


def test_lemma1_examples():
    assert lemma1_residual(np.eye(4)) == 0.0
    assert lemma1_residual(np.array([[1.0, 1.0], [1.0, 1.0]])) <= 1e-15


@given(
    st.integers(5, 40).flatmap(
        lambda n: st.integers(2, 8).flatmap(lambda d: arrays(np.float64, (n, d), elements=st.floats(-5, 5)))
    )
)
def test_lemma1_identity_on_standardized_batches(z):
    st_ = standardize_per_class(z, np.zeros(len(z), dtype=int))
    if st_.floored:
        return
    m = class_covariances(z, np.zeros(len(z), dtype=int))[0]
    assert lemma1_residual(m) <= 1e-9 * z.shape[1]


# -------------------------------------------------------------- prototypes


def test_local_prototypes():
    p = local_prototypes(np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 1.0]]), [1, 1, 3])
    assert p.classes == [1, 3]
    assert p.vectors[1].tolist() == [1.0, 1.0] and p.vectors[3].tolist() == [5.0, 1.0]
    assert p.counts == {1: 2, 3: 1}


# ------------------------------------------------------------------ inter loss


def test_inter_zero_when_every_sample_sits_on_its_prototype():
    protos = proto_set({0: [0.0, 0.0], 1: [3.0, 0.0]})
    z = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]])
    assert inter_loss(z, [0, 0, 1], protos).item() == 0.0


def test_inter_single_class_is_zero():
    protos = proto_set({0: [0.0, 0.0], 1: [3.0, 0.0]})
    assert inter_loss(np.array([[1.0, 2.0], [0.5, 0.1]]), [0, 0], protos).item() == 0.0


def test_inter_equidistant_margin():
    protos = proto_set({0: [-1.0, 0.0], 1: [1.0, 0.0]})
    z = np.array([[0.0, 1.0], [0.0, -2.0]])
    assert inter_loss(z, [0, 1], protos, LossConfig(margin=0.0)).item() == 0.0
    assert inter_loss(z, [0, 1], protos, LossConfig(margin=0.5)).item() == pytest.approx(0.5, abs=1e-15)


def test_inter_missing_prototype_names_the_class():
    with pytest.raises(ProtocolError, match="class 2"):
        inter_loss(np.zeros((2, 2)), [0, 2], proto_set({0: [0.0, 0.0], 1: [1.0, 1.0]}))


@pytest.mark.parametrize(
    "cfg",
    [LossConfig(), LossConfig(margin=0.5), LossConfig(contrast_all=True), LossConfig(inter_mode="pull")],
    ids=["literal", "margin", "contrast-all", "pull"],
)
def test_inter_matches_loop_oracle(cfg, rng):
    z = rng.normal(size=(11, 3))
    y = rng.integers(0, 3, size=11)
    protos = proto_set({c: rng.normal(size=3) for c in range(4)})
    got = inter_loss(z, y, protos, cfg).item()
    want = inter_oracle(z, y, protos.vectors, cfg.margin, cfg.contrast_all, cfg.inter_mode == "pull")
    assert got == pytest.approx(want, rel=1e-12, abs=1e-14)
    t = Tensor(z, requires_grad=True)
    ad.backward(inter_loss(t, y, protos, cfg))
    numeric = central_difference(lambda v: inter_loss(v, y, protos, cfg).item(), z)
    assert rel_err(t.grad, numeric) <= 1e-5


@given(st.permutations([0, 1, 2, 3]), st.integers(0, 2**31))
def test_inter_invariant_under_relabeling(perm, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(10, 2))
    y = rng.integers(0, 4, size=10)
    protos = {c: rng.normal(size=2) for c in range(4)}
    base = inter_loss(z, y, proto_set(protos), LossConfig(margin=0.3)).item()
    relabeled = inter_loss(
        z, np.array([perm[c] for c in y]), proto_set({perm[c]: v for c, v in protos.items()}), LossConfig(margin=0.3)
    ).item()
    assert relabeled == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_inter_monotone_in_own_distance():
    protos = proto_set({0: [0.0, 0.0], 1: [4.0, 0.0]})
    values = [inter_loss(np.array([[x, 0.0], [4.0, 0.0]]), [0, 1], protos, LossConfig(margin=1.0)).item()
              for x in (0.0, 1.0, 1.5, 2.0, 2.5)]
    assert all(a <= b for a, b in itertools.pairwise(values))


# ------------------------------------------------------------------------- lite


def test_lite_reduces_to_exact_loss_for_large_subsets(rng):
    z = rng.normal(size=(12, 3))
    y = np.repeat([0, 1, 2], 4)
    protos = proto_set({c: rng.normal(size=3) for c in range(3)})
    full = inter_loss(z, y, protos).item()
    assert inter_loss_lite(z, y, protos, LossConfig(lite_n=12), 0).item() == full
    assert inter_loss_lite(z, y, protos, LossConfig(lite_n=99), 0).item() == full


def test_lite_single_sample_uses_one_row(rng):
    z = rng.normal(size=(6, 2))
    y = np.array([0, 0, 1, 1, 2, 2])
    protos = proto_set({c: rng.normal(size=2) for c in range(3)})
    val = inter_loss_lite(z, y, protos, LossConfig(lite_n=1, contrast_all=True), 5).item()
    singles = {inter_loss(z[i:i + 1], y[i:i + 1], protos, LossConfig(contrast_all=True)).item() for i in range(6)}
    assert val in singles


# ------------------------------------------------------------------ objective


def _model(rng):
    spec = MlpSpec((3, 6, 4, 3), seed=2)
    params = init_params(spec)
    x = rng.normal(size=(12, 3))
    y = np.repeat([0, 1, 2], 4)
    return Layout.of(spec), params.values, x, y


def test_total_loss_reduces_to_cross_entropy(rng):
    layout, w, x, y = _model(rng)
    from fedmr.model import forward_tensor

    parts = total_loss(x, y, layout, Tensor(w), LossConfig())
    expected = ad.softmax_cross_entropy(forward_tensor(layout, Tensor(w), x)[1], y).item()
    assert parts.total.item() == expected
    assert parts.intra == parts.inter == parts.prox == 0.0


def test_prox_at_anchor_is_zero(rng):
    layout, w, x, y = _model(rng)
    parts = total_loss(x, y, layout, Tensor(w), LossConfig(prox_mu=1.0), global_flat=w.copy())
    assert parts.prox == 0.0 and parts.total.item() == parts.cls


def test_total_loss_needs_prototypes_when_inter_is_on(rng):
    layout, w, x, y = _model(rng)
    with pytest.raises(ProtocolError):
        total_loss(x, y, layout, Tensor(w), LossConfig(mu2=0.1))


def test_uncovered_rows_can_be_skipped(rng):
    layout, w, x, y = _model(rng)
    protos = proto_set({0: rng.normal(size=4), 1: rng.normal(size=4)})
    with pytest.raises(ProtocolError):
        total_loss(x, y, layout, Tensor(w), LossConfig(mu2=1.0), prototypes=protos)
    skipped = total_loss(x, y, layout, Tensor(w), LossConfig(mu2=1.0), prototypes=protos, uncovered="skip")
    from fedmr.model import forward_tensor

    z = forward_tensor(layout, Tensor(w), x)[0].data
    keep = y < 2
    assert skipped.inter == pytest.approx(inter_oracle(z[keep], y[keep], protos.vectors), rel=1e-12)


def test_full_objective_gradient(rng):
    layout, w, x, y = _model(rng)
    # zero biases put dead rows exactly on a ReLU kink; move off it
    w = w + 0.1 * rng.normal(size=w.shape)
    protos = proto_set({c: np.abs(rng.normal(size=4)) for c in range(3)})
    anchor = w + 0.1 * rng.normal(size=w.shape)
    cfg = LossConfig(mu1=0.5, mu2=0.8, margin=0.5, prox_mu=0.3)

    def f(v):
        return total_loss(x, y, layout, v, cfg, prototypes=protos, global_flat=anchor).total

    t = Tensor(w, requires_grad=True)
    ad.backward(f(t))
    numeric = central_difference(lambda v: f(Tensor(v)).item(), w)
    assert rel_err(t.grad, numeric) <= 1e-5


def test_intra_warning_is_silenced_inside_total_loss(rng):
    layout, w, x, _ = _model(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        total_loss(x[:3], np.array([0, 1, 2]), layout, Tensor(w), LossConfig(mu1=1.0))
