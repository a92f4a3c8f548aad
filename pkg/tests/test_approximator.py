import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

import gradcheck
from discrete_sac import autodiff as ad
from discrete_sac.approximator import (
    SGD,
    Adam,
    AlphaParam,
    MlpSpec,
    NonFiniteGradientError,
    ParamSet,
    backward,
    forward_policy,
    forward_q,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    polyak_update,
    save_checkpoint,
    sgd_step,
    zeros_mlp,
)
from discrete_sac.autodiff import NoRecordedForward


def straightline_mlp(values, x, activation):
    """Layer-by-layer loops, no vectorised helpers."""
    n_layers = len([k for k in values if k.startswith("w")])
    h = list(x)
    for i in range(n_layers):
        W, b = values[f"w{i}"], values[f"b{i}"]
        out = []
        for j in range(W.shape[1]):
            z = b[j]
            for k in range(W.shape[0]):
                z += h[k] * W[k, j]
            if i < n_layers - 1:
                z = max(z, 0.0) if activation == "relu" else math.tanh(z)
            out.append(z)
        h = out
    return np.array(h)


# --- specs and ParamSet -------------------------------------------------------


def test_spec_rejects_zero_width():
    with pytest.raises(ValueError):
        MlpSpec(0, (4,), 2)
    with pytest.raises(ValueError):
        MlpSpec(3, (4, 0), 2)
    MlpSpec(3, (), 2)  # linear model is fine


def test_param_count_and_grad_shapes(rng):
    spec = MlpSpec(4, (8, 5), 3)
    ps = init_mlp(spec, rng)
    assert ps.num_params == 4 * 8 + 8 + 8 * 5 + 5 + 5 * 3 + 3
    for k in ps.values:
        assert ps.grads[k].shape == ps.values[k].shape


def test_init_is_within_fan_in_bound(rng):
    spec = MlpSpec(9, (16,), 3)
    ps = init_mlp(spec, rng)
    assert np.all(np.abs(ps.values["w0"]) <= 1 / 3) and np.all(np.abs(ps.values["w1"]) <= 1 / 4)


# --- forward ------------------------------------------------------------------


def test_zero_params_give_zero_output():
    spec = MlpSpec(5, (7,), 3)
    np.testing.assert_array_equal(forward_q(zeros_mlp(spec), spec, np.ones(5)), np.zeros(3))


def test_identity_linear_model():
    spec = MlpSpec(4, (), 4)
    ps = ParamSet({"w0": np.eye(4), "b0": np.zeros(4)})
    for k in range(4):
        np.testing.assert_array_equal(forward_q(ps, spec, np.eye(4)[k]), np.eye(4)[k])


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_forward_matches_straightline(rng, activation):
    spec = MlpSpec(6, (10, 7), 4, activation)
    ps = init_mlp(spec, rng)
    for _ in range(5):
        x = rng.normal(size=6)
        np.testing.assert_allclose(forward_q(ps, spec, x), straightline_mlp(ps.values, x, activation), atol=1e-10)


def test_dimension_mismatch_rejected(rng):
    spec = MlpSpec(3, (4,), 2)
    ps = init_mlp(spec, rng)
    with pytest.raises(ValueError, match="dimension"):
        forward_q(ps, spec, np.zeros(4))
    with pytest.raises(ValueError, match="dimension"):
        forward_policy(ps, spec, np.zeros(2))


def linear_policy(logits):
    n = len(logits)
    return ParamSet({"w0": np.zeros((1, n)), "b0": np.asarray(logits, dtype=float)}), MlpSpec(1, (), n)


def test_policy_zero_logits_uniform():
    ps, spec = linear_policy([0.0] * 5)
    np.testing.assert_allclose(forward_policy(ps, spec, [0.0]).probs, np.full(5, 0.2), atol=1e-15)


def test_policy_large_logit_no_overflow():
    ps, spec = linear_policy([1000.0, 0, 0, 0])
    d = forward_policy(ps, spec, [0.0])
    assert np.all(np.isfinite(d.log_probs))
    np.testing.assert_allclose(d.probs, [1, 0, 0, 0], atol=1e-300)


def test_policy_hand_softmax():
    ps, spec = linear_policy([1.0, 2.0, 3.0])
    z = math.exp(1) + math.exp(2) + math.exp(3)
    expected = [math.exp(1) / z, math.exp(2) / z, math.exp(3) / z]
    np.testing.assert_allclose(forward_policy(ps, spec, [0.0]).probs, expected, rtol=1e-12)
    np.testing.assert_allclose(forward_policy(ps, spec, [0.0]).probs, [0.09003, 0.24473, 0.66524], atol=1e-5)


@given(hnp.arrays(np.float64, st.integers(2, 10), elements=st.floats(-1e6, 1e6)))
def test_policy_always_a_valid_distribution(logits):
    ps, spec = linear_policy(logits)
    d = forward_policy(ps, spec, [0.0])
    d.validate()
    assert np.all(np.isfinite(d.log_probs))
    np.testing.assert_allclose(np.exp(d.log_probs), d.probs, rtol=1e-12, atol=1e-300)


# --- backward -----------------------------------------------------------------


def test_sum_of_squares_gradient(rng):
    ps = ParamSet({"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)})
    with ps.record():
        v = ps.vars()
        backward(ad.sum(ad.square(v["a"])) + ad.sum(ad.square(v["b"])), ps)
    np.testing.assert_array_equal(ps.grads["a"], 2 * ps.values["a"])
    np.testing.assert_array_equal(ps.grads["b"], 2 * ps.values["b"])


def test_constant_loss_gives_zero_gradient(rng):
    ps = ParamSet({"a": rng.normal(size=3)})
    ps.grads["a"][...] = 7.0
    with ps.record():
        backward(ad.Var(np.array(3.0)) + 0.0 * ad.sum(ps.vars()["a"]) * 0.0, ps)
    np.testing.assert_array_equal(ps.grads["a"], 0.0)
    with ps.record():
        backward(ad.as_var(1.5), ps)
    np.testing.assert_array_equal(ps.grads["a"], 0.0)


def test_backward_without_recording_raises(rng):
    spec = MlpSpec(3, (4,), 2)
    ps = init_mlp(spec, rng)
    loss = ad.sum(mlp_forward(ps, spec, np.ones(3)))
    with pytest.raises(NoRecordedForward):
        backward(loss, ps)


def test_nonscalar_loss_rejected(rng):
    ps = ParamSet({"a": rng.normal(size=3)})
    with ps.record():
        with pytest.raises(ValueError):
            backward(ps.vars()["a"] * 2.0, ps)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_mlp_gradient_matches_finite_differences(rng, activation):
    spec = MlpSpec(6, (12, 9), 5, activation)
    ps = init_mlp(spec, rng)
    x = rng.normal(size=(7, 6))
    a = rng.integers(0, 5, size=7)
    y = rng.normal(size=7)

    def loss():
        out = mlp_forward(ps, spec, x)
        q = ad.gather(out, a)
        lp = ad.log_softmax(out)
        return ad.mean(ad.square(q - y)) + ad.mean(ad.sum(ad.exp(lp) * lp, axis=1))

    assert gradcheck.check(loss, ps, rng, num_coords=50) < 1e-4


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: ad.minimum(a, b),
        lambda a, b: ad.maximum(a, b),
        lambda a, b: ad.clip(a, -0.3, 0.4) * b,
        lambda a, b: ad.tanh(a) * ad.relu(b),
        lambda a, b: a - b * a,
    ],
)
def test_elementwise_ops_match_finite_differences(rng, op):
    ps = ParamSet({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))})

    def loss():
        v = ps.vars()
        return ad.sum(ad.square(op(v["a"], v["b"])))

    assert gradcheck.check(loss, ps, rng) < 1e-4


def test_stop_gradient_blocks_flow(rng):
    ps = ParamSet({"a": rng.normal(size=3)})
    with ps.record():
        a = ps.vars()["a"]
        backward(ad.sum(ad.stop_gradient(a) * a), ps)
    np.testing.assert_array_equal(ps.grads["a"], ps.values["a"])


def test_broadcast_gradient_sums_over_batch(rng):
    ps = ParamSet({"b": rng.normal(size=3)})
    x = rng.normal(size=(5, 3))
    with ps.record():
        backward(ad.sum(x + ps.vars()["b"]), ps)
    np.testing.assert_array_equal(ps.grads["b"], np.full(3, 5.0))


def test_shared_subexpression_accumulates(rng):
    ps = ParamSet({"a": rng.normal(size=2)})
    with ps.record():
        a = ps.vars()["a"]
        t = a * a
        backward(ad.sum(t + t * 3.0), ps)
    np.testing.assert_allclose(ps.grads["a"], 8 * ps.values["a"], rtol=1e-14)


# --- optimizers ---------------------------------------------------------------


def test_plain_step_example():
    ps = ParamSet({"p": np.array(1.0)})
    ps.grads["p"][...] = 0.5
    sgd_step(ps, 0.1)
    assert float(ps.values["p"]) == pytest.approx(0.95, abs=1e-15)


@pytest.mark.parametrize("make", [lambda: None, lambda: Adam(0.1)])
def test_zero_gradient_leaves_params(make, rng):
    ps = ParamSet({"p": rng.normal(size=4)})
    before = ps.flat()
    sgd_step(ps, 0.1, make())
    np.testing.assert_array_equal(ps.flat(), before)


def test_nan_gradient_names_tensor():
    ps = ParamSet({"w0": np.zeros(2), "b0": np.zeros(2)})
    ps.grads["b0"][1] = np.nan
    with pytest.raises(NonFiniteGradientError, match="b0"):
        sgd_step(ps, 0.1)
    with pytest.raises(NonFiniteGradientError, match="b0"):
        Adam(0.1).step(ps)


def test_nonpositive_lr_rejected():
    with pytest.raises(ValueError):
        sgd_step(ParamSet({"p": np.zeros(1)}), 0.0)


def test_adam_matches_hand_recurrence():
    # f(x) = sum c_i (x_i - m_i)^2, gradient 2 c (x - m)
    c = [1.0, 4.0]
    m = [3.0, -1.0]
    x = [0.5, 2.0]
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    ps = ParamSet({"x": np.array(x)})
    opt = Adam(lr, b1, b2, eps)
    mom = [0.0, 0.0]
    vel = [0.0, 0.0]
    for t in range(1, 4):
        g = [2 * c[i] * (x[i] - m[i]) for i in range(2)]
        for i in range(2):
            mom[i] = b1 * mom[i] + (1 - b1) * g[i]
            vel[i] = b2 * vel[i] + (1 - b2) * g[i] ** 2
            mhat = mom[i] / (1 - b1**t)
            vhat = vel[i] / (1 - b2**t)
            x[i] = x[i] - lr * mhat / (math.sqrt(vhat) + eps)
        ps.grads["x"][...] = 2 * np.array(c) * (ps.values["x"] - np.array(m))
        sgd_step(ps, lr, opt)
        np.testing.assert_allclose(ps.values["x"], x, atol=1e-8)


def test_alpha_stays_positive_under_any_steps():
    ap = AlphaParam.create(0.2)
    opt = SGD(1.0)
    for sign in [1, 1, 1, -1, 1, 1]:
        ap.params.grads["log_alpha"][...] = sign * 50.0
        opt.step(ap.params)
        assert ap.alpha > 0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(1e-3, 1.0))
def test_alpha_positive_property(grads, lr):
    ap = AlphaParam.create(1.0)
    for g in grads:
        ap.params.grads["log_alpha"][...] = g
        sgd_step(ap.params, lr)
        assert ap.alpha > 0


# --- polyak -------------------------------------------------------------------


def test_polyak_hard_copy(rng):
    a = ParamSet({"w": rng.normal(size=(3, 3))})
    b = ParamSet({"w": rng.normal(size=(3, 3))})
    polyak_update(a, b, 1.0)
    np.testing.assert_array_equal(a.values["w"], b.values["w"])


def test_polyak_half():
    a = ParamSet({"w": np.zeros(2)})
    polyak_update(a, ParamSet({"w": np.full(2, 2.0)}), 0.5)
    np.testing.assert_array_equal(a.values["w"], [1.0, 1.0])


def test_polyak_shape_mismatch():
    with pytest.raises(ValueError):
        polyak_update(ParamSet({"w": np.zeros(2)}), ParamSet({"w": np.zeros(3)}), 0.5)
    with pytest.raises(ValueError):
        polyak_update(ParamSet({"w": np.zeros(2)}), ParamSet({"v": np.zeros(2)}), 0.5)


@given(st.floats(0.01, 1.0), st.integers(1, 40))
def test_polyak_geometric_decay(tau, k):
    rng = np.random.default_rng(0)
    online = ParamSet({"w": rng.normal(size=5)})
    target = ParamSet({"w": rng.normal(size=5)})
    gap0 = np.linalg.norm(target.flat() - online.flat())
    for _ in range(k):
        polyak_update(target, online, tau)
    gap = np.linalg.norm(target.flat() - online.flat())
    assert gap == pytest.approx((1 - tau) ** k * gap0, rel=1e-9, abs=1e-12)


# --- checkpoints --------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    spec = MlpSpec(4, (6,), 3)
    groups = {"q": init_mlp(spec, rng), "pi": init_mlp(spec, rng), "alpha": AlphaParam.create(0.3).params}
    groups["q"].values["w0"][0, 0] = -0.0
    groups["q"].values["b0"][1] = 1e-310
    save_checkpoint(tmp_path / "ck", groups, {"spec": spec.to_json()})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta == {"spec": spec.to_json()}
    for g, ps in groups.items():
        assert back[g].data.tobytes() == ps.data.tobytes()
        assert list(back[g].values) == list(ps.values)
    blob = (tmp_path / "ck.bin").read_bytes()
    assert len(blob) == 8 * sum(ps.num_params for ps in groups.values())
    assert np.frombuffer(blob[:8], "<f8")[0] == groups["q"].values["w0"].ravel()[0]


def test_checkpoint_rejects_unknown_version(tmp_path, rng):
    import json

    save_checkpoint(tmp_path / "ck", {"a": ParamSet({"x": np.zeros(2)})})
    doc = json.loads((tmp_path / "ck.json").read_text())
    doc["version"] = 99
    (tmp_path / "ck.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "ck")
