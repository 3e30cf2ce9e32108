"""Forward-pass exactness, gradient correctness against finite differences,
perturbation statistics, and bit-exact serialization of the MLPs."""

import numpy as np
import pytest

from w2s.heads import Head
from w2s.nn import Mlp, init_mlp, mlp_forward, mlp_from_doc, mlp_gradients, mlp_to_doc, perturb_mlp
from w2s.rng import Rng


def batch_loss(net, X, y, head):
    pred = head(net.forward(X))
    return float(np.mean((pred - y) ** 2))


def fd_gradient(loss_of_theta, theta, step=1e-5):
    """Central finite differences, one coordinate at a time."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + step
        up = loss_of_theta()
        theta[i] = saved - step
        down = loss_of_theta()
        theta[i] = saved
        grad[i] = (up - down) / (2.0 * step)
    return grad


def max_rel_err(got, want, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float((np.abs(got - want) / denom).max())


def kink_free_batch(net, rng, n, margin=1e-3):
    """Draw a batch whose relu pre-activations all sit clear of 0.

    Central differences assume the loss is smooth across the step interval;
    a unit within ~step of its kink breaks that, so such batches are redrawn
    (deterministically, from the same stream).
    """
    for _ in range(200):
        X = rng.normal(size=(n, net.input_dim))
        Z = X
        clear = True
        for w, b, act in net.layers:
            Z = Z @ w + b
            if act == "relu":
                if np.abs(Z).min() < margin:
                    clear = False
                    break
                Z = np.maximum(Z, 0.0)
        if clear:
            return X
    raise AssertionError("no kink-free batch found; widen the margin or reseed")


# --- forward pass -------------------------------------------------------


def test_zero_network_maps_to_zero():
    net = Mlp([3, 4, 2], ["relu", "identity"])
    assert np.array_equal(net.forward(np.array([1.0, -2.0, 3.0])), np.zeros(2))


def test_identity_layer_is_identity():
    net = Mlp([2, 2], ["identity"])
    w, b, _ = net.layers[0]
    w[:] = np.eye(2)
    x = np.array([1.0, -2.0])
    assert np.array_equal(net.forward(x), x)
    assert np.array_equal(mlp_forward(net, x), x)


def test_forward_matches_hand_composition():
    # Straight-line re-evaluation of a seed-42 two-layer net.
    net = init_mlp([3, 4, 2], Rng(42, (70,)))
    (w1, b1, _), (w2, b2, _) = net.layers
    x = np.array([1.0, 0.0, 0.0])
    hidden = np.maximum(x @ w1 + b1, 0.0)
    want = hidden @ w2 + b2
    np.testing.assert_allclose(net.forward(x), want, rtol=0, atol=1e-12)


def test_forward_batch_agrees_with_single():
    # Not bit-for-bit: BLAS may sum in a different order for different
    # shapes. Determinism is only promised for identical call shapes.
    net = init_mlp([4, 5, 3], Rng(1, (71,)))
    X = Rng(2, (71,)).normal(size=(6, 4))
    batched = net.forward(X)
    assert batched.shape == (6, 3)
    for i in range(6):
        np.testing.assert_allclose(batched[i], net.forward(X[i]), rtol=1e-12)


def test_forward_is_pure():
    net = init_mlp([3, 3, 1], Rng(5, (72,)))
    x = np.array([0.1, -4.0, 2.0])
    assert np.array_equal(net.forward(x), net.forward(x))


def test_forward_dim_mismatch():
    net = Mlp([3, 2], ["identity"])
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))


# --- construction and validation ----------------------------------------


def test_constructor_validation():
    with pytest.raises(ValueError):
        Mlp([3], [])
    with pytest.raises(ValueError):
        Mlp([3, 0], ["identity"])
    with pytest.raises(ValueError):
        Mlp([3, 2], ["relu"])  # final layer must be identity
    with pytest.raises(ValueError):
        Mlp([3, 2], ["sigmoid"])
    with pytest.raises(ValueError):
        Mlp([3, 2], ["identity", "identity"])
    with pytest.raises(ValueError):
        Mlp([3, 2], ["identity"], theta=np.zeros(5))
    with pytest.raises(ValueError):
        Mlp([3, 2], ["identity"], theta=np.full(8, np.nan))


def test_parameter_layout_is_flat_and_shared():
    net = Mlp([2, 3, 1], ["relu", "identity"])
    assert net.n_params == 2 * 3 + 3 + 3 * 1 + 1
    w, b, _ = net.layers[0]
    w[0, 0] = 7.0
    b[2] = -1.0
    assert net.theta[0] == 7.0
    assert net.theta[8] == -1.0


def test_copy_is_independent():
    net = init_mlp([2, 2, 1], Rng(3, (73,)))
    dup = net.copy()
    dup.theta[:] = 0.0
    assert not np.array_equal(net.theta, dup.theta)


def test_init_he_scaling_and_zero_biases():
    net = init_mlp([100, 200, 50], Rng(11, (74,)))
    for w, b, _ in net.layers:
        expected = np.sqrt(2.0 / w.shape[0])
        assert abs(w.std() / expected - 1.0) < 0.1
        assert np.all(b == 0.0)
    assert net.activations == ["relu", "identity"]


# --- gradients ----------------------------------------------------------


def test_gradients_match_finite_differences_seed13():
    rng = Rng(13)
    net = init_mlp([4, 5, 5, 3], rng.child(0))
    head = Head("linear", rng.child(1).normal(size=3), 0.5)
    X = kink_free_batch(net, rng.child(2), 8)
    y = rng.child(3).normal(size=8)

    rep_grad, head_grad = mlp_gradients(net, X, y, head)
    fd_rep = fd_gradient(lambda: batch_loss(net, X, y, head), net.theta)
    assert max_rel_err(rep_grad, fd_rep) <= 1e-4

    head_theta = np.concatenate([head.weights, [head.bias]])

    def head_loss():
        probe = Head(head.kind, head_theta[:-1], head_theta[-1])
        return batch_loss(net, X, y, probe)

    fd_head = fd_gradient(head_loss, head_theta)
    assert max_rel_err(head_grad, fd_head) <= 1e-4


@pytest.mark.parametrize("kind", ["linear", "sigmoid", "tanh", "relu"])
def test_gradients_match_finite_differences_all_head_kinds(kind):
    rng = Rng(29, (75,))
    net = init_mlp([3, 4, 2], rng.child(0))
    head = Head(kind, rng.child(1).normal(size=2), 0.1)
    X = kink_free_batch(net, rng.child(2), 6)
    y = rng.child(3).normal(size=6)
    rep_grad, _ = mlp_gradients(net, X, y, head)
    fd_rep = fd_gradient(lambda: batch_loss(net, X, y, head), net.theta)
    assert max_rel_err(rep_grad, fd_rep) <= 1e-4


def test_gradient_modes_select_blocks():
    rng = Rng(17, (76,))
    net = init_mlp([3, 3, 2], rng.child(0))
    head = Head("linear", rng.child(1).normal(size=2), 0.0)
    X = rng.child(2).normal(size=(5, 3))
    y = rng.child(3).normal(size=5)
    both_rep, both_head = mlp_gradients(net, X, y, head)
    rep_only, empty_head = mlp_gradients(net, X, y, head, trainable="rep")
    empty_rep, head_only = mlp_gradients(net, X, y, head, trainable="head")
    assert empty_head.size == 0 and empty_rep.size == 0
    assert np.array_equal(both_rep, rep_only)
    assert np.array_equal(both_head, head_only)
    with pytest.raises(ValueError):
        mlp_gradients(net, X, y, head, trainable="everything")


def test_head_without_bias_has_no_bias_gradient():
    rng = Rng(19, (77,))
    net = init_mlp([3, 2], rng.child(0), activations=["identity"])
    head = Head("linear", rng.child(1).normal(size=2), 0.0, bias_enabled=False)
    _, head_grad = mlp_gradients(net, rng.child(2).normal(size=(4, 3)),
                                 rng.child(3).normal(size=4), head)
    assert head_grad.shape == (2,)


def test_zero_loss_means_zero_gradients():
    rng = Rng(23, (78,))
    net = init_mlp([3, 4, 2], rng.child(0))
    head = Head("linear", rng.child(1).normal(size=2), -0.3)
    X = rng.child(2).normal(size=(7, 3))
    y = head(net.forward(X))  # labels produced by the model itself
    rep_grad, head_grad = mlp_gradients(net, X, y, head)
    assert np.all(rep_grad == 0.0)
    assert np.all(head_grad == 0.0)


def test_relu_subgradient_at_zero_is_zero():
    # One hidden unit whose pre-activation is exactly 0: nothing upstream of
    # it may receive gradient, even though the loss is nonzero.
    net = Mlp([1, 1, 1], ["relu", "identity"])
    net.theta[:] = [1.0, 0.0, 1.0, 0.0]  # w1, b1, w2, b2
    head = Head("linear", np.array([1.0]), 0.0)
    rep_grad, _ = mlp_gradients(net, np.array([[0.0]]), np.array([5.0]), head)
    # layout: [w1, b1, w2, b2]; hidden output is 0 so w2 sees no gradient
    # either, but b2 (after the dead relu) must.
    assert rep_grad[0] == 0.0 and rep_grad[1] == 0.0 and rep_grad[2] == 0.0
    assert rep_grad[3] != 0.0


def test_gradient_batch_validation():
    net = init_mlp([2, 2], Rng(0, (79,)), activations=["identity"])
    head = Head("linear", np.ones(2), 0.0)
    with pytest.raises(ValueError):
        mlp_gradients(net, np.zeros((0, 2)), np.zeros(0), head)
    with pytest.raises(ValueError):
        mlp_gradients(net, np.zeros((3, 2)), np.zeros(4), head)


# --- perturbation -------------------------------------------------------


def test_perturb_zero_std_is_bit_identical_copy():
    net = init_mlp([4, 8, 4], Rng(31, (80,)))
    out = perturb_mlp(net, 0.0, Rng(1))
    assert out is not net
    assert np.array_equal(out.theta, net.theta)


def test_perturb_statistics_and_purity():
    net = init_mlp([30, 40, 20], Rng(37, (81,)))
    before = net.theta.copy()
    out = perturb_mlp(net, 0.05, Rng(2, (81,)))
    assert np.array_equal(net.theta, before)  # input unmodified
    diff = out.theta - before
    assert net.n_params >= 1000
    assert abs(diff.std() / 0.05 - 1.0) < 0.1
    assert np.all(diff != 0.0)  # biases perturbed too


def test_perturb_distinct_streams_distinct_results():
    net = init_mlp([3, 3, 3], Rng(41, (82,)))
    parent = Rng(3, (82,))
    a = perturb_mlp(net, 0.05, parent.child(0))
    b = perturb_mlp(net, 0.05, parent.child(1))
    assert not np.array_equal(a.theta, b.theta)
    again = perturb_mlp(net, 0.05, Rng(3, (82,)).child(0))
    assert np.array_equal(a.theta, again.theta)


def test_perturb_rejects_negative_std():
    net = Mlp([2, 2], ["identity"])
    with pytest.raises(ValueError):
        perturb_mlp(net, -0.01, Rng(0))


# --- serialization ------------------------------------------------------


def test_doc_round_trip_is_bit_exact():
    for seed in range(5):
        net = init_mlp([4, 7, 7, 2], Rng(seed, (83,)))
        back = mlp_from_doc(mlp_to_doc(net))
        assert back.dims == net.dims
        assert back.activations == net.activations
        assert np.array_equal(back.theta, net.theta)


def test_doc_survives_json():
    import json
    net = init_mlp([3, 5, 2], Rng(9, (84,)))
    back = mlp_from_doc(json.loads(json.dumps(mlp_to_doc(net))))
    assert np.array_equal(back.theta, net.theta)


def test_doc_validation():
    net = init_mlp([3, 4, 2], Rng(10, (85,)))
    doc = mlp_to_doc(net)
    bad = dict(doc, layers=doc["layers"][:1])
    with pytest.raises(ValueError):
        mlp_from_doc(bad)
    bad = dict(doc, layers=[dict(doc["layers"][0], rows=99)] + doc["layers"][1:])
    with pytest.raises(ValueError):
        mlp_from_doc(bad)
    short = dict(doc["layers"][0])
    short["weights"] = short["weights"][:-1]
    with pytest.raises(ValueError):
        mlp_from_doc(dict(doc, layers=[short] + doc["layers"][1:]))
    poisoned = dict(doc["layers"][0])
    poisoned["weights"] = ["nan"] + poisoned["weights"][1:]
    with pytest.raises(ValueError):
        mlp_from_doc(dict(doc, layers=[poisoned] + doc["layers"][1:]))
