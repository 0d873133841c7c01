"""Layer objects, optimizers, checkpoints, and the gradient checker.

Every layer type gets a finite-difference gradient check on a small net,
and the checker itself is tested against a deliberately broken backward
pass so the kink-retry logic cannot hide real bugs.
"""

import numpy as np
import pytest

from railspeed import nn
from railspeed.nn import (
    SGD,
    Adam,
    BatchNorm,
    CheckpointError,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalMaxPool,
    MaxPool1D,
    MultiBranchNet,
    NumericsError,
    ReLU,
    Sequential,
    TrainerConfig,
    dropout_layers,
    gradient_check,
    load_checkpoint,
    mse_loss,
    read_config,
    save_checkpoint,
)

GRAD_TOL = 1e-4


def make_rng():
    return np.random.default_rng(7)


def net_conv1d_same(rng):
    net = Sequential([Conv1D(2, 3, 3, rng)])
    x = rng.normal(size=(4, 7, 2))
    return net, x


def net_conv1d_valid(rng):
    net = Sequential([Conv1D(2, 3, 3, rng, padding="valid")])
    x = rng.normal(size=(4, 7, 2))
    return net, x


def net_conv1d_nobias(rng):
    net = Sequential([Conv1D(2, 2, 3, rng, bias=False)])
    x = rng.normal(size=(4, 6, 2))
    return net, x


def net_conv2d(rng):
    net = Sequential([Conv2D(2, 3, (3, 2), rng)])
    x = rng.normal(size=(4, 6, 3, 2))
    return net, x


def net_dense(rng):
    net = Sequential([Dense(5, 3, rng)])
    x = rng.normal(size=(4, 5))
    return net, x


def net_relu(rng):
    net = Sequential([Dense(5, 4, rng), ReLU(), Dense(4, 2, rng)])
    x = rng.normal(size=(4, 5))
    return net, x


def net_batchnorm(rng):
    net = Sequential([Dense(5, 4, rng), BatchNorm(4), Dense(4, 2, rng)])
    x = rng.normal(size=(4, 5))
    return net, x


def net_dropout(rng):
    net = Sequential([Dense(5, 4, rng), Dropout(0.5, rng), Dense(4, 2, rng)])
    x = rng.normal(size=(4, 5))
    return net, x


def net_maxpool(rng):
    net = Sequential([Conv1D(1, 2, 3, rng), MaxPool1D(2, 2)])
    x = rng.normal(size=(4, 9, 1))
    return net, x


def net_globalpool(rng):
    net = Sequential([Conv1D(1, 2, 3, rng), GlobalMaxPool()])
    x = rng.normal(size=(4, 8, 1))
    return net, x


def net_flatten(rng):
    net = Sequential([Conv2D(1, 2, (3, 3), rng), Flatten(), Dense(4 * 3 * 2, 2, rng)])
    x = rng.normal(size=(4, 4, 3, 1))
    return net, x


def net_multibranch(rng):
    branches = [
        Sequential([Conv1D(1, 2, 3, rng), GlobalMaxPool()]),
        Sequential([Conv1D(1, 3, 3, rng), GlobalMaxPool()]),
    ]
    head = Sequential([Dense(5, 1, rng)])
    net = MultiBranchNet(branches, head)
    x = rng.normal(size=(4, 8, 2))
    return net, x


LAYER_NETS = {
    "conv1d_same": net_conv1d_same,
    "conv1d_valid": net_conv1d_valid,
    "conv1d_nobias": net_conv1d_nobias,
    "conv2d": net_conv2d,
    "dense": net_dense,
    "relu": net_relu,
    "batchnorm": net_batchnorm,
    "dropout": net_dropout,
    "maxpool": net_maxpool,
    "globalpool": net_globalpool,
    "flatten": net_flatten,
    "multibranch": net_multibranch,
}


@pytest.mark.parametrize("name", sorted(LAYER_NETS))
def test_gradient_check_per_layer(name):
    rng = make_rng()
    net, x = LAYER_NETS[name](rng)
    y = rng.normal(size=net.forward(x, train=False).shape)
    assert gradient_check(net, x, y) < GRAD_TOL


def test_gradient_check_flags_wrong_weight_gradient():
    class BrokenDense(Dense):
        def backward(self, dout):
            dx = super().backward(dout)
            self.w.grad = self.w.grad * 1.05
            return dx

    rng = make_rng()
    net = Sequential([BrokenDense(4, 3, rng)])
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 3))
    assert gradient_check(net, x, y) > GRAD_TOL


def test_gradient_check_flags_wrong_bias_gradient():
    class BrokenBias(Dense):
        def backward(self, dout):
            dx = super().backward(dout)
            self.b.grad = self.b.grad + 0.1
            return dx

    rng = make_rng()
    net = Sequential([BrokenBias(4, 3, rng)])
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 3))
    assert gradient_check(net, x, y) > GRAD_TOL


def test_gradient_check_restores_dropout_rate():
    rng = make_rng()
    net, x = net_dropout(rng)
    y = rng.normal(size=(4, 2))
    gradient_check(net, x, y)
    assert [d.p for d in dropout_layers(net)] == [0.5]


def test_gradient_check_sampled_probing_needs_rng():
    rng = make_rng()
    net, x = net_dense(rng)
    y = rng.normal(size=(4, 3))
    with pytest.raises(ValueError, match="random generator"):
        gradient_check(net, x, y, max_per_tensor=2)
    assert gradient_check(net, x, y, max_per_tensor=2, rng=rng) < GRAD_TOL


def test_gradient_check_rejects_shape_mismatch():
    rng = make_rng()
    net, x = net_dense(rng)
    with pytest.raises(ValueError, match="shape"):
        gradient_check(net, x, rng.normal(size=(4, 99)))


# --- individual layer semantics ----------------------------------------------

def test_kaiming_uniform_respects_fan_in_bound():
    rng = make_rng()
    w = nn.layers.kaiming_uniform((50, 20), fan_in=50, rng=rng)
    assert np.abs(w).max() <= np.sqrt(6.0 / 50)


def test_dense_rejects_wrong_feature_count():
    net = Dense(5, 3, make_rng())
    with pytest.raises(ValueError, match="features"):
        net.forward(np.zeros((2, 7)))


def test_relu_forward_and_backward():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu.forward(x), [[0.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu.backward(np.ones((1, 3))), [[0.0, 0.0, 1.0]])


def test_batchnorm_train_normalizes_batch():
    bn = BatchNorm(3)
    rng = make_rng()
    x = rng.normal(loc=5.0, scale=2.0, size=(64, 3))
    out = bn.forward(x, train=True)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)  # eps shifts it slightly


def test_batchnorm_running_statistics_update():
    bn = BatchNorm(2, momentum=0.9)
    x = np.array([[1.0, 10.0], [3.0, 14.0]])
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(bn.running_var, 0.9 * 1.0 + 0.1 * x.var(axis=0), atol=1e-12)


def test_batchnorm_eval_uses_running_statistics():
    bn = BatchNorm(2)
    bn.running_mean = np.array([1.0, 2.0])
    bn.running_var = np.array([4.0, 9.0])
    x = np.array([[3.0, 5.0]])
    out = bn.forward(x, train=False)
    expect = (x - [1.0, 2.0]) / np.sqrt(np.array([4.0, 9.0]) + bn.eps)
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_batchnorm_eval_ignores_batch_statistics():
    bn = BatchNorm(1)
    out = bn.forward(np.array([[100.0], [200.0]]), train=False)
    # fresh running stats are mean 0 var 1, so eval must not re-center
    assert out.min() > 50.0


def test_batchnorm_normalizes_over_batch_and_space():
    bn = BatchNorm(2)
    x = make_rng().normal(size=(4, 5, 2))
    out = bn.forward(x, train=True)
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-12)


def test_batchnorm_rejects_single_element_training_batch():
    bn = BatchNorm(3)
    with pytest.raises(ValueError, match="at least 2"):
        bn.forward(np.zeros((1, 3)), train=True)


def test_dropout_identity_when_inactive():
    x = make_rng().normal(size=(3, 4))
    d = Dropout(0.5, make_rng())
    np.testing.assert_array_equal(d.forward(x, train=False), x)
    np.testing.assert_array_equal(Dropout(0.0).forward(x, train=True), x)


def test_dropout_scales_survivors():
    d = Dropout(0.4, make_rng())
    x = np.ones((200, 50))
    out = d.forward(x, train=True)
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1.0 / 0.6, atol=1e-12)
    drop_rate = float(np.mean(out == 0))
    assert abs(drop_rate - 0.4) < 0.02


def test_dropout_preserves_expectation():
    d = Dropout(0.3, make_rng())
    x = np.full((500, 100), 2.0)
    out = d.forward(x, train=True)
    assert abs(out.mean() - 2.0) < 0.05


def test_dropout_backward_reuses_mask():
    d = Dropout(0.5, make_rng())
    x = np.ones((10, 10))
    out = d.forward(x, train=True)
    dout = np.ones_like(x)
    np.testing.assert_array_equal(d.backward(dout) == 0, out == 0)


def test_dropout_validation():
    with pytest.raises(ValueError, match="probability"):
        Dropout(1.0, make_rng())
    with pytest.raises(ValueError, match="probability"):
        Dropout(-0.1, make_rng())
    with pytest.raises(ValueError, match="generator"):
        Dropout(0.5)


def test_conv_kernel_validation():
    with pytest.raises(ValueError, match="kernel"):
        Conv1D(1, 1, 0, make_rng())
    with pytest.raises(ValueError, match="kernel"):
        Conv2D(1, 1, (0, 3), make_rng())


def test_multibranch_rejects_channel_mismatch():
    rng = make_rng()
    net, _ = net_multibranch(rng)
    with pytest.raises(ValueError, match="channels"):
        net.forward(np.zeros((2, 8, 3)))
    with pytest.raises(ValueError, match="branch"):
        MultiBranchNet([], Sequential([]))


def test_sequential_collects_params_in_layer_order():
    rng = make_rng()
    d1, d2 = Dense(3, 4, rng), Dense(4, 2, rng)
    net = Sequential([d1, ReLU(), d2])
    assert net.params() == [d1.w, d1.b, d2.w, d2.b]


def test_dropout_layers_finds_nested_dropouts():
    rng = make_rng()
    branch = Sequential([Conv1D(1, 2, 3, rng), GlobalMaxPool(), Dropout(0.2, rng)])
    head = Sequential([Dense(2, 1, rng), Dropout(0.3, rng)])
    net = MultiBranchNet([branch], head)
    assert [d.p for d in dropout_layers(net)] == [0.2, 0.3]


# --- loss and optimizers -----------------------------------------------------

def test_mse_loss_hand_case():
    loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
    assert loss == 2.5
    np.testing.assert_array_equal(grad, [1.0, 2.0])


def test_mse_loss_raises_on_nonfinite():
    with pytest.raises(NumericsError):
        mse_loss(np.array([np.inf]), np.array([0.0]))
    with pytest.raises(ValueError, match="shape"):
        mse_loss(np.zeros(2), np.zeros(3))


def test_sgd_plain_step():
    p = nn.Param(np.array([1.0, 2.0]))
    p.grad = np.array([0.5, -1.0])
    SGD([p], lr=0.1).step()
    np.testing.assert_allclose(p.value, [0.95, 2.1], atol=1e-15)


def test_sgd_momentum_accumulates():
    p = nn.Param(np.array([1.0]))
    opt = SGD([p], lr=0.1, momentum=0.5)
    p.grad = np.array([1.0])
    opt.step()  # v = -0.1
    np.testing.assert_allclose(p.value, [0.9], atol=1e-15)
    p.grad = np.array([1.0])
    opt.step()  # v = -0.15
    np.testing.assert_allclose(p.value, [0.75], atol=1e-15)


def test_adam_first_step_matches_formula():
    p = nn.Param(np.array([1.0]))
    p.grad = np.array([2.0])
    opt = Adam([p], lr=0.1)
    opt.step()
    # bias correction cancels on the first step: update = lr * g / (|g| + eps)
    expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
    np.testing.assert_allclose(p.value, [expect], atol=1e-15)


def test_optimizers_reject_nonfinite_gradients():
    for cls in (lambda ps: SGD(ps, lr=0.1), lambda ps: Adam(ps, lr=0.1)):
        p = nn.Param(np.array([1.0]))
        p.grad = np.array([np.nan])
        with pytest.raises(NumericsError):
            cls([p]).step()


def test_optimizer_zero_grad():
    p = nn.Param(np.array([1.0]))
    p.grad = np.array([5.0])
    opt = SGD([p], lr=0.1)
    opt.zero_grad()
    np.testing.assert_array_equal(p.grad, [0.0])


def test_optimizer_validation():
    p = nn.Param(np.array([1.0]))
    with pytest.raises(ValueError):
        SGD([p], lr=0.0)
    with pytest.raises(ValueError):
        SGD([p], lr=0.1, momentum=1.0)
    with pytest.raises(ValueError):
        Adam([p], lr=-1.0)


def test_trainer_config_validation():
    TrainerConfig(learning_rate=1e-3, batch_size=8, epochs=1, optimizer="adam")
    with pytest.raises(ValueError, match="optimizer"):
        TrainerConfig(learning_rate=1e-3, batch_size=8, epochs=1, optimizer="rmsprop")
    with pytest.raises(ValueError, match="learning rate"):
        TrainerConfig(learning_rate=0.0, batch_size=8, epochs=1)
    with pytest.raises(ValueError, match="batch"):
        TrainerConfig(learning_rate=1e-3, batch_size=0, epochs=1)


def test_sgd_training_reduces_loss_on_linear_fit():
    rng = make_rng()
    net = Sequential([Dense(3, 1, rng)])
    x = rng.normal(size=(64, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    opt = SGD(net.params(), lr=0.05)
    first = None
    for _ in range(200):
        loss, dpred = mse_loss(net.forward(x, train=True), y)
        first = first if first is not None else loss
        opt.zero_grad()
        net.backward(dpred)
        opt.step()
    final, _ = mse_loss(net.forward(x), y)
    assert final < 1e-3 < first


# --- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = make_rng()
    net, x = net_batchnorm(rng)
    net.forward(x, train=True)  # move the running statistics off their init
    before = [v.copy() for v in net.variables()]
    path = tmp_path / "model.npz"
    save_checkpoint(net, path, config={"arch": "toy", "n": 3})

    for v in net.variables():
        v += 99.0
    config = load_checkpoint(net, path)
    assert config == {"arch": "toy", "n": 3}
    for restored, original in zip(net.variables(), before):
        np.testing.assert_array_equal(restored, original)


def test_checkpoint_includes_batchnorm_running_stats():
    bn = BatchNorm(2)
    assert len(bn.variables()) == 4  # gamma, beta, running mean, running var


def test_read_config_without_network(tmp_path):
    rng = make_rng()
    net, _ = net_dense(rng)
    path = tmp_path / "model.npz"
    save_checkpoint(net, path, config={"k": 1})
    assert read_config(path) == {"k": 1}


def test_checkpoint_missing_file(tmp_path):
    net, _ = net_dense(make_rng())
    with pytest.raises(CheckpointError, match="no checkpoint"):
        load_checkpoint(net, tmp_path / "absent.npz")
    with pytest.raises(CheckpointError, match="no checkpoint"):
        read_config(tmp_path / "absent.npz")


def test_checkpoint_rejects_wrong_architecture(tmp_path):
    rng = make_rng()
    net, _ = net_dense(rng)
    path = tmp_path / "model.npz"
    save_checkpoint(net, path)

    other = Sequential([Dense(5, 4, rng)])  # same count, different shape
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(other, path)

    bigger = Sequential([Dense(5, 3, rng), Dense(3, 2, rng)])
    with pytest.raises(CheckpointError, match="arrays"):
        load_checkpoint(bigger, path)


def test_checkpoint_rejects_unknown_version(tmp_path):
    import json

    path = tmp_path / "model.npz"
    np.savez(path, version=np.array(999), config=np.array(json.dumps({})))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(Sequential([]), path)
