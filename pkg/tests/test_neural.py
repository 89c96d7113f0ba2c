import numpy as np
import pytest

from cfpower.neural import (AdamState, DenseNetwork, Layer, Normalizer, TrainConfig, TrainingDiverged,
                            adam_step, backward, build_centralized, build_decentralized, build_network,
                            forward, load_model, loss_value, project_powers, save_model, train)


def test_centralized_counts():
    net = build_centralized(5, 9)
    assert [l.n_params for l in net.layers] == [5888, 66048, 131328, 32896, 5805]
    assert net.n_params == 241965
    assert net.input_dim == net.output_dim == 45
    assert [l.activation for l in net.layers] == ["elu", "elu", "sigmoid", "sigmoid", "relu"]
    # 1*128+128 + 128*512+512 + 512*256+256 + 256*128+128 + 128*1+1
    assert build_centralized(1, 1).n_params == 256 + 66048 + 131328 + 32896 + 129 == 230657


def test_decentralized_counts():
    net = build_decentralized(5)
    assert [l.n_params for l in net.layers] == [96, 1088, 2080, 528, 85]
    assert net.n_params == 3877 and net.output_dim == 5
    assert build_decentralized(2).n_params == 3778


def test_layer_chain_validated():
    with pytest.raises(ValueError):
        DenseNetwork([Layer(np.zeros((3, 2)), np.zeros(3), "relu"), Layer(np.zeros((1, 4)), np.zeros(1), "relu")])
    with pytest.raises(ValueError):
        DenseNetwork([Layer(np.zeros((1, 1)), np.zeros(1), "tanh")])


def _eye_relu():
    return DenseNetwork([Layer(np.eye(2), np.zeros(2), "relu")])


def test_forward_examples():
    assert np.array_equal(forward(_eye_relu(), np.array([-1.0, 2.0])), [0.0, 2.0])
    net = build_centralized(2, 2)
    for layer in net.layers:
        layer.W[:] = 0
        layer.b[:] = 0
    assert np.all(forward(net, np.ones((3, 4))) == 0)
    with pytest.raises(ValueError):
        forward(net, np.ones(3))


def test_activation_definitions():
    elu = DenseNetwork([Layer(np.eye(1), np.zeros(1), "elu")])
    assert forward(elu, np.array([1.0]))[0] == 1.0
    assert forward(elu, np.array([-1e3]))[0] == -1.0
    sig = DenseNetwork([Layer(np.eye(1), np.zeros(1), "sigmoid")])
    assert forward(sig, np.array([0.0]))[0] == 0.5
    assert forward(sig, np.array([-1e4]))[0] == 0.0 and forward(sig, np.array([1e4]))[0] == 1.0


def test_elu_gradient_at_zero():
    # right limit 1 at z = 0, and the left slope e^z tends to the same value
    net = DenseNetwork([Layer(np.eye(1), np.zeros(1), "elu")])
    _, g = backward(net, np.array([[0.0]]), np.array([[-1.0]]))
    assert g[0][0, 0] == pytest.approx(0.0 * 2.0)  # input 0 makes the weight gradient vanish
    assert g[1][0] == pytest.approx(2.0)           # d/db (b + 1)^2 = 2 at b = 0 with slope 1
    _, g_left = backward(net, np.array([[-1e-9]]), np.array([[-1.0]]))
    assert g_left[1][0] == pytest.approx(2.0, rel=1e-8)


def test_zero_gradient_at_target():
    net = build_decentralized(3, seed=1)
    x = np.random.default_rng(0).standard_normal((4, 3))
    _, grads = backward(net, x, forward(net, x))
    assert all(np.all(g == 0) for g in grads)


def _fd_check(net, x, y, loss, picks=60, h=1e-4, seed=0):
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = backward(net, x, y, loss)
    r = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in r.choice(flat.size, size=min(picks, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + h
            up = loss_value(forward(net, x), y, loss)
            flat[j] = old - h
            down = loss_value(forward(net, x), y, loss)
            flat[j] = old
            num = (up - down) / (2 * h)
            scale = max(abs(num), abs(gflat[j]), 1e-7)
            worst = max(worst, abs(num - gflat[j]) / scale)
    return worst


def _positive_outputs(net):
    # push the relu output layer into its active region so both losses are smooth
    net.layers[-1].b[:] = 0.5 + np.abs(net.layers[-1].b)
    return net


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_gradients_match_finite_differences(loss):
    r = np.random.default_rng(4)
    net = _positive_outputs(build_network([3, 6, 5, 4, 6, 3], ["elu", "elu", "sigmoid", "sigmoid", "relu"], seed=2))
    x = r.standard_normal((5, 3))
    y = r.random((5, 3))
    assert _fd_check(net, x, y, loss, picks=200) < 1e-5


def test_adam_zero_gradient_keeps_parameters():
    net = build_decentralized(3)
    before = [p.copy() for p in net.params()]
    params = net.params()
    cfg = TrainConfig()
    adam_step(params, [np.zeros_like(p) for p in params], AdamState.zeros_like(params), cfg)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_adam_first_step_bounded():
    p = [np.array([1.0, -2.0, 3.0])]
    cfg = TrainConfig(learning_rate=0.01)
    adam_step(p, [np.array([5.0, -0.1, 1e-3])], AdamState.zeros_like(p), cfg)
    delta = p[0] - np.array([1.0, -2.0, 3.0])
    assert np.all(np.abs(delta) <= 0.01 * (1 + 1e-6))
    assert np.all(np.sign(delta) == [-1, 1, -1])


def _toy_data(n=64, seed=0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, 3))
    return x, 1.0 / (1.0 + np.exp(-x))


def test_training_is_deterministic():
    x, y = _toy_data()
    cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
    a, ha = train(build_decentralized(3, seed=1), x, y, cfg=cfg)
    b, hb = train(build_decentralized(3, seed=1), x, y, cfg=cfg)
    assert ha.train_loss == hb.train_loss
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_constant_target_is_learned():
    x, _ = _toy_data(128)
    y = np.full((128, 3), 0.3)
    net, hist = train(build_decentralized(3, seed=0), x, y, cfg=TrainConfig(epochs=200, batch_size=32, learning_rate=3e-3))
    assert hist.train_loss[-1] < 1e-4
    assert loss_value(forward(net, x), y) < 1e-4


def test_zero_learning_rate_freezes():
    x, y = _toy_data()
    net = build_decentralized(3, seed=3)
    before = [p.copy() for p in net.params()]
    _, hist = train(net, x, y, x, y, TrainConfig(epochs=3, learning_rate=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))
    assert hist.val_loss[0] == hist.val_loss[-1]


def test_single_sample_memorized():
    x, y = _toy_data(1)
    net, hist = train(build_decentralized(3, seed=0), x, y, cfg=TrainConfig(epochs=400, batch_size=1, learning_rate=3e-3))
    assert hist.train_loss[-1] < 1e-6


def test_validation_loss_improves():
    x, y = _toy_data(512)
    xv, yv = _toy_data(64, seed=1)
    _, hist = train(build_decentralized(3, seed=0), x, y, xv, yv, TrainConfig(epochs=20, batch_size=32))
    assert hist.val_loss[-1] <= hist.val_loss[0]


def test_divergence_is_reported():
    x, y = _toy_data(8)
    y[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train(build_decentralized(3), x, y, cfg=TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge")


def test_serialization_bit_exact(tmp_path):
    net = build_centralized(5, 9, seed=7)
    norm = Normalizer(np.linspace(-120, -60, 45), np.linspace(1, 3, 45), 1.0)
    path = tmp_path / "m.npz"
    save_model(path, net, norm, meta={"role": "centralized"})
    loaded, lnorm, meta = load_model(path)
    assert meta == {"role": "centralized"}
    assert all(np.array_equal(p, q) for p, q in zip(net.params(), loaded.params()))
    assert np.array_equal(lnorm.x_mean, norm.x_mean) and np.array_equal(lnorm.x_std, norm.x_std)
    x = np.random.default_rng(0).standard_normal((4, 45))
    assert np.array_equal(forward(net, x), forward(loaded, x))
    save_model(tmp_path / "again.npz", loaded, lnorm, meta=meta)
    assert (tmp_path / "again.npz").read_bytes() == path.read_bytes()


def test_project_powers_examples():
    feasible = np.array([[0.5, 0.1], [0.5, 0.2]])
    assert np.array_equal(project_powers(feasible, 1.0), feasible)
    assert np.allclose(project_powers(np.array([2.0, 0.0]), 1.0), [1.0, 0.0])
    assert np.allclose(project_powers(np.array([[np.sqrt(2)], [np.sqrt(2)]]), 1.0), np.sqrt(0.5))
    assert np.all(project_powers(np.zeros((5, 9)), 1.0) == 0)


def test_project_powers_always_feasible():
    g = np.abs(np.random.default_rng(1).standard_normal((100, 5, 9))) * 3
    out = project_powers(g, 1.0)
    assert np.all((out**2).sum(axis=-2) <= 1.0 + 1e-12)


def test_output_units_start_alive():
    net = build_centralized(5, 9, seed=3)
    last = net.layers[-1]
    worst = last.b - np.clip(-last.W, 0, None).sum(axis=1)  # smallest pre-activation over [0, 1] inputs
    assert np.all(worst > 0)
