import numpy as np
import pytest

from handmine.pretrain.encoder import EncoderModel, encoder_backward, encoder_forward, init_encoder


def test_zero_model_gives_zero_outputs(rng):
    model = init_encoder(10, (7,), 6, 4, dtype=np.float64)
    for w, b in zip(model.weights, model.biases):
        w[:] = 0
        b[:] = 0
    feat, proj, _ = encoder_forward(model, rng.normal(size=(3, 10)))
    assert np.all(feat == 0) and np.all(proj == 0)


def test_identity_layers_reproduce_input(rng):
    eye = np.eye(6)
    model = EncoderModel([eye.copy(), eye.copy()], [np.zeros(6), np.zeros(6)], "linear")
    x = rng.normal(size=(4, 6))
    feat, proj, _ = encoder_forward(model, x)
    assert np.array_equal(feat, x) and np.array_equal(proj, x)


def test_forward_matches_matmul_oracle(rng):
    model = init_encoder(12, (9, 7), 5, 4, seed=3, dtype=np.float64)
    for b in model.biases:
        b[:] = rng.normal(size=b.shape)
    x = rng.normal(size=(3, 12))
    _, proj, _ = encoder_forward(model, x)
    for i in range(3):
        h = list(x[i])
        for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
            h = [sum(h[r] * w[r, c] for r in range(w.shape[0])) + b[c] for c in range(w.shape[1])]
            if layer < len(model.weights) - 1:
                h = [np.tanh(v) for v in h]
        np.testing.assert_allclose(proj[i], h, rtol=1e-12, atol=1e-12)


def test_backward_matches_finite_differences(rng):
    model = init_encoder(5, (4,), 3, 2, seed=1, dtype=np.float64)
    x = rng.normal(size=(3, 5))
    g_out = rng.normal(size=(3, 2))

    def f():
        return float(np.sum(encoder_forward(model, x)[1] * g_out))

    _, _, tape = encoder_forward(model, x)
    grads = encoder_backward(model, tape, g_out)
    for p, g in zip(model.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-6
            up = f()
            p[idx] = old - 1e-6
            down = f()
            p[idx] = old
            assert g[idx] == pytest.approx((up - down) / 2e-6, rel=1e-6, abs=1e-9)


def test_glorot_bounds_and_zero_bias():
    model = init_encoder(100, (50,), 20, 10, seed=0)
    lim = np.sqrt(6 / 150)
    assert np.abs(model.weights[0]).max() <= lim
    assert all(np.all(b == 0) for b in model.biases)
    assert model.dtype == np.float32


def test_bad_shapes():
    with pytest.raises(ValueError):
        EncoderModel([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(ValueError):
        init_encoder(4, (3,), 3, 3)  # odd projection
    model = init_encoder(4, (3,), 3, 2)
    with pytest.raises(ValueError):
        encoder_forward(model, np.zeros((1, 5)))


def test_save_load_round_trip(tmp_path):
    model = init_encoder(8, (6,), 4, 2, seed=5)
    model.save(tmp_path / "m.npz")
    back = EncoderModel.load(tmp_path / "m.npz")
    assert back.activation == model.activation
    assert all(np.array_equal(a, b) for a, b in zip(back.params(), model.params()))
