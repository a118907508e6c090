import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kdop.dynamic_kd import (TrainConfig, attend, attention_matrix, encode, gradients,
                             init_autoencoder, load_model, loss_and_gradients, lstm_cell,
                             reconstruct, reconstruction_loss, save_model, score, train)
from kdop.errors import DimensionError, DivergenceError, InputContractError, TrainingError
from kdop.numerics import make_rng
from kdop.synth import SynthConfig, generate
from oracles import (autoencoder_forward_scalar, finite_difference_errors, lstm_cell_scalar)


def perturbed_model(seed, v=2, h1=3, h2=3, act="tanh"):
    rng = make_rng(seed)
    m = init_autoencoder(v, rng, h1, h2, 0.0, act)
    for k in m.params:
        m.params[k] = m.params[k] + 0.1 * rng.normal(size=m.params[k].shape)
    return m, rng


# -- cell ---------------------------------------------------------------------


def test_cell_zero_weights():
    h, c = lstm_cell(np.zeros(2), np.zeros(3), np.zeros(3), np.zeros((12, 2)), np.zeros((12, 3)),
                     np.zeros(12))
    assert np.all(h == 0) and np.all(c == 0)


def test_cell_forget_saturation(rng):
    b = np.zeros(12)
    b[3:6] = 50.0
    b[0:3] = -50.0
    c_prev = rng.normal(size=3)
    _, c = lstm_cell(rng.normal(size=2), rng.normal(size=3), c_prev,
                     0.1 * rng.normal(size=(12, 2)), 0.1 * rng.normal(size=(12, 3)), b)
    assert np.allclose(c, c_prev, atol=1e-12)


def test_cell_matches_scalar_oracle(rng):
    Wx, Wh, b = rng.normal(size=(12, 4)), rng.normal(size=(12, 3)), rng.normal(size=12)
    x, h0, c0 = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
    h, c = lstm_cell(x, h0, c0, Wx, Wh, b)
    ho, co = lstm_cell_scalar(x.tolist(), h0.tolist(), c0.tolist(), Wx.tolist(), Wh.tolist(), b.tolist())
    assert np.max(np.abs(h - ho)) <= 1e-12 and np.max(np.abs(c - co)) <= 1e-12


def test_cell_shape_mismatch():
    with pytest.raises(DimensionError):
        lstm_cell(np.zeros(2), np.zeros(3), np.zeros(3), np.zeros((12, 5)), np.zeros((12, 3)),
                  np.zeros(12))


# -- encoder / attention / decoder ------------------------------------------


def test_encode_single_step_is_cell_composition():
    m, rng = perturbed_model(1)
    x = rng.random((1, 2))
    H = encode(x, m)
    a, _ = lstm_cell(x[0], np.zeros(3), np.zeros(3), *m.layer("enc1"))
    b, _ = lstm_cell(a, np.zeros(3), np.zeros(3), *m.layer("enc2"))
    assert np.array_equal(H[0], b)


def test_encode_inference_is_deterministic():
    m, rng = perturbed_model(2)
    x = rng.random((5, 2))
    assert np.array_equal(encode(x, m), encode(x, m))


def test_encode_dropout_uses_seeded_masks():
    m, rng = perturbed_model(3)
    m.dropout = 0.5
    x = rng.random((4, 2))
    masks = make_rng(99)
    keep = (masks.random((1, 3)) < 0.5) / 0.5
    a = np.zeros(3); ca = np.zeros(3); b = np.zeros(3); cb = np.zeros(3)
    expected = []
    for t in range(4):
        a, ca = lstm_cell(x[t], a, ca, *m.layer("enc1"))
        b, cb = lstm_cell(a * keep[0], b, cb, *m.layer("enc2"))
        expected.append(b)
    H1 = encode(x, m, make_rng(99))
    assert np.allclose(H1, expected, atol=1e-14)
    assert np.array_equal(H1, encode(x, m, make_rng(99)))


def test_attention_uniform_on_identical_rows():
    m, rng = perturbed_model(4)
    H = np.tile(rng.normal(size=3), (6, 1))
    alpha, ctx = attend(H, rng.normal(size=3), m)
    assert np.allclose(alpha, 1 / 6, atol=1e-15)
    assert np.allclose(ctx, H[0], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (7, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)), st.integers(0, 1000))
def test_attention_normalised_and_in_hull(H, s, seed):
    m, _ = perturbed_model(seed)
    alpha, ctx = attend(H, s, m)
    assert np.all(np.abs(alpha.sum(axis=1) - 1) <= 1e-9)
    lo, hi = H.min(axis=0), H.max(axis=0)
    assert np.all(ctx >= lo - 1e-12) and np.all(ctx <= hi + 1e-12)


def test_zero_parameters_give_bias_rows():
    m, rng = perturbed_model(5)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    m.params["out_b"] = np.array([0.25, -1.5])
    Y, _ = reconstruct(rng.random((4, 2)), m)
    assert np.array_equal(Y, np.tile([0.25, -1.5], (4, 1)))


@pytest.mark.parametrize("T,v", [(1, 1), (3, 2), (5, 4)])
def test_output_shapes(T, v):
    m = init_autoencoder(v, make_rng(0))
    Y, alphas = reconstruct(np.full((T, v), 0.5), m)
    assert Y.shape == (T, v)
    assert alphas.shape == (T, v, T)
    assert attention_matrix(alphas).shape == (T, v)


def test_forward_matches_hand_unrolled_toy():
    m, rng = perturbed_model(6, v=2, h1=4, h2=2)
    X = rng.random((3, 2))
    Y, _ = reconstruct(X, m)
    p = {k: val.tolist() for k, val in m.params.items()}
    expected = np.array(autoencoder_forward_scalar(p, X.tolist()))
    assert np.max(np.abs(Y - expected)) <= 1e-10


# -- loss and gradients -----------------------------------------------------


def test_loss_examples(rng):
    X = rng.random((4, 3))
    assert reconstruction_loss(X, X) == 0.0
    assert reconstruction_loss([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    Y = rng.random((4, 3))
    total = 0.0
    for i in range(4):
        for j in range(3):
            total += (X[i, j] - Y[i, j]) ** 2
    assert abs(reconstruction_loss(X, Y) - total ** 0.5) <= 1e-12
    with pytest.raises(DimensionError):
        reconstruction_loss(X, Y[:2])


def test_gradients_match_finite_differences():
    m, rng = perturbed_model(7)
    X = rng.random((2, 4, 2))
    _, g = loss_and_gradients(m, X)
    worst = finite_difference_errors(m, X, g)
    assert set(worst) == set(m.params)
    assert max(worst.values()) <= 1e-4, worst


def test_zero_residual_gives_zero_gradient():
    m, _ = perturbed_model(8)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    m.params["out_b"] = np.array([0.3, 0.7])
    X = np.tile([0.3, 0.7], (2, 4, 1))
    loss, g = loss_and_gradients(m, X)
    assert loss == 0.0
    assert all(np.max(np.abs(val)) <= 1e-10 for val in g.values())


def test_duplicate_patient_mean_law():
    m, rng = perturbed_model(9)
    x = rng.random((1, 4, 2))
    g1 = gradients(m, x)
    g2 = gradients(m, np.concatenate([x, x]))
    for k in g1:
        assert np.allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


# -- training ---------------------------------------------------------------


def sinusoid_negatives(n, seed=0):
    cohort, truth = generate(SynthConfig(n_patients=n, positive_rate=0.1, seed=seed))
    y = cohort.label("mortality", 5)
    X = cohort.series
    lo, hi = X.min(axis=(0, 1)), X.max(axis=(0, 1))
    return (X - lo) / (hi - lo), y


def test_constant_zero_series_fit():
    X = np.zeros((40, 6, 2))
    res = train(X, TrainConfig(max_epochs=50, patience=49, lr=0.01, dropout=0.0, seed=1))
    assert len(res.log) <= 50
    assert min(e["holdout_loss"] for e in res.log) < 1e-3


def test_best_holdout_loss_is_nonincreasing():
    X, y = sinusoid_negatives(220)
    res = train(X[y == 0], TrainConfig(max_epochs=15, patience=10, seed=3))
    best = [e["best_holdout_loss"] for e in res.log]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert best[-1] < best[0]


def test_early_stop_on_plateau_returns_best_epoch():
    X = make_rng(4).random((30, 5, 2))
    ids = [f"p{i}" for i in range(30)]
    cfg = TrainConfig(max_epochs=100, patience=5, lr=1e-300, dropout=0.0, seed=2)
    res = train(X, cfg, ids)
    assert res.stopped_early and len(res.log) == 1 + cfg.patience
    assert res.best_epoch == 1
    hold = [i for i, p in enumerate(ids) if p not in set(res.trained_ids)]
    err = score(res.model, X[hold]).error.mean()
    assert err == pytest.approx(res.log[res.best_epoch - 1]["holdout_loss"], rel=1e-12)


def test_returned_model_is_best_epoch():
    X = make_rng(5).random((30, 5, 2))
    ids = [f"p{i}" for i in range(30)]
    res = train(X, TrainConfig(max_epochs=12, patience=3, lr=0.05, seed=5), ids)
    hold = [i for i, p in enumerate(ids) if p not in set(res.trained_ids)]
    best = min(e["holdout_loss"] for e in res.log)
    assert res.log[res.best_epoch - 1]["holdout_loss"] == best
    assert score(res.model, X[hold]).error.mean() == pytest.approx(best, rel=1e-12)


def test_training_is_deterministic():
    X = make_rng(6).random((20, 4, 2))
    cfg = TrainConfig(max_epochs=3, patience=2, seed=11)
    a, b = train(X, cfg), train(X, cfg)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])


def test_training_errors():
    with pytest.raises(TrainingError):
        train(np.zeros((0, 4, 2)))
    X = np.zeros((10, 4, 2))
    X[3, 1, 0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(X, TrainConfig(max_epochs=5, patience=2, holdout_fraction=0.0, seed=0))
    assert info.value.epoch == 1
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=10)


# -- scoring and checkpoints -------------------------------------------------


def test_planted_anomaly_scores_higher():
    X, y = sinusoid_negatives(240, seed=5)
    res = train(X[y == 0], TrainConfig(max_epochs=40, patience=10, lr=0.01, seed=0))
    normal = X[y == 0][:1]
    anomaly = normal.copy()
    anomaly[0, 12:, 0] = np.linspace(0.2, 1.0, 12)
    anomaly[0, 12:, 1] = 1.0 - anomaly[0, 12:, 1]
    s = score(res.model, np.concatenate([normal, anomaly]))
    assert s.error[1] > s.error[0]


def test_score_is_deterministic_and_normalised():
    m, rng = perturbed_model(10)
    X = rng.random((3, 6, 2))
    a, b = score(m, X), score(m, X)
    assert np.array_equal(a.error, b.error) and np.array_equal(a.attention, b.attention)
    assert np.all(a.error >= 0)
    assert a.attention.shape == (3, 6, 2)
    assert np.all(np.abs(a.attention.sum(axis=1) - 1) <= 1e-9)


def test_score_rejects_unscaled_input():
    m, _ = perturbed_model(11)
    with pytest.raises(InputContractError):
        score(m, np.full((1, 3, 2), 80.0))
    score(m, np.full((1, 3, 2), 1.005))


def test_checkpoint_round_trip(tmp_path):
    m, rng = perturbed_model(12)
    cfg = TrainConfig(max_epochs=7, patience=3)
    save_model(tmp_path / "ae.npz", m, cfg, {"note": "x"})
    back, meta = load_model(tmp_path / "ae.npz")
    assert meta["config"]["max_epochs"] == 7 and meta["extra"] == {"note": "x"}
    assert sorted(back.params) == sorted(m.params)
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    X = rng.random((2, 4, 2))
    assert score(back, X).error.tobytes() == score(m, X).error.tobytes()
