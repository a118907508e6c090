"""Attention LSTM encoder-decoder trained on majority-class series.

The encoder is two stacked LSTM layers (outer width ``hidden_outer``, inner
width ``hidden_inner``). The decoder mirrors it: its first layer is seeded
with the encoder's inner final state and its second with the encoder's outer
final state. At every decode step each dynamic feature ``j`` gets its own
soft attention over the encoder's top-layer states::

    e[j, t]  = tanh(U[j] . s_prev + W[j] . H[t] + b[j])
    alpha[j] = softmax_t(e[j])
    ctx[j]   = sum_t alpha[j, t] H[t]

where ``s_prev`` is the previous hidden state of the decoder's outer layer.
The concatenated feature contexts are the decoder input; a linear map
projects the outer decoder state back to the feature space.

All gradients are derived by hand (BPTT through decoder, attention and
encoder) and work on batches of patients at once.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, InputContractError, TrainingError
from .numerics import ACTIVATIONS, Adam, glorot_init, make_rng, sigmoid

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# -- configuration ----------------------------------------------------------


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 50
    lr: float = 0.001
    dropout: float = 0.5
    seed: int = 0
    holdout_fraction: float = 0.1
    batch_size: int = 32
    hidden_outer: int = 0  # 0 -> 2 x n_features
    hidden_inner: int = 0  # 0 -> n_features
    cell_activation: str = "tanh"

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.cell_activation not in ("tanh", "relu"):
            raise ValueError("cell_activation must be 'tanh' or 'relu'")


# -- parameters -------------------------------------------------------------


@dataclass
class Autoencoder:
    """Parameter container. ``params`` maps names to float64 arrays."""

    n_features: int
    hidden_outer: int
    hidden_inner: int
    dropout: float = 0.5
    cell_activation: str = "tanh"
    params: dict = field(default_factory=dict)

    @property
    def layer_names(self):
        return ("enc1", "enc2", "dec1", "dec2")

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.n_features, self.hidden_outer, self.hidden_inner,
                           self.dropout, self.cell_activation,
                           {k: v.copy() for k, v in self.params.items()})

    def layer(self, name):
        p = self.params
        return p[name + "_Wx"], p[name + "_Wh"], p[name + "_b"]


def init_autoencoder(n_features: int, rng: np.random.Generator, hidden_outer: int = 0,
                     hidden_inner: int = 0, dropout: float = 0.5,
                     cell_activation: str = "tanh") -> Autoencoder:
    """Glorot weights, zero biases, forget-gate bias 1."""
    v = n_features
    h1 = hidden_outer or 2 * v
    h2 = hidden_inner or v
    shapes = {
        "enc1": (v, h1),
        "enc2": (h1, h2),
        "dec1": (v * h2, h2),
        "dec2": (h2, h1),
    }
    params = {}
    for name, (d, h) in shapes.items():
        params[name + "_Wx"] = glorot_init(rng, 4 * h, d)
        params[name + "_Wh"] = glorot_init(rng, 4 * h, h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params[name + "_b"] = b
    params["att_U"] = glorot_init(rng, v, h1)
    params["att_W"] = glorot_init(rng, v, h2)
    params["att_b"] = np.zeros(v)
    params["out_W"] = glorot_init(rng, h1, v)
    params["out_b"] = np.zeros(v)
    return Autoencoder(v, h1, h2, dropout, cell_activation, params)


# -- LSTM cell --------------------------------------------------------------


def _cell_forward(x, h_prev, c_prev, Wx, Wh, b, act):
    f_act = ACTIVATIONS[act][0]
    n = Wh.shape[1]
    z = x @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[..., :n])
    f = sigmoid(z[..., n:2 * n])
    g = f_act(z[..., 2 * n:3 * n])
    o = sigmoid(z[..., 3 * n:])
    c = f * c_prev + i * g
    ac = f_act(c)
    h = o * ac
    cache = (x, h_prev, c_prev, z, i, f, g, o, c, ac)
    return h, c, cache


def _cell_backward(dh, dc, cache, Wx, Wh, grads, prefix, act):
    x, h_prev, c_prev, z, i, f, g, o, c, ac = cache
    d_act = ACTIVATIONS[act][1]
    n = Wh.shape[1]
    dc_t = dc + dh * o * d_act(c)
    dz = np.empty_like(z)
    dz[:, :n] = dc_t * g * i * (1.0 - i)
    dz[:, n:2 * n] = dc_t * c_prev * f * (1.0 - f)
    dz[:, 2 * n:3 * n] = dc_t * i * d_act(z[:, 2 * n:3 * n])
    dz[:, 3 * n:] = dh * ac * o * (1.0 - o)
    grads[prefix + "_Wx"] += dz.T @ x
    grads[prefix + "_Wh"] += dz.T @ h_prev
    grads[prefix + "_b"] += dz.sum(axis=0)
    return dz @ Wx, dz @ Wh, dc_t * f


def lstm_cell(x_t, h_prev, c_prev, Wx, Wh, b, activation: str = "tanh"):
    """One LSTM step. Gate rows are ordered input, forget, candidate, output.

    Works on single vectors or on batches (leading axis).
    """
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    n = Wh.shape[1]
    if Wx.shape != (4 * n, x_t.shape[-1]) or Wh.shape != (4 * n, n) or b.shape != (4 * n,) \
            or h_prev.shape[-1] != n or c_prev.shape[-1] != n:
        raise DimensionError(
            f"lstm_cell shapes: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"Wx {Wx.shape}, Wh {Wh.shape}, b {b.shape}"
        )
    h, c, _ = _cell_forward(x_t, h_prev, c_prev, Wx, Wh, b, activation)
    return h, c


# -- forward pass -----------------------------------------------------------


def _as_batch(series):
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise DimensionError(f"expected T x v or B x T x v, got shape {x.shape}")
    return x, False


def _dropout_masks(model, batch, rng):
    if rng is None or model.dropout <= 0:
        return None, None
    keep = 1.0 - model.dropout
    m1 = (rng.random((batch, model.hidden_outer)) < keep) / keep
    m2 = (rng.random((batch, model.hidden_inner)) < keep) / keep
    return m1, m2


def _encode(model, X, mask_enc):
    B, T, _ = X.shape
    act = model.cell_activation
    W1 = model.layer("enc1")
    W2 = model.layer("enc2")
    dt = np.result_type(X, W1[0])
    h1 = np.zeros((B, model.hidden_outer), dtype=dt)
    c1 = np.zeros_like(h1)
    h2 = np.zeros((B, model.hidden_inner), dtype=dt)
    c2 = np.zeros_like(h2)
    H = np.empty((B, T, model.hidden_inner), dtype=dt)
    caches = []
    for t in range(T):
        h1, c1, k1 = _cell_forward(X[:, t], h1, c1, *W1, act)
        x2 = h1 * mask_enc if mask_enc is not None else h1
        h2, c2, k2 = _cell_forward(x2, h2, c2, *W2, act)
        H[:, t] = h2
        caches.append((k1, k2))
    return H, (h1, c1), (h2, c2), caches


def _attend(model, H, s_prev, keys=None):
    p = model.params
    if keys is None:
        keys = H @ p["att_W"].T  # B x T x v
    pre = keys.transpose(0, 2, 1) + (s_prev @ p["att_U"].T)[:, :, None] + p["att_b"][None, :, None]
    e = np.tanh(pre)  # B x v x T
    z = np.exp(e - e.max(axis=2, keepdims=True))
    alpha = z / z.sum(axis=2, keepdims=True)
    ctx = alpha @ H  # B x v x h2
    return alpha, ctx, e


def _forward(model, X, rng=None):
    B, T, v = X.shape
    act = model.cell_activation
    m_enc, m_dec = _dropout_masks(model, B, rng)
    H, final1, final2, enc_caches = _encode(model, X, m_enc)
    p = model.params
    keys = H @ p["att_W"].T
    D1 = model.layer("dec1")
    D2 = model.layer("dec2")
    ha, ca = final2
    hb, cb = final1
    Y = np.empty((B, T, v), dtype=H.dtype)
    alphas = np.empty((B, T, v, T), dtype=H.dtype)
    dec_caches = []
    for t in range(T):
        s_prev = hb
        alpha, ctx, e = _attend(model, H, s_prev, keys)
        ha, ca, ka = _cell_forward(ctx.reshape(B, -1), ha, ca, *D1, act)
        xb = ha * m_dec if m_dec is not None else ha
        hb, cb, kb = _cell_forward(xb, hb, cb, *D2, act)
        Y[:, t] = hb @ p["out_W"] + p["out_b"]
        alphas[:, t] = alpha
        dec_caches.append((s_prev, alpha, ctx, e, ka, kb))
    cache = (X, H, m_enc, m_dec, enc_caches, dec_caches)
    return Y, alphas, cache


def _backward(model, dY, cache):
    X, H, m_enc, m_dec, enc_caches, dec_caches = cache
    B, T, v = X.shape
    act = model.cell_activation
    p = model.params
    grads = {k: np.zeros_like(val) for k, val in p.items()}
    D1 = model.layer("dec1")
    D2 = model.layer("dec2")
    h1, h2 = model.hidden_outer, model.hidden_inner

    dH = np.zeros_like(H)
    dha = np.zeros((B, h2))
    dca = np.zeros((B, h2))
    dhb = np.zeros((B, h1))
    dcb = np.zeros((B, h1))
    for t in reversed(range(T)):
        s_prev, alpha, ctx, e, ka, kb = dec_caches[t]
        grads["out_W"] += _h_of(kb).T @ dY[:, t]
        grads["out_b"] += dY[:, t].sum(axis=0)
        dhb = dhb + dY[:, t] @ p["out_W"].T
        dxb, dhb, dcb = _cell_backward(dhb, dcb, kb, *D2[:2], grads, "dec2", act)
        if m_dec is not None:
            dxb = dxb * m_dec
        dha = dha + dxb
        dctx_flat, dha, dca = _cell_backward(dha, dca, ka, *D1[:2], grads, "dec1", act)
        dctx = dctx_flat.reshape(B, v, h2)
        # attention
        dalpha = dctx @ H.transpose(0, 2, 1)  # B x v x T
        dH += alpha.transpose(0, 2, 1) @ dctx
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
        dpre = de * (1.0 - e * e)  # B x v x T
        dq = dpre.sum(axis=2)  # B x v
        grads["att_U"] += dq.T @ s_prev
        grads["att_b"] += dq.sum(axis=0)
        dhb = dhb + dq @ p["att_U"]
        # keys[b, t, j] = H[b, t] . W[j]
        dkeys = dpre.transpose(0, 2, 1)  # B x T x v
        grads["att_W"] += np.einsum("btj,bth->jh", dkeys, H)
        dH += dkeys @ p["att_W"]

    # decoder initial states are the encoder's final states
    E1 = model.layer("enc1")
    E2 = model.layer("enc2")
    dh1, dc1 = dhb, dcb
    dh2, dc2 = dha, dca
    for t in reversed(range(T)):
        k1, k2 = enc_caches[t]
        dh2 = dh2 + dH[:, t]
        dx2, dh2, dc2 = _cell_backward(dh2, dc2, k2, *E2[:2], grads, "enc2", act)
        if m_enc is not None:
            dx2 = dx2 * m_enc
        dh1 = dh1 + dx2
        _, dh1, dc1 = _cell_backward(dh1, dc1, k1, *E1[:2], grads, "enc1", act)
    return grads


def _h_of(cell_cache):
    # h = o * act(c)
    return cell_cache[7] * cell_cache[9]


def encode(series, model: Autoencoder, rng: np.random.Generator | None = None):
    """Top-layer encoder states ``H``. Passing ``rng`` enables training-mode dropout."""
    X, single = _as_batch(series)
    m_enc, _ = _dropout_masks(model, X.shape[0], rng)
    H = _encode(model, X, m_enc)[0]
    return H[0] if single else H


def attend(H, s_prev, model: Autoencoder):
    """Per-feature attention weights (v x T) and contexts (v x h) for one decoder query."""
    Hb, single = _as_batch(H)
    s = np.atleast_2d(np.asarray(s_prev, dtype=np.float64))
    alpha, ctx, _ = _attend(model, Hb, s)
    return (alpha[0], ctx[0]) if single else (alpha, ctx)


def reconstruct(series, model: Autoencoder, rng: np.random.Generator | None = None):
    """Full encode/attend/decode pass.

    Returns the reconstruction and the per-step attention tensor with shape
    ``(T_decode, v, T_encode)`` (batched inputs get a leading axis).
    """
    X, single = _as_batch(series)
    if X.shape[2] != model.n_features:
        raise DimensionError(f"model expects {model.n_features} features, got {X.shape[2]}")
    Y, alphas, _ = _forward(model, X, rng)
    return (Y[0], alphas[0]) if single else (Y, alphas)


def attention_matrix(alphas):
    """Collapse per-step attention to a T x v matrix (mean over decode steps).

    Each column is a distribution over encoder time steps.
    """
    return alphas.mean(axis=-3).swapaxes(-1, -2)


# -- loss and gradients -----------------------------------------------------


def reconstruction_loss(X, X_hat) -> float:
    """Square root of the summed squared row residuals (Frobenius norm)."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise DimensionError(f"shape mismatch {X.shape} vs {X_hat.shape}")
    return float(np.sqrt(np.sum((X - X_hat) ** 2)))


def _batch_losses(X, Y):
    return np.sqrt(((Y - X) ** 2).sum(axis=(1, 2)))


def loss_and_gradients(model: Autoencoder, batch, rng: np.random.Generator | None = None):
    """Mean per-patient reconstruction loss over ``batch`` and its exact gradient."""
    X, _ = _as_batch(batch)
    if X.shape[0] == 0:
        raise TrainingError("empty batch")
    Y, _, cache = _forward(model, X, rng)
    J = _batch_losses(X, Y)
    safe = np.where(J > 0, J, 1.0)
    coef = np.where(J > 0, 1.0 / (safe * X.shape[0]), 0.0)
    dY = (Y - X) * coef[:, None, None]
    return float(J.mean()), _backward(model, dY, cache)


def gradients(model: Autoencoder, batch, rng=None) -> dict:
    return loss_and_gradients(model, batch, rng)[1]


# -- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: Autoencoder
    log: list
    best_epoch: int
    trained_ids: tuple = ()
    stopped_early: bool = False


def _mean_loss(model, X, batch_size=256):
    total = 0.0
    for s in range(0, len(X), batch_size):
        Y, _, _ = _forward(model, X[s:s + batch_size])
        total += _batch_losses(X[s:s + batch_size], Y).sum()
    return total / len(X)


def train(neg_series, config: TrainConfig | None = None, ids=None) -> TrainResult:
    """Fit the autoencoder on majority-class series only.

    An internal holdout (``config.holdout_fraction`` of the input) drives early
    stopping; the returned model is the one from the best holdout epoch.
    ``ids`` are carried through as provenance of the training rows.
    """
    config = config or TrainConfig()
    X = np.asarray(neg_series, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise TrainingError("training needs a non-empty N x T x v array")
    rng = make_rng(config.seed)
    model = init_autoencoder(X.shape[2], rng, config.hidden_outer, config.hidden_inner,
                             config.dropout, config.cell_activation)
    n = len(X)
    order = rng.permutation(n)
    n_hold = int(round(config.holdout_fraction * n)) if n > 1 else 0
    n_hold = min(max(n_hold, 1 if config.holdout_fraction > 0 and n > 1 else 0), n - 1)
    hold_idx, fit_idx = order[:n_hold], order[n_hold:]
    X_fit, X_hold = X[fit_idx], X[hold_idx]
    monitor = X_hold if n_hold else X_fit

    opt = Adam(lr=config.lr)
    best = np.inf
    best_model = model.copy()
    best_epoch = 0
    history = []
    since_best = 0
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(X_fit))
        train_loss = 0.0
        for s in range(0, len(perm), config.batch_size):
            idx = perm[s:s + config.batch_size]
            loss, grads = loss_and_gradients(model, X_fit[idx], rng if model.dropout > 0 else None)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            opt.update(model.params, grads)
            train_loss += loss * len(idx)
        train_loss /= len(X_fit)
        mon = _mean_loss(model, monitor)
        if not np.isfinite(mon):
            raise DivergenceError(epoch, mon)
        if mon < best:
            best, best_model, best_epoch, since_best = mon, model.copy(), epoch, 0
        else:
            since_best += 1
        history.append({"epoch": epoch, "train_loss": train_loss, "holdout_loss": mon,
                        "best_holdout_loss": best})
        if since_best >= config.patience:
            stopped = True
            break
    log.info("autoencoder: best epoch %d of %d, holdout loss %.5g", best_epoch, len(history), best)
    trained = tuple(ids[i] for i in fit_idx) if ids is not None else ()
    return TrainResult(best_model, history, best_epoch, trained, stopped)


# -- scoring ----------------------------------------------------------------


@dataclass
class DynamicScores:
    """Per-patient reconstruction error and T x v attention matrix."""

    error: np.ndarray
    attention: np.ndarray

    def __len__(self):
        return len(self.error)


SCALED_LOW, SCALED_HIGH = -0.01, 1.01


def score(model: Autoencoder, series_set, batch_size: int = 256) -> DynamicScores:
    X, _ = _as_batch(series_set)
    if X.size and (X.min() < SCALED_LOW or X.max() > SCALED_HIGH):
        raise InputContractError(
            f"series values span [{X.min():.4g}, {X.max():.4g}]; expected min-max scaled input"
        )
    errors, attn = [], []
    for s in range(0, len(X), batch_size):
        Y, alphas, _ = _forward(model, X[s:s + batch_size])
        errors.append(_batch_losses(X[s:s + batch_size], Y))
        attn.append(attention_matrix(alphas))
    if not errors:
        return DynamicScores(np.zeros(0), np.zeros((0,) + X.shape[1:]))
    return DynamicScores(np.concatenate(errors), np.concatenate(attn))


# -- checkpoints ------------------------------------------------------------


def save_model(path, model: Autoencoder, config: TrainConfig | None = None, extra=None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_features": model.n_features,
        "hidden_outer": model.hidden_outer,
        "hidden_inner": model.hidden_inner,
        "dropout": model.dropout,
        "cell_activation": model.cell_activation,
        "config": asdict(config) if config is not None else None,
        "extra": extra,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **model.params)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path):
    """Return ``(model, meta)`` from a checkpoint written by :func:`save_model`."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[k].copy() for k in data.files if k != "__meta__"}
    model = Autoencoder(meta["n_features"], meta["hidden_outer"], meta["hidden_inner"],
                        meta["dropout"], meta["cell_activation"], params)
    return model, meta
