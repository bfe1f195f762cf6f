"""Bidirectional LSTM written directly in numpy: forward pass, Euclidean loss,
backpropagation through time, RMSProp and model persistence.

Vectors are rows: a gate pre-activation is ``x @ W_x + h @ W_h + b`` with the
gate blocks laid out as ``[input, forget, candidate, output]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio

log = logging.getLogger(__name__)

MODEL_MAGIC = b"BCRNNMDL"
PARAM_NAMES = (
    "fwd.W_x",
    "fwd.W_h",
    "fwd.b",
    "bwd.W_x",
    "bwd.W_h",
    "bwd.b",
    "W_fy",
    "W_by",
    "b_y",
)


class NumericalError(ArithmeticError):
    """Raised when training produces a non-finite loss or parameter."""


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass
class LstmParams:
    W_x: np.ndarray  # (input_dim, 4 * hidden)
    W_h: np.ndarray  # (hidden, 4 * hidden)
    b: np.ndarray  # (4 * hidden,)

    def __post_init__(self):
        d, g = self.W_x.shape
        if g % 4 or self.W_h.shape != (g // 4, g) or self.b.shape != (g,):
            raise ValueError(
                f"inconsistent LSTM shapes W_x={self.W_x.shape} W_h={self.W_h.shape} b={self.b.shape}"
            )

    @property
    def hidden(self):
        return self.W_h.shape[0]

    @property
    def input_dim(self):
        return self.W_x.shape[0]


@dataclass
class BiLstmModel:
    fwd: LstmParams
    bwd: LstmParams
    W_fy: np.ndarray  # (hidden, output_dim)
    W_by: np.ndarray  # (hidden, output_dim)
    b_y: np.ndarray  # (output_dim,)
    # bumped by every in-place update so forward caches can detect staleness
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        h = self.fwd.hidden
        o = self.b_y.shape[0]
        if (
            self.bwd.hidden != h
            or self.bwd.input_dim != self.fwd.input_dim
            or self.W_fy.shape != (h, o)
            or self.W_by.shape != (h, o)
        ):
            raise ValueError("inconsistent BiLSTM parameter shapes")

    @property
    def input_dim(self):
        return self.fwd.input_dim

    @property
    def hidden(self):
        return self.fwd.hidden

    @property
    def output_dim(self):
        return self.b_y.shape[0]

    def params(self):
        """Parameter arrays keyed by block name, in persistence order."""
        return {
            "fwd.W_x": self.fwd.W_x,
            "fwd.W_h": self.fwd.W_h,
            "fwd.b": self.fwd.b,
            "bwd.W_x": self.bwd.W_x,
            "bwd.W_h": self.bwd.W_h,
            "bwd.b": self.bwd.b,
            "W_fy": self.W_fy,
            "W_by": self.W_by,
            "b_y": self.b_y,
        }

    @classmethod
    def from_blocks(cls, blocks):
        b = [np.array(blocks[name], dtype=np.float64) for name in PARAM_NAMES]
        return cls(LstmParams(b[0], b[1], b[2]), LstmParams(b[3], b[4], b[5]), b[6], b[7], b[8])

    def copy(self):
        return BiLstmModel.from_blocks(self.params())

    def zeros_like(self):
        return BiLstmModel.from_blocks({k: np.zeros_like(v) for k, v in self.params().items()})

    def n_params(self):
        return sum(v.size for v in self.params().values())


def zero_bilstm(input_dim, hidden, output_dim):
    g = 4 * hidden
    return BiLstmModel(
        LstmParams(np.zeros((input_dim, g)), np.zeros((hidden, g)), np.zeros(g)),
        LstmParams(np.zeros((input_dim, g)), np.zeros((hidden, g)), np.zeros(g)),
        np.zeros((hidden, output_dim)),
        np.zeros((hidden, output_dim)),
        np.zeros(output_dim),
    )


def init_gaussian(shape, std=0.01, seed=0):
    """I.i.d. zero-mean Gaussian array; ``seed`` may be an int or a Generator."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(0.0, std, size=shape)


def init_bilstm(input_dim, hidden, output_dim, std=0.01, seed=0):
    """Gaussian-initialised BiLSTM; blocks are drawn in `PARAM_NAMES` order."""
    if hidden < 1 or input_dim < 1 or output_dim < 1:
        raise ValueError("all dimensions must be >= 1")
    shapes = zero_bilstm(input_dim, hidden, output_dim).params()
    rng = np.random.default_rng(seed)
    return BiLstmModel.from_blocks({k: init_gaussian(v.shape, std, rng) for k, v in shapes.items()})


# -- reference recurrences -------------------------------------------------


def rnn_cell(W_xh, W_hh, b_h, x_t, h_prev, act=np.tanh):
    """Plain recurrent step ``h_t = act(x W_xh + h_prev W_hh + b_h)``; kept as
    a reference for tests, never trained."""
    return act(x_t @ W_xh + h_prev @ W_hh + b_h)


def rnn_output(W_hy, b_y, h_t):
    return h_t @ W_hy + b_y


def lstm_cell(params, x_t, h_prev, c_prev):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden or c_prev.shape[-1] != params.hidden:
        raise ValueError(
            f"lstm_cell dims: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs "
            f"input_dim {params.input_dim}, hidden {params.hidden}"
        )
    H = params.hidden
    a = x_t @ params.W_x + h_prev @ params.W_h + params.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H : 2 * H])
    g = np.tanh(a[..., 2 * H : 3 * H])
    o = sigmoid(a[..., 3 * H :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


# -- sequence passes ---------------------------------------------------------


def lstm_sequence(params, X):
    """Run one LSTM stream over the rows of ``X`` from zero initial state.

    Returns the hidden states ``(T, hidden)`` and a cache for `lstm_sequence_backward`.
    """
    T = X.shape[0]
    H = params.hidden
    pre = X @ params.W_x + params.b
    gates = np.empty((T, 4 * H))
    Hs = np.empty((T + 1, H))
    Cs = np.empty((T + 1, H))
    tanhC = np.empty((T, H))
    Hs[0] = 0.0
    Cs[0] = 0.0
    for t in range(T):
        a = pre[t] + Hs[t] @ params.W_h
        z = gates[t]
        z[: 2 * H] = sigmoid(a[: 2 * H])
        z[2 * H : 3 * H] = np.tanh(a[2 * H : 3 * H])
        z[3 * H :] = sigmoid(a[3 * H :])
        Cs[t + 1] = z[H : 2 * H] * Cs[t] + z[:H] * z[2 * H : 3 * H]
        tanhC[t] = np.tanh(Cs[t + 1])
        Hs[t + 1] = z[3 * H :] * tanhC[t]
    return Hs[1:], (X, gates, Hs, Cs, tanhC)


def lstm_sequence_backward(params, cache, dH):
    """BPTT through one stream given the loss gradient w.r.t. each hidden state."""
    X, gates, Hs, Cs, tanhC = cache
    T = X.shape[0]
    H = params.hidden
    dA = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    W_hT = params.W_h.T
    for t in range(T - 1, -1, -1):
        i, f, g, o = gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :]
        dh = dH[t] + dh_next
        tc = tanhC[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = dA[t]
        da[:H] = dc * g * i * (1.0 - i)
        da[H : 2 * H] = dc * Cs[t] * f * (1.0 - f)
        da[2 * H : 3 * H] = dc * i * (1.0 - g * g)
        da[3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ W_hT
    return LstmParams(X.T @ dA, Hs[:-1].T @ dA, dA.sum(axis=0))


@dataclass
class BiLstmCache:
    model: BiLstmModel
    version: int
    fwd: tuple
    bwd: tuple
    Hf: np.ndarray
    Hb: np.ndarray
    Y: np.ndarray


def bilstm_forward(model, seq):
    """Forward pass over a sequence of input vectors (array ``(T, input_dim)``).

    Returns outputs ``(T, output_dim)`` and the activation cache.
    """
    X = np.asarray(seq, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("bilstm_forward needs a non-empty sequence of vectors")
    if X.shape[1] != model.input_dim:
        raise ValueError(f"input vectors have length {X.shape[1]}, model expects {model.input_dim}")
    Hf, cache_f = lstm_sequence(model.fwd, X)
    Hb_rev, cache_b = lstm_sequence(model.bwd, X[::-1])
    Hb = Hb_rev[::-1]
    Y = Hf @ model.W_fy + Hb @ model.W_by + model.b_y
    return Y, BiLstmCache(model, model.version, cache_f, cache_b, Hf, Hb, Y)


def euclidean_loss(pred, label):
    """``1/(2T) * sum_t ||pred_t - label_t||^2``."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape or pred.ndim != 2:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs label {label.shape}")
    diff = pred - label
    return 0.5 * float(np.vdot(diff, diff)) / pred.shape[0]


def bilstm_backward(model, cache, label):
    """Exact gradient of `euclidean_loss` w.r.t. every parameter, as a model-shaped container."""
    if cache.model is not model or cache.version != model.version:
        raise RuntimeError("stale forward cache: model changed since bilstm_forward")
    label = np.asarray(label, dtype=np.float64)
    if label.shape != cache.Y.shape:
        raise ValueError(f"label shape {label.shape} != output shape {cache.Y.shape}")
    dY = (cache.Y - label) / label.shape[0]
    dHf = dY @ model.W_fy.T
    dHb = dY @ model.W_by.T
    g_fwd = lstm_sequence_backward(model.fwd, cache.fwd, dHf)
    g_bwd = lstm_sequence_backward(model.bwd, cache.bwd, dHb[::-1])
    return BiLstmModel(g_fwd, g_bwd, cache.Hf.T @ dY, cache.Hb.T @ dY, dY.sum(axis=0))


def clip_global_norm(grads, max_norm):
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    blocks = grads.params().values()
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in blocks)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in blocks:
            g *= scale
    return norm


# -- optimisation -------------------------------------------------------------


@dataclass
class RmspropState:
    acc: dict
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8

    @classmethod
    def for_model(cls, model, learning_rate=0.001, decay=0.9, epsilon=1e-8):
        return cls({k: np.zeros_like(v) for k, v in model.params().items()}, learning_rate, decay, epsilon)


def rmsprop_step(model, grads, state):
    """One in-place RMSProp update; returns ``(model, state)``."""
    lr, rho, eps = state.learning_rate, state.decay, state.epsilon
    gparams = grads.params()
    for name, theta in model.params().items():
        g = gparams[name]
        acc = state.acc[name]
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        tmp = g * g
        tmp *= 1.0 - rho
        acc *= rho
        acc += tmp
        np.sqrt(acc, out=tmp)
        tmp += eps
        np.divide(g, tmp, out=tmp)
        tmp *= lr
        theta -= tmp
    model.version += 1
    return model, state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    clip_norm: float = 5.0


@dataclass(frozen=True)
class LossReport:
    epoch: int
    mean_loss: float


def train_bilstm(model, dataset, epochs, config=TrainConfig(), seed=0, state=None, on_epoch=None):
    """Per-sample RMSProp training over ``(input, label)`` sequence pairs.

    ``dataset`` items are ``(X, Y)`` arrays of shape ``(T, input_dim)`` and
    ``(T, output_dim)`` (`BandSequence` objects are accepted too). Samples are
    visited in a seeded random order each epoch. Mutates and returns ``model``
    together with one `LossReport` per epoch, the mean pre-update loss.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    pairs = [(_as_matrix(x), _as_matrix(y)) for x, y in dataset]
    for X, Y in pairs:
        if X.shape[1] != model.input_dim or Y.shape[1] != model.output_dim or X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"sample shapes {X.shape}/{Y.shape} incompatible with model "
                f"({model.input_dim} -> {model.output_dim})"
            )
    if state is None:
        state = RmspropState.for_model(model, config.learning_rate, config.decay, config.epsilon)
    rng = np.random.default_rng(seed)
    reports = []
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in rng.permutation(len(pairs)):
            X, Y = pairs[idx]
            out, cache = bilstm_forward(model, X)
            total += euclidean_loss(out, Y)
            grads = bilstm_backward(model, cache, Y)
            norm = clip_global_norm(grads, config.clip_norm)
            if not np.isfinite(norm):
                raise NumericalError(f"non-finite gradient norm at epoch {epoch}")
            rmsprop_step(model, grads, state)
        mean = total / len(pairs)
        if not np.isfinite(mean):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        reports.append(LossReport(epoch, mean))
        log.info("epoch %d mean loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(reports[-1])
    return model, reports


def _as_matrix(seq):
    bands = getattr(seq, "bands", seq)
    return np.asarray(bands, dtype=np.float64)


# -- gradient verification -----------------------------------------------------


def finite_difference_grads(model, X, Y, step=1e-5):
    """Central-difference gradient of the loss w.r.t. every parameter entry."""
    grads = {}
    for name, theta in model.params().items():
        g = np.empty_like(theta)
        flat = theta.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            plus = euclidean_loss(bilstm_forward(model, X)[0], Y)
            flat[k] = orig - step
            minus = euclidean_loss(bilstm_forward(model, X)[0], Y)
            flat[k] = orig
            gflat[k] = (plus - minus) / (2.0 * step)
        grads[name] = g
    return grads


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@dataclass
class GradCheckReport:
    errors: dict  # block name -> max relative error
    n_params: int

    @property
    def max_error(self):
        return max(self.errors.values())

    @property
    def worst_block(self):
        return max(self.errors, key=self.errors.get)


def gradient_check(input_dim=3, hidden=4, output_dim=3, T=5, seed=0, step=1e-5, corrupt=None):
    """Compare BPTT gradients with central differences on a random small net.

    ``corrupt`` names a parameter block whose analytic gradient is perturbed
    before comparison (negative control).
    """
    rng = np.random.default_rng(seed)
    model = init_bilstm(input_dim, hidden, output_dim, std=0.5, seed=rng)
    X = rng.normal(size=(T, input_dim))
    Y = rng.normal(size=(T, output_dim))
    out, cache = bilstm_forward(model, X)
    analytic = bilstm_backward(model, cache, Y).params()
    if corrupt is not None:
        if corrupt not in analytic:
            raise ValueError(f"unknown parameter block {corrupt!r}")
        analytic[corrupt] = analytic[corrupt] * 1.01 + 1e-3
    numeric = finite_difference_grads(model, X, Y, step)
    errors = {name: float(relative_error(analytic[name], numeric[name]).max()) for name in PARAM_NAMES}
    return GradCheckReport(errors, model.n_params())


# -- persistence -----------------------------------------------------------------


def _model_shapes(header):
    d, h, o = header
    g = 4 * h
    return [(d, g), (h, g), (g,), (d, g), (h, g), (g,), (h, o), (h, o), (o,)]


def save_bilstm(path, model, meta=None):
    """Binary parameter container plus a ``<path>.json`` sidecar with ``meta``."""
    path = Path(path)
    params = model.params()
    fileio.write_container(
        path,
        MODEL_MAGIC,
        (model.input_dim, model.hidden, model.output_dim),
        [params[name] for name in PARAM_NAMES],
    )
    sidecar = {"format": "bilstm", "block_order": list(PARAM_NAMES), **(meta or {})}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_bilstm(path):
    _, blocks = fileio.read_container(path, MODEL_MAGIC, _model_shapes)
    return BiLstmModel.from_blocks(dict(zip(PARAM_NAMES, blocks)))
