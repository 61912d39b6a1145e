"""
LMMSE pre-processing and a dense (activation-free) network predictor.

Measurements are first denoised with a linear MMSE filter built from a
sampled channel covariance. Windows of ``I`` denoised vectors are packed
into real vectors and mapped by an ``L``-hidden-layer dense network to the
real/imaginary parts of the next channel. The network is trained with Adam
against the denoised next-slot vector, never the true channel.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedLoss, ShapeMismatch, TooFewSamples
from .linalg import hermitian_part, hermitian_solve, pseudo_inverse, psd_project
from .scm import MeasurementTrace, PilotBlock

__all__ = [
    "LmmseContext",
    "MlpConfig",
    "MlpModel",
    "build_lmmse",
    "preprocess",
    "pack_input",
    "unpack_output",
    "init_model",
    "forward",
    "loss_and_grads",
    "train",
    "predict_mlp",
    "gradient_check",
    "windows",
]


@dataclass(frozen=True, eq=False)
class LmmseContext:
    """Sampled covariances and the precomputed LMMSE gain ``C_h psi^H (psi C_h psi^H + I)^-1``."""

    c_h: np.ndarray
    c_y: np.ndarray
    gain: np.ndarray
    pilot: PilotBlock | None = None

    @property
    def d(self):
        return self.gain.shape[0]

    @property
    def meas_dim(self):
        return self.gain.shape[1]


def _lmmse_gain(c_h, psi_bar, noise_var=1.0):
    a = hermitian_part(psi_bar @ c_h @ psi_bar.conj().T) + noise_var * np.eye(psi_bar.shape[0])
    # gain = C_h Psi^H A^{-1}  =>  gain^H = A^{-1} Psi C_h
    return hermitian_solve(a, psi_bar @ c_h).conj().T


def build_lmmse(pilot, measurements=None, n_samples=None, c_h=None, noise_var=1.0):
    """
    Build an LMMSE context from sampled measurements or a known covariance.

    Parameters
    ----------
    pilot : PilotBlock
    measurements : MeasurementTrace or array_like, optional
        Source of the sampled covariance ``C_y``.
    n_samples : int, optional
        Number of leading measurement vectors to average.
    c_h : array_like, optional
        Exact channel covariance; skips the sampled estimate when given.
    """
    psi_bar = pilot.psi_bar
    if c_h is None:
        if measurements is None:
            raise ValueError("need measurements or an exact channel covariance")
        y = measurements.y if isinstance(measurements, MeasurementTrace) else np.asarray(measurements)
        if n_samples is not None:
            y = y[:n_samples]
        if y.shape[0] < 1:
            raise TooFewSamples("need at least one measurement vector")
        if y.shape[1] != pilot.meas_dim:
            raise ShapeMismatch(f"measurement length {y.shape[1]} != {pilot.meas_dim}")
        c_y = hermitian_part(y.T @ y.conj() / y.shape[0])
        pinv = pseudo_inverse(psi_bar)
        c_h = pinv @ (c_y - noise_var * np.eye(pilot.meas_dim)) @ pinv.conj().T
    else:
        c_h = np.asarray(c_h, dtype=np.complex128)
        c_y = psi_bar @ c_h @ psi_bar.conj().T + noise_var * np.eye(pilot.meas_dim)
    c_h = psd_project(c_h)
    c_y = psd_project(c_y)
    return LmmseContext(c_h=c_h, c_y=c_y, gain=_lmmse_gain(c_h, psi_bar, noise_var), pilot=pilot)


def preprocess(ctx: LmmseContext, y):
    """Denoise one measurement (or a ``(slots, M_r*tau)`` batch)."""
    y = np.asarray(y)
    if y.shape[-1] != ctx.meas_dim:
        raise ShapeMismatch(f"measurement length {y.shape[-1]} != {ctx.meas_dim}")
    return y @ ctx.gain.T


def pack_input(window):
    """``[Re g_1, Im g_1, ..., Re g_I, Im g_I]`` for a window of complex vectors.

    `window` has shape ``(I, d)`` or ``(batch, I, d)``; oldest vector first.
    """
    w = np.asarray(window)
    if w.ndim < 2:
        raise ShapeMismatch("window must have shape (I, d) or (batch, I, d)")
    stacked = np.stack([w.real, w.imag], axis=-2)  # (..., I, 2, d)
    return stacked.reshape(w.shape[:-2] + (-1,))


def unpack_output(x):
    """Map ``[Re h, Im h]`` (length 2d) back to a complex d-vector."""
    x = np.asarray(x)
    if x.shape[-1] % 2:
        raise ShapeMismatch("output length must be even")
    d = x.shape[-1] // 2
    return x[..., :d] + 1j * x[..., d:]


def windows(seq, order):
    """Sliding windows ``seq[n-I+1..n]`` for ``n = I-1 .. len-1``; shape (len-I+1, I, d)."""
    seq = np.asarray(seq)
    count = seq.shape[0] - order + 1
    if count < 1:
        raise TooFewSamples(f"sequence of length {seq.shape[0]} is shorter than order {order}")
    return np.stack([seq[i:i + count] for i in range(order)], axis=1)


@dataclass(frozen=True)
class MlpConfig:
    input_order: int = 3
    hidden_layers: int = 2
    nodes_per_layer: int = 512
    width_factor: float | None = None
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.input_order < 1 or self.hidden_layers < 1 or self.nodes_per_layer < 1:
            raise ValueError("input_order, hidden_layers and nodes_per_layer must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")

    def width(self, d):
        if self.width_factor is None:
            return self.nodes_per_layer
        return max(self.nodes_per_layer, int(np.ceil(self.width_factor * d)))

    def layer_dims(self, d, d_in=None):
        """Layer sizes for complex output dimension `d` and input vectors of length `d_in`."""
        d_in = d if d_in is None else d_in
        f = self.width(d)
        return [2 * self.input_order * d_in] + [f] * self.hidden_layers + [2 * d]


@dataclass(eq=False)
class MlpModel:
    """Dense network parameters plus Adam moment buffers.

    ``weights[l]`` has shape ``(out, in)``; the map is ``x -> W x + b`` per layer.
    """

    weights: list
    biases: list
    input_order: int
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    step: int = 0
    activation: str | None = None
    loss_history: list = field(default_factory=list)
    # True when the network was trained on raw measurements (no LMMSE step).
    raw_input: bool = False

    def __post_init__(self):
        for prev, nxt in zip(self.weights[:-1], self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ShapeMismatch("layer dimensions are not chain-consistent")
        if not self.m_w:
            self.reset_optimizer()

    def reset_optimizer(self):
        self.m_w = [np.zeros_like(w) for w in self.weights]
        self.v_w = [np.zeros_like(w) for w in self.weights]
        self.m_b = [np.zeros_like(b) for b in self.biases]
        self.v_b = [np.zeros_like(b) for b in self.biases]
        self.step = 0

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def d(self):
        return self.weights[-1].shape[0] // 2

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        clone = lambda xs: [x.copy() for x in xs]
        return MlpModel(clone(self.weights), clone(self.biases), self.input_order,
                        clone(self.m_w), clone(self.v_w), clone(self.m_b), clone(self.v_b),
                        self.step, self.activation, list(self.loss_history), self.raw_input)


def init_model(config: MlpConfig, d, rng=None, d_in=None):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    dims = config.layer_dims(d, d_in)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, input_order=config.input_order)


def _activate(z, kind):
    if kind is None:
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def forward(model: MlpModel, x, return_cache=False):
    """
    Evaluate the network on a real input vector (or a batch of row vectors).

    Hidden layers apply ``model.activation`` when set; the default ``None``
    keeps the whole network affine.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dims[0]:
        raise ShapeMismatch(f"input has length {x.shape[-1]}, model expects {model.dims[0]}")
    a = x
    cache = [(a, None)]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = z if i == last else _activate(z, model.activation)
        cache.append((a, z))
    return (a, cache) if return_cache else a


def loss_and_grads(model: MlpModel, x, target):
    """
    Mean per-sample loss ``||out - target||^2 / d`` and its parameter gradients.

    `x` and `target` are batches of row vectors (or single vectors). ``d`` is
    the complex output dimension, half the real output length.
    """
    x = np.atleast_2d(x)
    target = np.atleast_2d(target)
    out, cache = forward(model, x, return_cache=True)
    batch = x.shape[0]
    d = model.d
    resid = out - target
    loss = float(np.sum(resid**2) / (batch * d))
    delta = 2.0 * resid / (batch * d)
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        a_prev = cache[i][0]
        gw[i] = delta.T @ a_prev
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ model.weights[i]
            delta = delta * _activate_grad(cache[i][1], model.activation)
    return loss, gw, gb


def _adam_step(model, gw, gb, config):
    model.step += 1
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.adam_eps
    c1 = 1.0 - b1**model.step
    c2 = 1.0 - b2**model.step
    for params, grads, m, v in ((model.weights, gw, model.m_w, model.v_w),
                                (model.biases, gb, model.m_b, model.v_b)):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1.0 - b1) * g
            v[i] = b2 * v[i] + (1.0 - b2) * g * g
            params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def training_pairs(g_sequence, order, targets=None):
    """
    Input/target pairs from a sequence of vectors.

    Inputs are packed windows ``g[n-I+1..n]``; targets are ``targets[n+1]``
    packed as ``[Re, Im]``. `targets` defaults to `g_sequence` itself.
    """
    g = np.asarray(g_sequence)
    t = g if targets is None else np.asarray(targets)
    win = windows(g[:-1], order)
    x = pack_input(win)
    nxt = t[order:]
    y = np.concatenate([nxt.real, nxt.imag], axis=-1)
    return x, y


def train(config: MlpConfig, g_sequence, n_train=None, targets=None, activation=None,
          callback=None):
    """
    Train a predictor on a denoised sequence with Adam.

    Parameters
    ----------
    config : MlpConfig
    g_sequence : array_like, shape (slots, d_in)
        Pre-processed (or raw) input vectors, oldest first.
    n_train : int, optional
        Number of leading vectors used for training (default: all).
    targets : array_like, shape (slots, d), optional
        Training targets aligned with `g_sequence`; defaults to
        `g_sequence` (the usual denoised-target setup).
    activation : {None, "relu", "tanh"}
        Hidden-layer nonlinearity; ``None`` gives the affine network.

    Returns
    -------
    MlpModel
        The model after the final epoch, with per-epoch mean loss in
        ``loss_history``.

    Raises
    ------
    TooFewSamples
        If fewer than ``I + 1`` vectors are available.
    DivergedLoss
        If the training loss becomes non-finite.
    """
    g = np.asarray(g_sequence)
    t = g if targets is None else np.asarray(targets)
    if n_train is not None:
        g, t = g[:n_train], t[:n_train]
    order = config.input_order
    if g.shape[0] < order + 1:
        raise TooFewSamples(f"need at least I+1={order + 1} training vectors, got {g.shape[0]}")
    x, y = training_pairs(g, order, t)
    rng = np.random.default_rng(config.seed)
    model = init_model(config, t.shape[1], rng, d_in=g.shape[1])
    model.activation = activation
    n_pairs = x.shape[0]
    for epoch in range(config.epochs):
        order_idx = rng.permutation(n_pairs)
        total = 0.0
        for start in range(0, n_pairs, config.batch_size):
            idx = order_idx[start:start + config.batch_size]
            loss, gw, gb = loss_and_grads(model, x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss} at epoch {epoch}")
            total += loss * idx.size
            _adam_step(model, gw, gb, config)
        model.loss_history.append(total / n_pairs)
        if callback is not None:
            callback(epoch, model)
    return model


def predict_mlp(model: MlpModel, ctx: LmmseContext | None, window):
    """
    Predict the next channel from the last ``I`` measurements of `window`.

    With ``ctx=None`` the measurements are fed to the network unprocessed.
    A ``(batch, I, M_r*tau)`` array predicts a batch.
    """
    w = np.asarray(window)
    if w.shape[-2] < model.input_order:
        raise ShapeMismatch(f"window holds {w.shape[-2]} vectors, model needs {model.input_order}")
    w = w[..., -model.input_order:, :]
    g = w if ctx is None else preprocess(ctx, w)
    return unpack_output(forward(model, pack_input(g)))


def gradient_check(model: MlpModel, x, target, step=1e-5):
    """
    Largest relative error between analytic and central-difference gradients.

    Returns ``max |num - ana| / (|ana| + 1e-12)`` over all parameters.
    """
    _, gw, gb = loss_and_grads(model, x, target)
    worst = 0.0
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = loss_and_grads(model, x, target)[0]
                flat[j] = orig - step
                down = loss_and_grads(model, x, target)[0]
                flat[j] = orig
                num = (up - down) / (2.0 * step)
                err = abs(num - gflat[j]) / (abs(gflat[j]) + 1e-12)
                if num == 0.0 and gflat[j] == 0.0:
                    err = 0.0
                worst = max(worst, err)
    return worst
