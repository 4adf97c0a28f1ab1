"""Small MLP with manual backprop, synthetic datasets and activation taps.

Samples are stored row-wise: a batch ``x`` has shape ``(N, d_in)`` and a
linear layer computes ``x @ W.T + b``. Every function also accepts a single
1-D sample.

Random numbers come from numpy's ``PCG64`` bit generator
(``numpy.random.Generator(PCG64(seed))``), so datasets and initializations are
reproducible for a given seed.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .compressor import FactoredLayer
from .errors import ConfigurationError, DimensionError, SubstitutionError, TrainingDivergenceError
from .linalg import as_matrix, as_vector

ACTIVATIONS = ("identity", "relu", "tanh")
LOSSES = ("mse", "softmax-cross-entropy")
DATASET_KINDS = ("hetero", "iso", "lowrank")
DEFAULT_WIDTHS = (16, 32, 16, 8)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.b = as_vector(self.b, "b")
        if self.b.shape[0] != self.W.shape[0]:
            raise DimensionError(f"bias length {self.b.shape[0]} != {self.W.shape[0]} rows")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    @property
    def param_count(self) -> int:
        return self.W.size + self.b.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b


Layer = DenseLayer | FactoredLayer


@dataclass
class ToyModel:
    layers: list
    names: list = field(default_factory=list)
    loss: str = "mse"

    def __post_init__(self):
        if not self.names:
            self.names = [f"fc{i + 1}" for i in range(len(self.layers))]
        if len(self.names) != len(self.layers) or len(set(self.names)) != len(self.names):
            raise ConfigurationError("layer names must be unique, one per layer")
        if len(self.layers) < 2:
            raise ConfigurationError("a model needs at least one hidden layer")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        for (na, a), (nb, b) in zip(self.named_layers(), self.named_layers()[1:]):
            if a.d_out != b.d_in:
                raise DimensionError(f"layer {na} outputs {a.d_out} but {nb} expects {b.d_in}")

    def named_layers(self) -> list:
        return list(zip(self.names, self.layers))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SubstitutionError(f"no layer named {name!r}") from None

    def __getitem__(self, name: str) -> Layer:
        return self.layers[self.index(name)]

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)


@dataclass
class TapRecord:
    """Pre-activation output of one linear layer and the loss gradient there.

    For a batch, ``y`` and ``grad_wrt_y`` are ``(N, d)`` and ``input_norm_sq``
    is ``(N,)``; each row's gradient is that sample's own loss gradient.
    """

    layer_name: str
    y: np.ndarray
    input_norm_sq: np.ndarray
    grad_wrt_y: np.ndarray | None = None


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(kind: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - out * out


def _linear(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, FactoredLayer):
        return (x @ layer.W1.T) @ layer.W2.T + layer.b_prime
    return x @ layer.W.T + layer.b


def init_model(widths=DEFAULT_WIDTHS, activation: str = "tanh", loss: str = "mse",
               seed: int = 0) -> ToyModel:
    """Gaussian init with variance ``1/fan_in``; the last layer stays linear."""
    rng = rng_for(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        act = activation if i < len(widths) - 2 else "identity"
        W = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
        layers.append(DenseLayer(W, np.zeros(n_out), act))
    return ToyModel(layers, loss=loss)


def _as_batch(model: ToyModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionError(f"input of shape {x.shape} does not match model input {model.d_in}")
    return x, single


def forward(model: ToyModel, x):
    """Return ``(output, taps)``; taps carry pre-activations but no gradients."""
    h, single = _as_batch(model, x)
    taps = []
    for name, layer in model.named_layers():
        z = _linear(layer, h)
        taps.append(TapRecord(name, z, np.sum(h * h, axis=1)))
        h = activate(layer.activation, z)
    if single:
        for tap in taps:
            tap.y, tap.input_norm_sq = tap.y[0], tap.input_norm_sq[0]
        return h[0], taps
    return h, taps


def per_sample_loss(loss: str, out: np.ndarray, target: np.ndarray):
    """Per-row losses and their gradients with respect to ``out``."""
    if loss == "mse":
        target = np.asarray(target, dtype=np.float64).reshape(out.shape)
        diff = out - target
        d = out.shape[1]
        return np.sum(diff * diff, axis=1) / d, (2.0 / d) * diff
    if loss == "softmax-cross-entropy":
        target = np.asarray(target)
        if target.ndim == out.ndim:  # one-hot / probability rows
            probs_t = target.astype(np.float64)
        else:
            labels = target.astype(np.int64).reshape(-1)
            probs_t = np.zeros_like(out)
            probs_t[np.arange(out.shape[0]), labels] = 1.0
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        logp = shifted - logz
        return -np.sum(probs_t * logp, axis=1), np.exp(logp) - probs_t
    raise ConfigurationError(f"unknown loss {loss!r}")


def backward(model: ToyModel, x, target):
    """Exact gradients of the mean per-sample loss.

    Returns ``(loss, taps, param_grads)``. ``param_grads`` has one dict per
    layer (``W``/``b`` or ``W1``/``W2``/``b_prime``) holding gradients of the
    batch-mean loss; tap gradients are per sample and not averaged.
    """
    xb, single = _as_batch(model, x)
    if single:
        target = np.asarray(target)[None, ...]
    hs, zs, taps = [xb], [], []
    h = xb
    for name, layer in model.named_layers():
        z = _linear(layer, h)
        taps.append(TapRecord(name, z, np.sum(h * h, axis=1)))
        zs.append(z)
        h = activate(layer.activation, z)
        hs.append(h)

    losses, dout = per_sample_loss(model.loss, h, target)
    n = xb.shape[0]
    grads = [None] * len(model.layers)
    delta = dout  # d loss_i / d h_L, per sample
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        dz = delta * _act_grad(layer.activation, zs[i], hs[i + 1])
        taps[i].grad_wrt_y = dz
        h_in = hs[i]
        if isinstance(layer, FactoredLayer):
            mid = h_in @ layer.W1.T
            dmid = dz @ layer.W2
            grads[i] = {
                "W1": dmid.T @ h_in / n,
                "W2": dz.T @ mid / n,
                "b_prime": dz.sum(axis=0) / n,
            }
            delta = dmid @ layer.W1
        else:
            grads[i] = {"W": dz.T @ h_in / n, "b": dz.sum(axis=0) / n}
            delta = dz @ layer.W
    if single:
        for tap in taps:
            tap.y, tap.grad_wrt_y, tap.input_norm_sq = tap.y[0], tap.grad_wrt_y[0], tap.input_norm_sq[0]
    return float(np.mean(losses)), taps, grads


def predict(model: ToyModel, x) -> np.ndarray:
    return forward(model, x)[0]


def loss_of(model: ToyModel, x, target) -> float:
    out = np.atleast_2d(predict(model, x))
    return float(np.mean(per_sample_loss(model.loss, out, target)[0]))


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    X: np.ndarray
    T: np.ndarray
    kind: str
    seed: int

    def __len__(self) -> int:
        return self.X.shape[0]

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (Dataset(self.X[:n_first], self.T[:n_first], self.kind, self.seed),
                Dataset(self.X[n_first:], self.T[n_first:], self.kind, self.seed))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _task(kind: str, task_seed: int, d_in: int, d_out: int, latent_dim: int):
    """Fixed generative structure shared by every sample drawn for a task."""
    rng = rng_for(task_seed)
    Q = _orthogonal(rng, d_in)
    if kind == "hetero":
        # input energy decays geometrically; targets lean on the quiet directions
        scales = np.geomspace(3.0, 0.1, d_in)
        B = rng.standard_normal((d_out, d_in)) * 0.3 / scales
        noise = np.full(d_out, 0.05)
        noise[0] = 1.0
        return Q, scales, B, noise
    if kind == "iso":
        scales = np.ones(d_in)
        B = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
        return Q, scales, B, np.full(d_out, 0.05)
    if kind == "lowrank":
        scales = np.zeros(d_in)
        scales[:latent_dim] = 1.0
        B = rng.standard_normal((d_out, d_in)) / np.sqrt(max(latent_dim, 1))
        return Q, scales, B, np.full(d_out, 0.05)
    raise ConfigurationError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")


def make_dataset(kind: str, n: int, seed: int, *, d_in: int = DEFAULT_WIDTHS[0],
                 d_out: int = DEFAULT_WIDTHS[-1], latent_dim: int = 2, task_seed: int = 0) -> Dataset:
    """Synthetic regression data.

    ``hetero``: anisotropic inputs whose low-variance directions drive the
    targets, with one output far noisier than the rest, so loss gradients vary
    strongly across dimensions. ``iso``: isotropic inputs and uniform noise.
    ``lowrank``: inputs confined to a ``latent_dim``-dimensional subspace.

    ``task_seed`` fixes the generative structure; ``seed`` draws the samples.
    """
    if n < 1:
        raise ConfigurationError("dataset needs at least one sample")
    Q, scales, B, noise = _task(kind, task_seed, d_in, d_out, latent_dim)
    rng = rng_for(seed)
    z = rng.standard_normal((n, d_in))
    latent = z * scales  # coordinates in the rotated basis
    X = latent @ Q.T
    signal = np.tanh(latent @ B.T)
    T = signal + rng.standard_normal((n, d_out)) * noise
    if kind == "lowrank":
        X = X + 0.5  # non-zero mean, still on an affine low-dimensional set
    return Dataset(X, T, kind, seed)


# ---------------------------------------------------------------- training

def train(model: ToyModel, data: Dataset, epochs: int, lr: float, seed: int,
          batch_size: int = 32) -> tuple[ToyModel, float]:
    """Mini-batch SGD on a copy of ``model``; returns ``(model, final_loss)``."""
    if epochs < 1 or lr < 0:
        raise ConfigurationError("epochs must be positive and lr non-negative")
    model = copy.deepcopy(model)
    rng = rng_for(seed)
    n = len(data)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                loss, _, grads = backward(model, data.X[idx], data.T[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergenceError(f"loss became {loss}")
                for layer, g in zip(model.layers, grads):
                    for key, val in g.items():
                        setattr(layer, key, getattr(layer, key) - lr * val)
        final = loss_of(model, data.X, data.T)
    if not np.isfinite(final):
        raise TrainingDivergenceError(f"final loss is {final}")
    return model, final


def evaluate(model: ToyModel, data: Dataset) -> tuple[float, float]:
    """``(loss, metric)``: metric is R^2 for regression and accuracy for classification."""
    out = np.atleast_2d(predict(model, data.X))
    loss = float(np.mean(per_sample_loss(model.loss, out, data.T)[0]))
    if model.loss == "mse":
        resid = np.sum((out - data.T) ** 2)
        total = np.sum((data.T - data.T.mean(axis=0)) ** 2)
        metric = 1.0 - resid / total if total > 0 else 0.0
    else:
        labels = data.T if data.T.ndim == 1 else np.argmax(data.T, axis=1)
        metric = float(np.mean(np.argmax(out, axis=1) == labels))
    return loss, float(metric)


def swap_layer(model: ToyModel, name: str, replacement: Layer) -> ToyModel:
    """New model with layer ``name`` replaced; the old layer's activation is kept."""
    i = model.index(name)
    old = model.layers[i]
    if replacement.d_in != old.d_in or replacement.d_out != old.d_out:
        raise SubstitutionError(
            f"layer {name} maps {old.d_in}->{old.d_out}, replacement maps "
            f"{replacement.d_in}->{replacement.d_out}"
        )
    replacement = copy.copy(replacement)
    replacement.activation = old.activation
    layers = list(model.layers)
    layers[i] = replacement
    return ToyModel(layers, list(model.names), model.loss)
