"""Fully-connected networks with factorized or dense parameters.

The factorized model collapses factors to effective weights before every
forward pass (identical math to applying factors one by one, but one
elementwise pass plus a single matmul per layer). Backprop produces dense
gradients first; the chain rule through the factor product turns them into
per-factor gradients. A dense twin of the same architecture backs the
pruning baselines and the plain-L1 trainer, sharing the forward/backward
core so comparisons are apples to apples.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import init as init_mod
from .errors import DivergedError
from .factorization import FactorizedParam, collapse, factor_gradients

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("softmax_ce", "mse")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "relu"
    loss: str = "softmax_ce"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need >= 2 positive layer sizes, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name, z, a):
    # relu derivative at exactly 0 is taken as 0
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_dlogits(loss, logits, y):
    n = logits.shape[0]
    if loss == "softmax_ce":
        p = softmax(logits)
        y = np.asarray(y, dtype=np.int64)
        picked = p[np.arange(n), y]
        value = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        dlogits = p
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        return value, dlogits
    # mse: per-sample squared error summed over outputs, averaged over batch
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    diff = logits - y
    value = float(np.sum(diff * diff) / n)
    return value, 2.0 * diff / n


def _forward_core(weights, biases, spec, x):
    """Shared dense forward. Returns logits and the cache backprop needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} incompatible with input size {spec.layer_sizes[0]}"
        )
    acts = [x]
    pre = []
    h = x
    last = spec.n_layers - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        h = z if l == last else _act(spec.activation, z)
        acts.append(h)
    return h, {"pre": pre, "acts": acts}


def _backward_core(weights, spec, cache, dlogits):
    """Shared dense backward from the logit gradient. Returns dW, db lists."""
    grads_w = [None] * spec.n_layers
    grads_b = [None] * spec.n_layers
    delta = dlogits
    for l in range(spec.n_layers - 1, -1, -1):
        grads_w[l] = cache["acts"][l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ weights[l].T
            delta = delta * _act_deriv(spec.activation, cache["pre"][l - 1], cache["acts"][l])
    return grads_w, grads_b


def _raise_on_nonfinite_loss(value, cache):
    if np.isfinite(value):
        return
    for l, z in enumerate(cache["pre"]):
        if not np.all(np.isfinite(z)):
            raise DivergedError(f"non-finite pre-activations in layer {l}", step=None)
    raise DivergedError("non-finite loss", step=None)


class FactorizedMlp:
    """MLP whose every weight and bias is a FactorizedParam of shared depth."""

    def __init__(self, spec, depth, weights, biases):
        if depth < 2:
            raise ValueError(f"depth must be >= 2, got {depth}")
        expected = list(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))
        for (n_in, n_out), w, b in zip(expected, weights, biases):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ValueError("parameter shapes do not chain with layer sizes")
            if w.depth != depth or b.depth != depth:
                raise ValueError("all parameters must share one depth")
        self.spec = spec
        self.depth = depth
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def build(cls, spec, depth, scheme, rng, variance_rule="kaiming"):
        """Initialize with per-layer child RNG streams (layer order independent)."""
        weights, biases = [], []
        for l, (n_in, n_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
            ctx = init_mod.LayerInitContext(n_in, n_out, variance_rule)
            wf = init_mod.sample_factor_weights(
                ctx, scheme, depth, n_in * n_out, rng.child(f"w{l}")
            )
            bf = init_mod.init_biases(scheme, depth, n_out, rng.child(f"b{l}"))
            weights.append(FactorizedParam([f.reshape(n_in, n_out) for f in wf]))
            biases.append(FactorizedParam(bf))
        return cls(spec, depth, weights, biases)

    def params(self):
        """All parameters in a fixed order: weights then bias per layer."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def copy(self):
        return FactorizedMlp(
            self.spec,
            self.depth,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def forward(m, x):
    weights = [collapse(w) for w in m.weights]
    biases = [collapse(b) for b in m.biases]
    logits, _ = _forward_core(weights, biases, m.spec, x)
    return logits


def loss_and_grads(m, x, y):
    """Mean per-sample loss and per-factor gradients for every parameter.

    The L2 factor penalty is excluded; the optimizer adds its gradient so the
    objective split stays explicit. Returns (loss, grads) where grads is a
    list over layers of (weight factor grads, bias factor grads).
    """
    weights = [collapse(w) for w in m.weights]
    biases = [collapse(b) for b in m.biases]
    logits, cache = _forward_core(weights, biases, m.spec, x)
    value, dlogits = _loss_and_dlogits(m.spec.loss, logits, y)
    _raise_on_nonfinite_loss(value, cache)
    dense_w, dense_b = _backward_core(weights, m.spec, cache, dlogits)
    grads = [
        (factor_gradients(dw, w), factor_gradients(db, b))
        for dw, db, w, b in zip(dense_w, dense_b, m.weights, m.biases)
    ]
    return value, grads


def collapse_model(m):
    """Dense (W, b) pairs with predictions identical to the factorized model."""
    return [(collapse(w), collapse(b)) for w, b in zip(m.weights, m.biases)]


class DenseMlp:
    """Plain dense MLP used by pruning baselines and the vanilla-L1 trainer."""

    def __init__(self, spec, weights, biases):
        self.spec = spec
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def build(cls, spec, rng, variance_rule="kaiming", bias_sigma=init_mod.BIAS_SIGMA):
        weights, biases = [], []
        for l, (n_in, n_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
            ctx = init_mod.LayerInitContext(n_in, n_out, variance_rule)
            sigma = init_mod.base_sigma(ctx)
            w = rng.child(f"w{l}").normal(0.0, sigma, n_in * n_out)
            b = rng.child(f"b{l}").normal(0.0, bias_sigma, n_out)
            weights.append(w.reshape(n_in, n_out))
            biases.append(b)
        return cls(spec, weights, biases)

    @classmethod
    def from_params(cls, spec, params):
        return cls(spec, [w for w, _ in params], [b for _, b in params])

    def params(self):
        return [(w, b) for w, b in zip(self.weights, self.biases)]

    def copy(self):
        return DenseMlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def dense_forward(m, x):
    logits, _ = _forward_core(m.weights, m.biases, m.spec, x)
    return logits


def dense_loss_and_grads(m, x, y):
    logits, cache = _forward_core(m.weights, m.biases, m.spec, x)
    value, dlogits = _loss_and_dlogits(m.spec.loss, logits, y)
    _raise_on_nonfinite_loss(value, cache)
    grads_w, grads_b = _backward_core(m.weights, m.spec, cache, dlogits)
    return value, grads_w, grads_b


def predict_classes(m, x, batch=4096):
    """Argmax predictions in evaluation-sized chunks."""
    fwd = forward if isinstance(m, FactorizedMlp) else dense_forward
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], batch):
        logits = fwd(m, x[start : start + batch])
        out[start : start + batch] = logits.argmax(axis=1)
    return out


def accuracy(m, x, labels, batch=4096):
    return float(np.mean(predict_classes(m, x, batch) == np.asarray(labels)))


def save_checkpoint(path, m):
    """Versioned binary checkpoint of spec, depth, and all factor arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(m.spec.layer_sizes),
        "activation": m.spec.activation,
        "loss": m.spec.loss,
        "depth": m.depth,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for l, (w, b) in enumerate(zip(m.weights, m.biases)):
        for d in range(m.depth):
            arrays[f"w{l}_f{d}"] = w.factors[d]
            arrays[f"b{l}_f{d}"] = b.factors[d]
    np.savez(path, **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        spec = MlpSpec(tuple(meta["layer_sizes"]), meta["activation"], meta["loss"])
        depth = meta["depth"]
        weights, biases = [], []
        for l in range(spec.n_layers):
            weights.append(FactorizedParam([data[f"w{l}_f{d}"] for d in range(depth)]))
            biases.append(FactorizedParam([data[f"b{l}_f{d}"] for d in range(depth)]))
    return FactorizedMlp(spec, depth, weights, biases)


def save_dense(path, dense_params):
    """Flat binary export of dense (weight, bias) pairs."""
    arrays = {}
    for l, (w, b) in enumerate(dense_params):
        arrays[f"w{l}"] = w
        arrays[f"b{l}"] = b
    np.savez(path, **arrays)


def load_dense(path):
    with np.load(path) as data:
        n = sum(1 for k in data.files if k.startswith("w"))
        return [(data[f"w{l}"], data[f"b{l}"]) for l in range(n)]
