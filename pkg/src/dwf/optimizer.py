"""SGD training loops for factorized and dense networks.

The factorized loop trains every factor with heavy-ball SGD where each
factor's gradient is the backprop gradient plus the coupled decay term
(2 lambda / D) * factor. All factors of a parameter are updated from their
pre-step values, which is what conserves balancedness and keeps balanced
zeros absorbing. After training, factors are collapsed and entries below
eps_tiny (float32 machine epsilon by default) are declared exact zeros.

A dense twin loop with optional L1 subgradient and keep-mask backs the
vanilla-L1 comparison and the pruning baselines; with the penalty and mask
disabled it is bit-identical to plain dense SGD.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergedError
from .factorization import collapse, misalignment
from .init import DwfTruncated
from .model import (
    DenseMlp,
    FactorizedMlp,
    accuracy,
    dense_loss_and_grads,
    loss_and_grads,
)
from .ndcore import SeededRng

# collapsed entries below this are numerical noise, not surviving weights
EPS_TINY = float(np.finfo(np.float32).eps)

# train_acc is evaluated on at most this many training samples per epoch
TRAIN_EVAL_CAP = 10_000


@dataclass(frozen=True)
class Constant:
    eta0: float

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigError("eta0 must be > 0")


@dataclass(frozen=True)
class StepDecay:
    eta0: float
    milestones: tuple  # epoch indices, strictly increasing
    gamma: float
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigError("eta0 must be > 0")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must be in (0, 1)")
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("milestones must be strictly increasing")
        object.__setattr__(self, "milestones", ms)


@dataclass(frozen=True)
class Cosine:
    eta0: float
    total_steps: int = None  # resolved to epochs * steps_per_epoch by train()

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigError("eta0 must be > 0")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")


def lr_at(s, t):
    """Learning rate at global step t; past the horizon it clamps to the final value."""
    if isinstance(s, Constant):
        return s.eta0
    if isinstance(s, StepDecay):
        epoch = t // s.steps_per_epoch
        drops = sum(1 for m in s.milestones if m <= epoch)
        return s.eta0 * s.gamma**drops
    if isinstance(s, Cosine):
        t = min(t, s.total_steps)
        return 0.5 * s.eta0 * (1.0 + math.cos(math.pi * t / s.total_steps))
    raise ConfigError(f"unknown schedule {s!r}")


@dataclass(frozen=True)
class TrainConfig:
    depth: int = 3
    lam: float = 0.0
    epochs: int = 30
    batch_size: int = 256
    momentum: float = 0.9
    lr: float = 0.15
    schedule: object = "cosine"  # "constant" | "step" | "cosine" | LrSchedule instance
    milestones: tuple = ()
    gamma: float = 0.1
    init: object = field(default_factory=DwfTruncated)
    variance_rule: str = "kaiming"
    seed: int = 0
    eps_tiny: float = EPS_TINY

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError("depth must be >= 2")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.eps_tiny <= 0:
            raise ConfigError("eps_tiny must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if isinstance(self.schedule, str) and self.schedule not in ("constant", "step", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class EpochTrace:
    """One metrics row per epoch.

    train_loss is the running mean over that epoch's minibatches; train_acc
    is evaluated at epoch end on the first TRAIN_EVAL_CAP training samples.
    cr counts collapsed weights after the eps_tiny threshold. Dense trainers
    emit misalignment 0.0 (a depth-1 parameter is trivially balanced).
    """

    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    cr: float
    l2_collapsed: float
    misalignment: float
    layer_misalignment: tuple
    layer_cr: tuple


def trace_header(n_layers):
    head = ["epoch", "lr", "train_loss", "train_acc", "val_acc", "cr", "l2_collapsed", "misalignment"]
    head += [f"misalignment_l{i}" for i in range(n_layers)]
    head += [f"cr_l{i}" for i in range(n_layers)]
    return head


def trace_row(tr):
    vals = [tr.epoch, tr.lr, tr.train_loss, tr.train_acc, tr.val_acc, tr.cr, tr.l2_collapsed, tr.misalignment]
    vals += list(tr.layer_misalignment)
    vals += list(tr.layer_cr)
    return vals


def _fmt(v):
    return str(v) if isinstance(v, int) else repr(float(v))


def write_traces_csv(path, traces):
    n_layers = len(traces[0].layer_cr) if traces else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_header(n_layers))
        for tr in traces:
            writer.writerow([_fmt(v) for v in trace_row(tr)])


def write_traces_json(path, traces):
    n_layers = len(traces[0].layer_cr) if traces else 0
    head = trace_header(n_layers)
    rows = [dict(zip(head, trace_row(tr))) for tr in traces]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def _resolve_schedule(cfg, steps_per_epoch):
    s = cfg.schedule
    if isinstance(s, str):
        if s == "constant":
            return Constant(cfg.lr)
        if s == "step":
            return StepDecay(cfg.lr, tuple(cfg.milestones), cfg.gamma, steps_per_epoch)
        if s == "cosine":
            return Cosine(cfg.lr, cfg.epochs * steps_per_epoch)
        raise ConfigError(f"unknown schedule {s!r}")
    if isinstance(s, Cosine) and s.total_steps is None:
        return replace(s, total_steps=cfg.epochs * steps_per_epoch)
    if isinstance(s, StepDecay):
        return replace(s, steps_per_epoch=steps_per_epoch)
    return s


def _finite(arr):
    # any inf/nan makes the sum non-finite
    return np.isfinite(arr.sum())


def sgd_step(m, grads, state, lr, lam, momentum):
    """One heavy-ball step on every factor, simultaneous within each parameter.

    Effective per-factor gradient is g_d + (2 lam / D) * w_d evaluated at the
    pre-step values; v <- momentum * v + g_eff; w_d <- w_d - lr * v. Mutates
    the model in place and returns (m, state).
    """
    params = list(m.params())
    flat_grads = []
    for gw, gb in grads:
        flat_grads.append(gw)
        flat_grads.append(gb)
    if state is None:
        state = {"v": [[np.zeros(p.shape) for _ in range(p.depth)] for p in params], "step": 0}
    coef = 2.0 * lam / m.depth
    for p, g, v in zip(params, flat_grads, state["v"]):
        for d in range(p.depth):
            g_eff = g[d] + coef * p.factors[d] if lam != 0.0 else g[d]
            v[d] *= momentum
            v[d] += g_eff
            p.factors[d] -= lr * v[d]
            if not _finite(p.factors[d]):
                raise DivergedError("non-finite factor update", step=state["step"])
    state["step"] += 1
    return m, state


def collapse_and_threshold(m, eps_tiny=EPS_TINY):
    """Dense (W, b) pairs with |entry| < eps_tiny snapped to exact zero."""
    if eps_tiny <= 0:
        raise ConfigError("eps_tiny must be > 0")
    out = []
    for w, b in zip(m.weights, m.biases):
        wc, bc = collapse(w), collapse(b)
        wc[np.abs(wc) < eps_tiny] = 0.0
        bc[np.abs(bc) < eps_tiny] = 0.0
        out.append((wc, bc))
    return out


def _cr(total, nonzero):
    return float(total) / nonzero if nonzero else math.inf


def _dense_sparsity(params, eps_tiny):
    """Overall and per-layer compression ratios plus the collapsed L2 norm."""
    total = nonzero = 0
    sq = 0.0
    per_layer = []
    for w, b in params:
        lt = w.size + b.size
        ln = int(np.count_nonzero(np.abs(w) >= eps_tiny)) + int(
            np.count_nonzero(np.abs(b) >= eps_tiny)
        )
        sq += float(np.sum(w * w) + np.sum(b * b))
        per_layer.append(_cr(lt, ln))
        total += lt
        nonzero += ln
    return _cr(total, nonzero), tuple(per_layer), math.sqrt(sq)


def _layer_misalignment(m):
    per_layer = []
    total = 0.0
    for w, b in zip(m.weights, m.biases):
        raw = misalignment(w) + misalignment(b)
        total += raw
        per_layer.append(raw / (np.prod(w.shape) + b.shape[0]))
    return total, tuple(per_layer)


def _epoch_trace(epoch, lr, loss, model, dense_params, train_ds, val_ds, eps_tiny):
    classify = model.spec.loss == "softmax_ce"
    cr, layer_cr, l2 = _dense_sparsity(dense_params, eps_tiny)
    if isinstance(model, FactorizedMlp):
        mis, layer_mis = _layer_misalignment(model)
    else:
        mis, layer_mis = 0.0, tuple(0.0 for _ in model.weights)
    train_acc = val_acc = math.nan
    if classify:
        cap = TRAIN_EVAL_CAP
        train_acc = accuracy(model, train_ds.inputs[:cap], train_ds.labels[:cap])
        if val_ds is not None and len(val_ds.labels):
            val_acc = accuracy(model, val_ds.inputs, val_ds.labels)
    return EpochTrace(epoch, lr, loss, train_acc, val_acc, cr, l2, mis, layer_mis, layer_cr)


def _check_data(cfg, train_ds):
    n = train_ds.inputs.shape[0]
    if n == 0:
        raise ConfigError("empty training set")
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds {n} training samples")
    return n


def train(spec, cfg, data):
    """Factorized training, returning the final model and per-epoch traces.

    data is a (train, val) dataset pair; val may be None. Identical
    (seed, config, data) produce identical traces. On divergence the raised
    error carries the traces of completed epochs.
    """
    train_ds, val_ds = data
    n = _check_data(cfg, train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = _resolve_schedule(cfg, steps_per_epoch)
    root = SeededRng(cfg.seed)
    model = FactorizedMlp.build(spec, cfg.depth, cfg.init, root.child("init"), cfg.variance_rule)
    shuffle = root.child("shuffle")
    state = None
    traces = []
    t = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        epoch_lr = lr_at(sched, t)
        loss_sum = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            try:
                loss, grads = loss_and_grads(model, train_ds.inputs[idx], train_ds.labels[idx])
                _, state = sgd_step(model, grads, state, lr_at(sched, t), cfg.lam, cfg.momentum)
            except DivergedError as e:
                raise DivergedError(str(e), step=t, traces=traces) from None
            loss_sum += loss * len(idx)
            t += 1
        dense = collapse_and_threshold(model, cfg.eps_tiny)
        traces.append(
            _epoch_trace(epoch, epoch_lr, loss_sum / n, model, dense, train_ds, val_ds, cfg.eps_tiny)
        )
    return model, traces


def train_dense(spec, cfg, data, mask=None, l1_lam=0.0, l2_lam=0.0, start=None):
    """Dense SGD twin: optional L1 subgradient, L2 decay, and keep-mask.

    Masked entries and their gradients are forced to zero every step. With
    mask=None and zero penalties this is plain dense training. Pass a trained
    DenseMlp as start to continue from its weights instead of a fresh init.
    """
    train_ds, val_ds = data
    n = _check_data(cfg, train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = _resolve_schedule(cfg, steps_per_epoch)
    root = SeededRng(cfg.seed)
    if start is None:
        model = DenseMlp.build(spec, root.child("init"), cfg.variance_rule)
    else:
        if start.spec.layer_sizes != spec.layer_sizes:
            raise ConfigError("start model does not match the layer spec")
        model = start.copy()
    arrays = model.weights + model.biases
    if mask is not None:
        mask_arrays = _mask_like(mask, model)
        for a, km in zip(arrays, mask_arrays):
            a *= km
    shuffle = root.child("shuffle")
    velocity = [np.zeros_like(a) for a in arrays]
    traces = []
    t = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        epoch_lr = lr_at(sched, t)
        loss_sum = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            lr = lr_at(sched, t)
            try:
                loss, gw, gb = dense_loss_and_grads(model, train_ds.inputs[idx], train_ds.labels[idx])
            except DivergedError as e:
                raise DivergedError(str(e), step=t, traces=traces) from None
            grads = gw + gb
            for a, g, v in zip(arrays, grads, velocity):
                if l2_lam != 0.0:
                    g = g + 2.0 * l2_lam * a
                if l1_lam != 0.0:
                    g = g + l1_lam * np.sign(a)  # sign(0) = 0: no pull at exact zeros
                v *= cfg.momentum
                v += g
                a -= lr * v
            if mask is not None:
                for a, v, km in zip(arrays, velocity, mask_arrays):
                    a *= km
                    v *= km
            if not np.isfinite(sum(float(a.sum()) for a in arrays)):
                raise DivergedError("non-finite weight update", step=t, traces=traces)
            loss_sum += loss * len(idx)
            t += 1
        params = [(w.copy(), b.copy()) for w, b in model.params()]
        for w, b in params:
            w[np.abs(w) < cfg.eps_tiny] = 0.0
            b[np.abs(b) < cfg.eps_tiny] = 0.0
        traces.append(
            _epoch_trace(epoch, epoch_lr, loss_sum / n, model, params, train_ds, val_ds, cfg.eps_tiny)
        )
    return model, traces


def _mask_like(mask, model):
    """Reorder a per-layer (w, b) mask list into the flat weights+biases order."""
    wm = [np.asarray(w, dtype=np.float64) for w, _ in mask]
    bm = [np.asarray(b, dtype=np.float64) for _, b in mask]
    for (w, b), mw, mb in zip(model.params(), wm, bm):
        if mw.shape != w.shape or mb.shape != b.shape:
            raise ConfigError("mask shapes do not match the model")
    return wm + bm


def train_vanilla_l1(spec, cfg, data):
    """Unfactorized SGD on loss + lambda * ||w||_1 via the sign subgradient."""
    return train_dense(spec, cfg, data, mask=None, l1_lam=cfg.lam)
