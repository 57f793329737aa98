"""Pruning baselines for dense MLPs: magnitude, random, SNIP, SynFlow.

All methods reduce to choosing a global keep-set over the flat parameter
list (weights and biases, layer by layer). Scores tie-break deterministically
by (layer index, flat index) ascending, lower indices surviving, so every
mask is reproducible and meets its kept-count target exactly.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LayerCollapseError
from .model import DenseMlp, accuracy, dense_loss_and_grads
from .optimizer import train_dense

MASK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PruneTarget:
    """Either a compression ratio >= 1 or a sparsity fraction in [0, 1)."""

    cr: float = None
    sparsity: float = None

    def __post_init__(self):
        if (self.cr is None) == (self.sparsity is None):
            raise ConfigError("specify exactly one of cr or sparsity")
        if self.cr is not None and self.cr < 1:
            raise ConfigError(f"cr must be >= 1, got {self.cr}")
        if self.sparsity is not None and not 0 <= self.sparsity < 1:
            raise ConfigError(f"sparsity must be in [0, 1), got {self.sparsity}")

    def kept_count(self, total):
        frac = 1.0 / self.cr if self.cr is not None else 1.0 - self.sparsity
        kept = int(round(total * frac))
        if kept < 1:
            raise ConfigError(f"target keeps 0 of {total} weights")
        return min(kept, total)


def _flatten_params(params):
    """Concatenate (w, b) pairs in layer order; returns values and shapes."""
    arrays = []
    for w, b in params:
        arrays.append(np.asarray(w, dtype=np.float64).ravel())
        arrays.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(arrays), [(np.asarray(w).shape, np.asarray(b).shape) for w, b in params]


def _mask_from_keep(keep_idx, shapes, total):
    flat = np.zeros(total)
    flat[keep_idx] = 1.0
    mask, off = [], 0
    for ws, bs in shapes:
        wn = int(np.prod(ws))
        bn = int(np.prod(bs))
        mask.append((flat[off : off + wn].reshape(ws), flat[off + wn : off + wn + bn].reshape(bs)))
        off += wn + bn
    return mask


def _topk_keep(scores, k):
    # stable sort on descending score keeps the lowest (layer, flat) index on ties
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def magnitude_mask(params, target):
    """Keep the globally largest |w| entries across all layers."""
    flat, shapes = _flatten_params(params)
    k = target.kept_count(flat.size)
    return _mask_from_keep(_topk_keep(np.abs(flat), k), shapes, flat.size)


def random_mask(params, target, rng):
    """Keep a uniform random subset of the target size."""
    flat, shapes = _flatten_params(params)
    k = target.kept_count(flat.size)
    keep = rng.choice(flat.size, size=k, replace=False)
    return _mask_from_keep(keep, shapes, flat.size)


def snip_scores(model, batch):
    """Connection sensitivity |g * w| from one minibatch at initialization."""
    x, y = batch
    _, gw, gb = dense_loss_and_grads(model, x, y)
    scores = []
    for w, b, dw, db in zip(model.weights, model.biases, gw, gb):
        scores.append((np.abs(dw * w), np.abs(db * b)))
    return scores


def snip_mask(model, batch, target):
    scores = snip_scores(model, batch)
    flat, shapes = _flatten_params(scores)
    if not flat.any():
        # degenerate gradients carry no signal; fall back to magnitude ranking
        warnings.warn("all-zero sensitivity scores, falling back to weight magnitude")
        return magnitude_mask(model.params(), target)
    k = target.kept_count(flat.size)
    return _mask_from_keep(_topk_keep(flat, k), shapes, flat.size)


def _synflow_scores(model, mask):
    """|w * dR/dw| where R is the all-ones forward through |W| with masked entries.

    R depends only on the weight magnitudes (biases do not enter the path
    product and score zero, so they are dropped first by the tie-break).
    """
    abs_w = [np.abs(w) * mw for w, (mw, _) in zip(model.weights, mask)]
    h = [np.ones((1, model.spec.layer_sizes[0]))]
    for w in abs_w:
        h.append(h[-1] @ w)
    delta = np.ones((1, model.spec.layer_sizes[-1]))
    scores = []
    for l in range(len(abs_w) - 1, -1, -1):
        g = h[l].T @ delta
        delta = delta @ abs_w[l].T
        # abs_w carries the mask, so already-pruned entries score exactly 0
        scores.append(abs_w[l] * np.abs(g))
    scores.reverse()
    return [(s, np.zeros_like(b)) for s, b in zip(scores, model.biases)]


def synflow_prune(model, target, iterations=100):
    """Iterative flow-preserving pruning with an exponential schedule.

    At iteration i of N the kept fraction is tightened to cr^(i/N); scores
    are recomputed on the masked absolute-valued network each time. Raises
    when the final mask would empty a layer's weights entirely.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    params = model.params()
    flat, shapes = _flatten_params(params)
    total = flat.size
    final_k = target.kept_count(total)
    final_cr = total / final_k
    mask = [(np.ones(ws), np.ones(bs)) for ws, bs in shapes]
    for i in range(1, iterations + 1):
        k = max(final_k, int(round(total / final_cr ** (i / iterations))))
        scores = _synflow_scores(model, mask)
        sflat, _ = _flatten_params(scores)
        mask = _mask_from_keep(_topk_keep(sflat, k), shapes, total)
    for l, (mw, _) in enumerate(mask):
        if not mw.any():
            raise LayerCollapseError(f"target cr={final_cr:g} empties layer {l}")
    return mask


def apply_mask_and_train(spec, mask, cfg, data):
    """Dense training with masked entries frozen at zero every step."""
    return train_dense(spec, cfg, data, mask=mask)


def posthoc_prune_curve(model, cr_list, eval_set):
    """(cr, accuracy) pairs from magnitude-masking a trained dense model.

    No retraining; every point is evaluated on the same data.
    """
    crs = list(cr_list)
    if any(b < a for a, b in zip(crs, crs[1:])):
        raise ConfigError("cr_list must be ascending")
    params = model.params()
    out = []
    for cr in crs:
        mask = magnitude_mask(params, PruneTarget(cr=cr))
        pruned = DenseMlp(
            model.spec,
            [w * mw for (w, _), (mw, _) in zip(params, mask)],
            [b * mb for (_, b), (_, mb) in zip(params, mask)],
        )
        out.append((float(cr), accuracy(pruned, eval_set.inputs, eval_set.labels)))
    return out


def mask_counts(mask):
    kept = sum(int(mw.sum()) + int(mb.sum()) for mw, mb in mask)
    total = sum(mw.size + mb.size for mw, mb in mask)
    return kept, total


def save_mask(path, mask):
    """Bitset serialization: a JSON header line, then packed mask bits."""
    header = {
        "version": MASK_FORMAT_VERSION,
        "layers": [{"w_shape": list(mw.shape), "b_shape": list(mb.shape)} for mw, mb in mask],
    }
    flat = np.concatenate([np.concatenate([mw.ravel(), mb.ravel()]) for mw, mb in mask])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(np.packbits(flat.astype(np.uint8)).tobytes())


def load_mask(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header["version"] != MASK_FORMAT_VERSION:
            raise ConfigError(f"unsupported mask version {header['version']}")
        bits = np.unpackbits(np.frombuffer(fh.read(), dtype=np.uint8))
    mask, off = [], 0
    for layer in header["layers"]:
        ws, bs = tuple(layer["w_shape"]), tuple(layer["b_shape"])
        wn, bn = int(np.prod(ws)), int(np.prod(bs))
        mw = bits[off : off + wn].astype(np.float64).reshape(ws)
        mb = bits[off + wn : off + wn + bn].astype(np.float64).reshape(bs)
        mask.append((mw, mb))
        off += wn + bn
    return mask
