"""Sparsity accounting and layer-wise diagnostics."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .factorization import misalignment


@dataclass(frozen=True)
class LayerSparsity:
    name: str
    total: int
    nonzero: int
    cr: float


@dataclass(frozen=True)
class SparsityReport:
    total_params: int
    nonzero_params: int
    compression_ratio: float
    sparsity: float
    per_layer: tuple
    collapsed_l2: float
    misalignment_total: float = None
    misalignment_per_layer_normalized: tuple = None

    def to_json(self):
        d = asdict(self)
        d["per_layer"] = [asdict(l) for l in self.per_layer]
        if self.misalignment_per_layer_normalized is not None:
            d["misalignment_per_layer_normalized"] = list(
                self.misalignment_per_layer_normalized
            )
        return d


def _cr(total, nonzero):
    return float(total) / nonzero if nonzero else math.inf


def sparsity_report(params, factorized=None, names=None):
    """Exact counts over thresholded dense (w, b) pairs.

    Misalignment fields are filled only when the factorized source model is
    supplied; per-layer misalignment is normalized by the layer's parameter
    count so layers of different widths are comparable.
    """
    per_layer = []
    total = nonzero = 0
    sq = 0.0
    for l, (w, b) in enumerate(params):
        name = names[l] if names else f"layer{l}"
        lt = w.size + b.size
        ln = int(np.count_nonzero(w)) + int(np.count_nonzero(b))
        per_layer.append(LayerSparsity(name, lt, ln, _cr(lt, ln)))
        total += lt
        nonzero += ln
        sq += float(np.sum(w * w) + np.sum(b * b))
    mis_total = mis_layers = None
    if factorized is not None:
        mis_layers = []
        mis_total = 0.0
        for w, b in zip(factorized.weights, factorized.biases):
            raw = misalignment(w) + misalignment(b)
            mis_total += raw
            mis_layers.append(raw / (int(np.prod(w.shape)) + b.shape[0]))
        mis_layers = tuple(mis_layers)
    cr = _cr(total, nonzero)
    return SparsityReport(
        total_params=total,
        nonzero_params=nonzero,
        compression_ratio=cr,
        sparsity=1.0 - 1.0 / cr if math.isfinite(cr) else 1.0,
        per_layer=tuple(per_layer),
        collapsed_l2=math.sqrt(sq),
        misalignment_total=mis_total,
        misalignment_per_layer_normalized=mis_layers,
    )
