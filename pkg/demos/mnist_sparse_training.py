# Sparse MNIST training end to end: factorize a LeNet-300-100, train with
# weight decay, watch compression emerge without any pruning step.
#
# Uses a 5k-sample subset so it finishes in about two minutes on a laptop
# core; ends around 90% validation accuracy with a compression ratio near
# 200. Point DWF_DATA_DIR at a directory with the four MNIST IDX files
# (gzipped is fine). For full-data runs use the CLI:
#   python -m dwf.cli train --data-dir data/mnist --profile ci

import os

import numpy as np

from dwf import MlpSpec, SeededRng, TrainConfig, train
from dwf.data import load_mnist, split_train_val
from dwf.metrics import sparsity_report
from dwf.model import DenseMlp, accuracy
from dwf.optimizer import collapse_and_threshold

DATA = os.environ.get("DWF_DATA_DIR", "data/mnist")

full = load_mnist(DATA, "train").subset(np.arange(5000))
train_ds, val_ds = split_train_val(full, 0.1, SeededRng(0).child("split"))
test_ds = load_mnist(DATA, "test")

spec = MlpSpec((784, 300, 100, 10))
cfg = TrainConfig(depth=3, lam=2e-3, epochs=150, batch_size=128, seed=0)

print(f"depth {cfg.depth}, lambda {cfg.lam}, {cfg.epochs} epochs on {len(train_ds)} samples")
print(f"{'epoch':>5} {'loss':>8} {'val_acc':>8} {'CR':>9} {'misalign':>10}")
model, traces = train(spec, cfg, (train_ds, val_ds))
for t in traces[::15] + [traces[-1]]:
    print(f"{t.epoch:>5} {t.train_loss:8.4f} {t.val_acc:8.4f} {t.cr:9.1f} {t.misalignment:10.2e}")

dense = collapse_and_threshold(model, cfg.eps_tiny)
rep = sparsity_report(dense, factorized=model)
test_acc = accuracy(DenseMlp.from_params(spec, dense), test_ds.inputs, test_ds.labels)
print()
print(f"test accuracy after collapse: {test_acc:.4f}")
print(f"kept {rep.nonzero_params} of {rep.total_params} params (CR {rep.compression_ratio:.1f})")
for layer in rep.per_layer:
    print(f"  {layer.name}: {layer.nonzero}/{layer.total} (CR {layer.cr:.1f})")
print("the factors were trained with nothing but SGD + L2; the zeros are free")
