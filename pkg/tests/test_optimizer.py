import csv
import json

import numpy as np
import pytest

from dwf import Dataset, SeededRng
from dwf.errors import ConfigError, DivergedError
from dwf.factorization import FactorizedParam, balanced_factorize, collapse
from dwf.init import VarMatch
from dwf.model import FactorizedMlp, MlpSpec, collapse_model, dense_forward, forward
from dwf.optimizer import (
    EPS_TINY,
    Constant,
    Cosine,
    StepDecay,
    TrainConfig,
    collapse_and_threshold,
    lr_at,
    sgd_step,
    trace_header,
    train,
    train_dense,
    train_vanilla_l1,
    write_traces_csv,
    write_traces_json,
)
from tests.conftest import tiny_classification


def full_batch_cfg(**kw):
    base = dict(depth=2, lam=0.0, epochs=1, batch_size=256, momentum=0.0, lr=0.05,
                schedule="constant", seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_eps_tiny_is_float32_machine_eps():
    assert EPS_TINY == np.finfo(np.float32).eps


def test_lr_constant():
    s = Constant(0.3)
    assert lr_at(s, 0) == 0.3
    assert lr_at(s, 10_000) == 0.3


def test_lr_cosine_endpoints_and_midpoint():
    s = Cosine(0.2, total_steps=100)
    assert lr_at(s, 0) == pytest.approx(0.2)
    assert lr_at(s, 50) == pytest.approx(0.1)
    assert lr_at(s, 100) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(s, 150) == pytest.approx(0.0, abs=1e-15)  # clamped past the end


def test_lr_step_decay():
    s = StepDecay(1.0, milestones=(2, 4), gamma=0.1, steps_per_epoch=10)
    assert lr_at(s, 0) == 1.0
    assert lr_at(s, 19) == 1.0
    assert lr_at(s, 20) == pytest.approx(0.1)
    assert lr_at(s, 45) == pytest.approx(0.01)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Constant(-1.0)
    with pytest.raises(ConfigError):
        Cosine(0.1, total_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(depth=1)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(schedule="linear")


def test_sgd_step_hand_computed():
    # one layer, one weight, mse loss; check the exact two-step trajectory
    spec = MlpSpec((1, 1), loss="mse")
    w = FactorizedParam([np.array([[2.0]]), np.array([[3.0]])])
    b = FactorizedParam([np.array([0.0]), np.array([0.0])])
    m = FactorizedMlp(spec, 2, [w], [b])
    grads = [((np.array([[1.0]]), np.array([[2.0]])), (np.array([0.0]), np.array([0.0])))]
    _, state = sgd_step(m, grads, None, lr=0.1, lam=0.0, momentum=0.5)
    # v = g, w -= lr * v
    assert m.weights[0].factors[0][0, 0] == pytest.approx(2.0 - 0.1 * 1.0)
    assert m.weights[0].factors[1][0, 0] == pytest.approx(3.0 - 0.1 * 2.0)
    sgd_step(m, grads, state, lr=0.1, lam=0.0, momentum=0.5)
    # v = 0.5 * g + g = 1.5 g
    assert m.weights[0].factors[0][0, 0] == pytest.approx(1.9 - 0.1 * 1.5)
    assert state["step"] == 2


def test_sgd_step_weight_decay_term():
    spec = MlpSpec((1, 1), loss="mse")
    w = FactorizedParam([np.array([[2.0]]), np.array([[4.0]])])
    b = FactorizedParam([np.array([0.0]), np.array([0.0])])
    m = FactorizedMlp(spec, 2, [w], [b])
    zero = [((np.zeros((1, 1)), np.zeros((1, 1))), (np.zeros(1), np.zeros(1)))]
    sgd_step(m, zero, None, lr=0.1, lam=0.3, momentum=0.0)
    # pure decay: w -= lr * (2 lam / D) * w
    shrink = 1.0 - 0.1 * 2.0 * 0.3 / 2.0
    assert m.weights[0].factors[0][0, 0] == pytest.approx(2.0 * shrink)
    assert m.weights[0].factors[1][0, 0] == pytest.approx(4.0 * shrink)


def test_balanced_zeros_are_absorbing():
    # zero out one hidden unit's fan-in completely, then train
    ds = tiny_classification(n=256)
    spec = MlpSpec((6, 8, 3))
    cfg = TrainConfig(depth=3, lam=1e-3, epochs=13, batch_size=64, momentum=0.9,
                      lr=0.1, schedule="cosine", seed=1)  # 13 * 4 = 52 steps
    m = FactorizedMlp.build(spec, 3, VarMatch(), SeededRng(2).child("init"))
    for f in m.weights[0].factors:
        f[:, 0] = 0.0
    import dwf.optimizer as opt

    # drive the inner loop via train() on a model with pinned zeros: emulate by
    # stepping manually for exactly 100 steps
    from dwf.model import loss_and_grads

    r = SeededRng(3)
    state = None
    for step in range(100):
        idx = r.permutation(len(ds.labels))[:64]
        _, grads = loss_and_grads(m, ds.inputs[idx], ds.labels[idx])
        _, state = sgd_step(m, grads, state, lr=0.1, lam=1e-3, momentum=0.9)
        for f in m.weights[0].factors:
            assert np.all(f[:, 0] == 0.0)  # exactly, not approximately


def test_balanced_magnitudes_stay_balanced():
    ds = tiny_classification(n=128)
    spec = MlpSpec((6, 5, 3))
    for depth in (2, 3, 4):
        m = FactorizedMlp.build(spec, depth, VarMatch(), SeededRng(4).child("init"))
        # rebalance every parameter exactly
        for l in range(spec.n_layers):
            m.weights[l] = balanced_factorize(collapse(m.weights[l]), depth)
            m.biases[l] = balanced_factorize(collapse(m.biases[l]), depth)
        from dwf.model import loss_and_grads

        state = None
        for step in range(50):  # full batch
            _, grads = loss_and_grads(m, ds.inputs, ds.labels)
            _, state = sgd_step(m, grads, state, lr=0.05, lam=1e-4, momentum=0.9)
        for l in range(spec.n_layers):
            mags = np.stack([np.abs(f) for f in m.weights[l].factors])
            hi, lo = mags.max(axis=0), mags.min(axis=0)
            live = hi > 0
            assert np.all((hi[live] - lo[live]) / hi[live] <= 1e-6)


def test_train_is_deterministic(blobs, small_spec):
    cfg = TrainConfig(depth=2, lam=1e-4, epochs=3, batch_size=64, seed=7)
    m1, t1 = train(small_spec, cfg, (blobs, None))
    m2, t2 = train(small_spec, cfg, (blobs, None))
    for (w1, b1), (w2, b2) in zip(collapse_model(m1), collapse_model(m2)):
        assert np.array_equal(w1, w2)
        assert np.array_equal(b1, b2)
    assert t1 == t2


def test_train_learns_blobs(blobs, small_spec):
    cfg = TrainConfig(depth=3, lam=0.0, epochs=25, batch_size=64, lr=0.1, seed=0)
    m, traces = train(small_spec, cfg, (blobs, None))
    assert traces[-1].train_acc > 0.9
    assert traces[-1].misalignment < traces[0].misalignment * 10  # no blow-up


def test_full_batch_convex_loss_non_increasing():
    # linear softmax model, full batch, tiny lr, no momentum: every step descends
    ds = tiny_classification(n=120, d=4, classes=3)
    spec = MlpSpec((4, 3))
    cfg = TrainConfig(depth=2, lam=0.0, epochs=40, batch_size=120, momentum=0.0,
                      lr=0.02, schedule="constant", seed=3)
    m, traces = train(spec, cfg, (ds, None))
    losses = [t.train_loss for t in traces]
    diffs = np.diff(losses)
    assert np.all(diffs <= 1e-9)


def test_dense_and_vanilla_l1_agree_at_lambda_zero(blobs, small_spec):
    cfg = TrainConfig(depth=2, lam=0.0, epochs=4, batch_size=64, seed=5)
    m1, t1 = train_dense(small_spec, cfg, (blobs, None))
    m2, t2 = train_vanilla_l1(small_spec, cfg, (blobs, None))
    for w1, w2 in zip(m1.weights + m1.biases, m2.weights + m2.biases):
        assert np.array_equal(w1, w2)  # bit-identical
    assert t1 == t2


def test_train_dense_start_continues_from_model(blobs, small_spec):
    cfg = TrainConfig(depth=2, lam=0.0, epochs=2, batch_size=64, seed=6)
    m1, _ = train_dense(small_spec, cfg, (blobs, None))
    snapshot = [w.copy() for w in m1.weights]
    m2, _ = train_dense(small_spec, cfg, (blobs, None), start=m1)
    assert all(np.array_equal(a, b) for a, b in zip(m1.weights, snapshot))  # untouched
    assert not any(np.array_equal(a, b) for a, b in zip(m2.weights, m1.weights))


def test_divergence_raises_with_step(blobs, small_spec):
    cfg = TrainConfig(depth=3, lam=0.0, epochs=3, batch_size=64, lr=1e6,
                      schedule="constant", seed=0)
    with pytest.raises(DivergedError) as err:
        train(small_spec, cfg, (blobs, None))
    assert err.value.step is not None


def test_collapse_and_threshold_snaps_small_entries():
    spec = MlpSpec((2, 2))
    w = FactorizedParam([np.array([[2e-4, 1e-5], [0.5, 0.0]]), np.array([[1e-3, 1e-3], [1.0, 1.0]])])
    b = FactorizedParam([np.zeros(2), np.zeros(2)])
    m = FactorizedMlp(spec, 2, [w], [b])
    (wc, bc), = collapse_and_threshold(m, eps_tiny=1e-7)
    # 2e-7 survives the 1e-7 cutoff, 1e-8 does not
    np.testing.assert_array_equal(wc, [[2e-4 * 1e-3, 0.0], [0.5, 0.0]])
    with pytest.raises(ConfigError):
        collapse_and_threshold(m, eps_tiny=0.0)


def test_traces_csv_json_mirror(tmp_path, blobs, small_spec):
    cfg = TrainConfig(depth=2, lam=1e-4, epochs=3, batch_size=64, seed=9)
    _, traces = train(small_spec, cfg, (blobs, None))
    cp, jp = tmp_path / "t.csv", tmp_path / "t.json"
    write_traces_csv(cp, traces)
    write_traces_json(jp, traces)

    with open(cp) as fh:
        rows = list(csv.DictReader(fh))
    blob = json.loads(jp.read_text())
    assert list(rows[0].keys()) == trace_header(small_spec.n_layers)
    assert len(rows) == len(blob) == len(traces)
    for row, jrow, tr in zip(rows, blob, traces):
        assert int(row["epoch"]) == jrow["epoch"] == tr.epoch
        assert float(row["train_loss"]) == jrow["train_loss"] == tr.train_loss
        assert float(row["cr"]) == jrow["cr"] == tr.cr
        assert float(row["misalignment_l0"]) == jrow["misalignment_l0"]


def test_batch_size_larger_than_dataset(blobs, small_spec):
    with pytest.raises(ConfigError):
        train(small_spec, TrainConfig(depth=2, batch_size=10_000), (blobs, None))
