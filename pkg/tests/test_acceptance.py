"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime.

The headline dataset results need the public corpora and hours of compute,
so they are gated behind environment variables (see TestDatasetGated);
everything else runs on synthetic data at desk scale.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import contextlib
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from pcgscreen import dsp, spectrogram as sp
from pcgscreen.metrics import ConfusionMatrix, compute_metrics
from pcgscreen.nn import (
    AdamState,
    Checkpoint,
    Model,
    ModelConfig,
    adam_step,
    bce_loss,
    best_config,
    checkpoint_bytes,
    conv,
    dense,
    flatten,
    maxpool,
    preset,
)
from pcgscreen.nn.layers import Conv2D, Dense, MaxPool2D, sigmoid
from pcgscreen.signal_io import DatasetKind, build_manifest
from pcgscreen.synth import synth_corpus
from pcgscreen.training import (
    TrainConfig,
    TransferConfig,
    evaluate_checkpoint,
    make_splits,
    run_study3_transfer,
    train_model,
)


@contextlib.contextmanager
def criterion(name, budget_s):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.monotonic() - start:.1f}s)")
        raise
    elapsed = time.monotonic() - start
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.1f}s, budget {budget_s}s)")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget"


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def numeric_grad(f, arr, step=1e-5):
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        fp = f()
        arr[idx] = orig - step
        fm = f()
        arr[idx] = orig
        out[idx] = (fp - fm) / (2.0 * step)
    return out


def test_filter_correctness():
    with criterion("filter-correctness", budget_s=1.0):
        bp = dsp.design_bandpass()
        for f in (20.0, 400.0):
            db = 20.0 * np.log10(bp.magnitude(f)[0])
            assert abs(db - (-20.0 * np.log10(np.sqrt(2.0)))) < 0.1
        assert bp.magnitude(0.0)[0] == 0.0
        assert bp.magnitude(1000.0)[0] < 1e-12
        for b0, b1, b2, _, _ in bp.sections:  # exact zeros at z = +-1
            assert b1 == 0.0 and b0 == -b2
        assert np.all(np.abs(bp.poles()) < 1.0)


def test_stft_oracle_equivalence():
    with criterion("stft-oracle-equivalence", budget_s=30.0):
        window = sp.hamming()
        L = 128
        n = np.arange(L)
        dft_matrix = np.exp(-2j * np.pi * np.outer(n, n) / L)  # naive O(L^2)
        rng = np.random.default_rng(2024)
        for _ in range(100):
            x = rng.normal(size=16000)
            got = sp.stft(x, window).magnitudes
            frames = np.lib.stride_tricks.sliding_window_view(x, L)[::64]
            naive = np.abs((frames * window.coefficients) @ dft_matrix.T).T[:65]
            assert np.max(np.abs(got - naive)) < 1e-6

        t = np.arange(16000) / 2000.0
        tone = sp.stft(np.sin(2 * np.pi * 250.0 * t), window).magnitudes
        assert np.all(np.argmax(tone, axis=0) == 16)

        for _ in range(5):  # per-frame Parseval identity
            x = rng.normal(size=16000)
            grid = sp.stft(x, window).magnitudes
            frames = np.lib.stride_tricks.sliding_window_view(x, L)[::64]
            two_sided = (grid[0] ** 2 + grid[64] ** 2
                         + 2.0 * np.sum(grid[1:64] ** 2, axis=0))
            time_energy = L * np.sum((frames * window.coefficients) ** 2, axis=1)
            assert np.all(np.abs(two_sided - time_energy) <= 1e-6 * time_energy)


def test_hamming_window():
    with criterion("hamming-window", budget_s=1.0):
        w = sp.hamming(128)
        assert abs(w.coefficients[0] - 0.08) < 1e-12
        assert abs(w.coefficients[127] - 0.08) < 1e-12
        assert np.array_equal(w.coefficients, w.coefficients[::-1])
        assert w.alpha == 0.54


def test_gradient_checks():
    with criterion("gradient-checks", budget_s=120.0):
        rng = np.random.default_rng(7)

        def probe_check(layer, x):
            out = layer.forward(x)
            probe = rng.normal(size=out.shape)
            dx = layer.backward(probe.copy())
            num = numeric_grad(
                lambda: float(np.sum(layer.forward(x) * probe)), x)
            assert rel_error(dx, num) < 1e-4
            for key, arr in layer.params.items():
                layer.forward(x)
                layer.backward(probe.copy())
                analytic = layer.grads[key].copy()
                num = numeric_grad(
                    lambda: float(np.sum(layer.forward(x) * probe)), arr)
                assert rel_error(analytic, num) < 1e-4

        conv_layer = Conv2D("c", 2, 3, 3, 3, activation="relu")
        conv_layer.init_params(rng, np.float64)
        probe_check(conv_layer, rng.normal(size=(2, 2, 6, 7)))

        pool = MaxPool2D("p", 2, 2)
        x = rng.normal(size=(2, 2, 6, 6))
        out = pool.forward(x)
        probe = rng.normal(size=out.shape)
        dx = pool.backward(probe.copy())
        num = numeric_grad(lambda: float(np.sum(pool.forward(x) * probe)), x)
        assert rel_error(dx, num) < 1e-4

        dense_layer = Dense("d", 6, 3, activation="relu")
        dense_layer.init_params(rng, np.float64)
        probe_check(dense_layer, rng.normal(size=(4, 6)))

        # fused sigmoid + cross-entropy head gradient
        z = np.array([0.0])
        y1 = np.array([1.0])
        fused = sigmoid(z) - y1
        h = 1e-6
        numeric = (float(bce_loss(sigmoid(z + h), y1)[0])
                   - float(bce_loss(sigmoid(z - h), y1)[0])) / (2 * h)
        assert fused[0] == -0.5
        assert abs(fused[0] - numeric) < 1e-6

        # whole miniature model
        cfg = ModelConfig(name="mini", input_shape=(1, 8, 10), layers=(
            conv(2, 3, 3), maxpool(2, 2), conv(3, 3, 3), maxpool(2, 2),
            flatten(), dense(1, "sigmoid")))
        model = Model.build(cfg, seed=4, dtype=np.float64)
        xin = rng.normal(size=(4, 1, 8, 10))
        yin = np.array([0.0, 1.0, 1.0, 0.0])

        def model_loss():
            return float(np.mean(bce_loss(model.forward(xin), yin)))

        p = model.forward(xin)
        model.backward_from_logit_grad(((p - yin) / len(yin))[:, None])
        for name, arr in model.parameters().items():
            analytic = model.gradients()[name]
            num = numeric_grad(model_loss, arr)
            assert rel_error(analytic, num) < 1e-4, name


def test_shape_law():
    with criterion("shape-law", budget_s=30.0):
        cfg = best_config()
        assert cfg.flatten_size() == 9728
        model = Model.build(cfg, seed=0)
        p = model.forward(np.random.default_rng(0).random(
            (1, 137, 310), dtype=np.float32))
        assert p.shape == (1,)
        assert 0.0 < p[0] < 1.0
        for i in range(1, 8):
            c = preset(f"EXP{i}")
            c.validate()
            assert all(d >= 1 for shape in c.shape_trace() for d in shape)


def test_adam_step():
    with criterion("adam-update", budget_s=1.0):
        params = {"w": np.array([1.0])}
        state = AdamState(lr=0.001)
        adam_step(params, {"w": np.array([0.1])}, state)
        delta = params["w"][0] - 1.0
        assert abs(delta - (-9.9999990e-4)) < 1e-9

        params = {"w": np.array([0.5, -1.5, 0.0])}
        before = params["w"].tobytes()
        state = AdamState()
        for _ in range(3):
            adam_step(params, {"w": np.zeros(3)}, state)
        assert params["w"].tobytes() == before


def test_memorization_sanity():
    with criterion("memorization-sanity", budget_s=300.0):
        rng = np.random.default_rng(11)
        x = rng.random((32, 137, 310), dtype=np.float32)
        y = rng.integers(0, 2, 32)
        cfg = best_config(widths=(4, 8, 8, 4), block_dropout=0.0,
                          head_dropout=0.0, name="mini-best")
        tc = TrainConfig(epochs=60, batch_size=8, seed=1)
        res = train_model(cfg, tc, x, y, x[:4], y[:4])
        hit = [r.epoch for r in res.records if r.train_acc == 1.0]
        assert hit, "never reached 100% training accuracy"
        assert hit[0] <= 150


def test_synthetic_end_to_end():
    with criterion("synthetic-end-to-end", budget_s=900.0):
        recs = synth_corpus(200, 200, seed=1234)
        filt = dsp.design_bandpass()
        window = sp.hamming()
        images, labels = [], []
        for rec in recs:
            filtered = dsp.apply_filter(filt, rec)
            for seg in dsp.segment(filtered):
                images.append(sp.to_image(sp.stft(seg, window)).pixels)
                labels.append(int(seg.label))
        x = np.stack(images)
        y = np.asarray(labels)
        assert x.shape == (400, 137, 310)

        rng = np.random.default_rng(99)
        order = rng.permutation(len(y))
        n_test = len(y) // 10
        test_idx, train_idx = order[:n_test], order[n_test:]
        cfg = best_config(widths=(4, 8, 8, 4), name="e2e-mini")
        tc = TrainConfig(epochs=30, batch_size=16, seed=5)
        res = train_model(cfg, tc, x[train_idx], y[train_idx],
                          x[test_idx], y[test_idx])
        _, rep = evaluate_checkpoint(res.best, x[test_idx], y[test_idx])
        assert rep.accuracy is not None and rep.accuracy >= 0.95


def test_metrics_arithmetic():
    with criterion("metrics-arithmetic", budget_s=30.0):
        def rational(cm):
            def ratio(a, b):
                return Fraction(a, b) if b else None
            acc = ratio(cm.tp + cm.tn, cm.total)
            sens = ratio(cm.tp, cm.tp + cm.fn)
            spec = ratio(cm.tn, cm.tn + cm.fp)
            prec = ratio(cm.tp, cm.tp + cm.fp)
            f1 = None
            if prec is not None and sens is not None and prec + sens != 0:
                f1 = 2 * prec * sens / (prec + sens)
            return {"accuracy": acc, "sensitivity": sens, "specificity": spec,
                    "precision": prec, "f1": f1}

        rng = np.random.default_rng(3)
        for _ in range(1000):
            cm = ConfusionMatrix(*(int(v) for v in rng.integers(0, 100, 4)))
            got = compute_metrics(cm).as_dict()
            for name, exact in rational(cm).items():
                if exact is None:
                    assert got[name] is None
                else:
                    assert abs(got[name] - float(exact)) < 1e-12

        rep = compute_metrics(ConfusionMatrix(tp=96, fn=4, tn=92, fp=8))
        assert abs(rep.accuracy - 0.94) < 1e-9
        assert abs(rep.sensitivity - 0.96) < 1e-9
        assert abs(rep.specificity - 0.92) < 1e-9
        assert abs(rep.precision - 0.923077) < 1e-6
        assert abs(rep.f1 - 0.941176) < 1e-6


def test_split_hygiene_and_determinism():
    with criterion("split-hygiene", budget_s=120.0):
        rng = np.random.default_rng(13)
        for trial in range(100):
            n0 = int(rng.integers(20, 300))
            n1 = int(rng.integers(20, 300))
            labels = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
            rng.shuffle(labels)
            plan = make_splits(labels, k=3, seed=trial)
            for fold in plan.folds:
                tr, va, te = (set(fold.train), set(fold.valid), set(fold.test))
                assert not (tr & va) and not (tr & te) and not (va & te)
                assert len(tr) + len(va) + len(te) == n0 + n1
                for cls, n_cls in ((0, np.sum(labels == 0)),
                                   (1, np.sum(labels == 1))):
                    assert abs(np.sum(labels[fold.train] == cls)
                               - 0.75 * n_cls) < 1.0
                    assert abs(np.sum(labels[fold.valid] == cls)
                               - 0.15 * n_cls) < 1.0
                    assert abs(np.sum(labels[fold.test] == cls)
                               - 0.10 * n_cls) < 1.0

        labels = np.concatenate([np.zeros(40, int), np.ones(40, int)])
        a = make_splits(labels, k=4, seed=77)
        b = make_splits(labels, k=4, seed=77)
        for fa, fb in zip(a.folds, b.folds):
            assert np.array_equal(fa.train, fb.train)
            assert np.array_equal(fa.test, fb.test)

        cfg = ModelConfig(name="tiny", input_shape=(1, 12, 16), layers=(
            conv(2, 3, 3), maxpool(2, 2), flatten(), dense(1, "sigmoid")))
        data_rng = np.random.default_rng(5)
        x = data_rng.normal(0, 0.3, size=(40, 12, 16)).astype(np.float32)
        y = data_rng.integers(0, 2, 40)
        tc = TrainConfig(epochs=3, batch_size=8, seed=55)
        one = train_model(cfg, tc, x, y, x[:8], y[:8])
        two = train_model(cfg, tc, x, y, x[:8], y[:8])
        assert checkpoint_bytes(one.final) == checkpoint_bytes(two.final)


def test_transfer_freezing():
    with criterion("transfer-freezing", budget_s=300.0):
        rng = np.random.default_rng(6)
        shape = (1, 32, 48)
        cfg = best_config(input_shape=shape, widths=(2, 2, 2, 2),
                          block_dropout=0.0, head_dropout=0.0, name="t-mini")
        x = rng.normal(0, 0.4, size=(60, *shape[1:])).astype(np.float32)
        y = rng.integers(0, 2, 60)
        x[y == 1, :8, :8] += 1.5
        src = train_model(cfg, TrainConfig(epochs=2, batch_size=8, seed=41),
                          x, y, x[:10], y[:10]).final
        tcfg = TransferConfig(frozen=("conv1", "conv2", "conv3"),
                              learning_rate=1e-3, epochs=3, batch_size=8,
                              seed=42)
        result = run_study3_transfer(x, y, src, tcfg, k=2)
        for outcome in result.folds:
            final = outcome.result.final
            for layer in ("conv1", "conv2", "conv3"):
                assert final.params[f"{layer}.w"].tobytes() == \
                    src.params[f"{layer}.w"].tobytes()
                assert final.params[f"{layer}.b"].tobytes() == \
                    src.params[f"{layer}.b"].tobytes()
            assert final.params["conv4.w"].tobytes() != \
                src.params["conv4.w"].tobytes()
            assert final.params["dense1.w"].tobytes() != \
                src.params["dense1.w"].tobytes()


PHYSIONET_ENV = "PCGSCREEN_PHYSIONET_ROOT"
PASCAL_ENV = "PCGSCREEN_PASCAL_ROOT"


class TestDatasetGated:
    """Reproduction targets that need the public datasets on disk."""

    def test_physionet_prepare_counts(self):
        root = os.environ.get(PHYSIONET_ENV)
        if not root:
            pytest.skip(f"set {PHYSIONET_ENV} to run")
        with criterion("physionet-prepare-counts", budget_s=7200.0):
            manifest = build_manifest([Path(root)], DatasetKind.PHYSIONET)
            assert len(manifest) == 3240
            counts = manifest.counts()
            assert counts[list(counts)[0]] == 2575
            segments, failures = dsp.preprocess_dataset(manifest)
            assert not failures
            labels = [int(s.label) for s in segments]
            assert len(segments) == 7221
            assert labels.count(0) == 5501
            assert labels.count(1) == 1720

    def test_pascal_prepare_counts(self):
        root = os.environ.get(PASCAL_ENV)
        if not root:
            pytest.skip(f"set {PASCAL_ENV} to run")
        with criterion("pascal-prepare-counts", budget_s=3600.0):
            manifest = build_manifest([Path(root)], DatasetKind.PASCAL)
            assert len(manifest) == 683
            counts = manifest.counts()
            assert sum(counts.values()) == 683
            segments, _ = dsp.preprocess_dataset(manifest)
            assert len(segments) == 220

    def test_full_reproduction_report(self):
        # Full K-fold training against the reference numbers: hours of
        # compute.  Reported (reproduced / gap), never a hard failure, since
        # batch size, scaling and the frozen set are under-documented.
        if not (os.environ.get(PHYSIONET_ENV)
                and os.environ.get("PCGSCREEN_FULL_REPRO")):
            pytest.skip("set PCGSCREEN_FULL_REPRO and dataset roots to run")
        from pcgscreen.cli import main
        cache = Path(os.environ["PCGSCREEN_CACHE_DIR_REPRO"])
        code = main(["train", "--study", "1", "--cache-dir", str(cache),
                     "--out-dir", str(cache / "out"), "--preset", "EXP4"])
        assert code == 0
