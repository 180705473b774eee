"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criterion 8 runs the full 5-repetition synthetic sweep and dominates the
runtime (a few minutes); everything else completes in seconds.
"""

import csv
import math
from contextlib import contextmanager

import numpy as np
import pytest

from rfcnn.arch import LayerGeom, build_cp_resnet, build_ss_resnet, build_vgg
from rfcnn.checkpoint import checkpoint_bytes, parse, restore_model, save_checkpoint, serialize
from rfcnn.data import generate_synthetic
from rfcnn.metrics import PredictionSet, average_precision, f1_classical, f1_posneg
from rfcnn.model import instantiate
from rfcnn.nn import (
    batchnorm2d,
    bce_with_logits,
    conv2d,
    global_avg_pool,
    linear,
    maxpool2d,
)
from rfcnn.optim import Adam
from rfcnn.rf import compute_rf, empirical_rf
from rfcnn.schemas import ExperimentConfig
from rfcnn.shake import sample_coefficients, shake_combine
from rfcnn.tensor import Tensor, relu, sigmoid
from rfcnn.training import TrainConfig, mixup_batch, train_model

from gradcheck import finite_difference_check
from test_metrics import ap_threshold_enumeration
from test_rf import RF_TABLE, random_geometry
from collections import OrderedDict


@contextmanager
def criterion(capsys, number, description):
    try:
        yield
    except Exception:
        with capsys.disabled():
            print(f"[criterion {number}] FAIL: {description}")
        raise
    with capsys.disabled():
        print(f"[criterion {number}] PASS: {description}")


def test_criterion_1_rf_table_exactness(capsys):
    with criterion(capsys, 1, "rho 0..21 reproduces all 22 published max-RF values exactly"):
        computed = [compute_rf(build_cp_resnet(rho, n_classes=1)).max_rf for rho in range(22)]
        assert computed == RF_TABLE


def test_criterion_2_vgg_base_rf(capsys):
    with criterion(capsys, 2, "base VGG (no removals) has max RF 583x583"):
        assert compute_rf(build_vgg(0, n_classes=1)).max_rf == 583


def test_criterion_3_empirical_rf_agreement(capsys):
    with criterion(capsys, 3, "gradient-support RF equals analytic RF "
                              "(rho 0..3 plus 20 random small specs)"):
        for rho, input_size in ((0, 64), (1, 96), (2, 96), (3, 128)):
            spec = build_cp_resnet(rho, n_classes=1)
            assert empirical_rf(spec, input_size) == compute_rf(spec).max_rf
        rng = np.random.default_rng(777)
        checked = 0
        while checked < 20:
            layers = random_geometry(rng)
            analytic = compute_rf(layers).max_rf
            if analytic > 120:
                continue
            assert empirical_rf(layers, 160) == analytic
            checked += 1


class TestCriterion4GradientChecks:
    """Central finite differences at float64, 10 seeds per op, rel err < 1e-4."""

    N_SEEDS = 10
    TOL = 1e-4

    def _scalarized(self, rng, op, *arrays, **kwargs):
        r = rng.standard_normal(op(*[Tensor(a) for a in arrays], **kwargs).shape)

        def fn(*tensors):
            return (op(*tensors, **kwargs) * Tensor(r)).sum()

        return fn

    def test_all_ops(self, capsys):
        with criterion(capsys, 4, "every differentiable op passes 10-seed FD checks at 1e-4"):
            for seed in range(self.N_SEEDS):
                rng = np.random.default_rng(seed)

                x = rng.standard_normal((1, 2, 5, 5))
                w = rng.standard_normal((3, 2, 3, 3))
                fn = self._scalarized(rng, conv2d, x, w, stride=1, padding=0)
                assert finite_difference_check(fn, [x, w]) < self.TOL

                fn = self._scalarized(rng, conv2d, x, w, stride=2, padding=1)
                assert finite_difference_check(fn, [x, w]) < self.TOL

                xp = rng.standard_normal((1, 2, 4, 4))
                while True:  # keep argmax margins clear of the FD step
                    windows = np.lib.stride_tricks.sliding_window_view(
                        xp, (2, 2), axis=(2, 3))[:, :, ::2, ::2].reshape(-1, 4)
                    s = np.sort(windows, axis=1)
                    if np.min(s[:, 1:] - s[:, :-1]) > 1e-3:
                        break
                    xp = rng.standard_normal((1, 2, 4, 4))
                fn = self._scalarized(rng, maxpool2d, xp, k=2, stride=2)
                assert finite_difference_check(fn, [xp]) < self.TOL

                xb = rng.standard_normal((3, 2, 4, 4))
                gamma = rng.uniform(0.5, 1.5, size=2)
                beta = rng.standard_normal(2)
                for mode in ("train", "eval"):
                    r = rng.standard_normal(xb.shape)

                    def bn_fn(xt, gt, bt, _r=r, _mode=mode):
                        rm = np.full(2, 0.2)
                        rv = np.full(2, 1.3)
                        out = batchnorm2d(xt, gt, bt, rm, rv, _mode)
                        return (out * Tensor(_r)).sum()

                    assert finite_difference_check(bn_fn, [xb, gamma, beta]) < self.TOL

                xr = rng.standard_normal((4, 6))
                xr += np.sign(xr) * 0.02  # keep away from the relu kink
                fn = self._scalarized(rng, relu, xr)
                assert finite_difference_check(fn, [xr]) < self.TOL

                xs = rng.standard_normal((4, 6))
                fn = self._scalarized(rng, sigmoid, xs)
                assert finite_difference_check(fn, [xs]) < self.TOL

                xl = rng.standard_normal((3, 4))
                wl = rng.standard_normal((2, 4))
                bl = rng.standard_normal(2)
                fn = self._scalarized(rng, linear, xl, wl, bl)
                assert finite_difference_check(fn, [xl, wl, bl]) < self.TOL

                xg = rng.standard_normal((2, 3, 4, 4))
                fn = self._scalarized(rng, global_avg_pool, xg)
                assert finite_difference_check(fn, [xg]) < self.TOL

                logits = rng.standard_normal((4, 3))
                targets = rng.uniform(0, 1, size=(4, 3))
                mask = rng.uniform(size=(4, 3)) > 0.25
                mask[0, 0] = True
                assert finite_difference_check(
                    lambda t: bce_with_logits(t, targets, mask), [logits]) < self.TOL

                a = rng.standard_normal((3, 4))
                b = rng.standard_normal((1, 4))  # broadcast add / mul
                r2 = rng.standard_normal((3, 4))
                assert finite_difference_check(
                    lambda at, bt: ((at + bt) * Tensor(r2)).sum(), [a, b]) < self.TOL
                assert finite_difference_check(
                    lambda at, bt: ((at * bt) * Tensor(r2)).sum(), [a, b]) < self.TOL

                m1 = rng.standard_normal((3, 4))
                m2 = rng.standard_normal((4, 2))
                rm = rng.standard_normal((3, 2))
                assert finite_difference_check(
                    lambda at, bt: ((at @ bt) * Tensor(rm)).sum(), [m1, m2]) < self.TOL

                xsum = rng.standard_normal((3, 5))
                assert finite_difference_check(lambda t: t.sum(), [xsum]) < self.TOL
                assert finite_difference_check(lambda t: t.mean(), [xsum]) < self.TOL
                r_flat = rng.standard_normal(15)
                assert finite_difference_check(
                    lambda t: (t.reshape(15) * Tensor(r_flat)).sum(), [xsum]) < self.TOL
                xpow = rng.uniform(0.5, 2.0, size=(3, 3))
                assert finite_difference_check(lambda t: (t**3).sum(), [xpow]) < self.TOL

                # shake in eval: alpha = beta = 0.5 makes the op FD-consistent
                sx = [rng.standard_normal((2, 3)) for _ in range(3)]
                coeffs = sample_coefficients(2, None, mode="eval")
                rs = rng.standard_normal((2, 3))
                assert finite_difference_check(
                    lambda xt, b1, b2: (shake_combine(xt, b1, b2, coeffs) * Tensor(rs)).sum(),
                    sx) < self.TOL


def test_criterion_5_shake_contract(capsys):
    with criterion(capsys, 5, "shake eval bit-deterministic at 0.5; backward ratio is "
                              "beta/(1-beta); MC mean of alpha within 0.01 over 1e5 draws"):
        # eval passes bit-deterministic on a full shake model
        model = instantiate(build_ss_resnet(2, n_classes=3, base_width=4), seed=0)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 64, 64)).astype(np.float32))
        out_a = model.forward(x, mode="eval")
        out_b = model.forward(x, mode="eval")
        assert np.array_equal(out_a.data, out_b.data)

        # forward/backward coefficient independence on the scalar two-branch model
        for alpha, beta in ((0.9, 0.3), (0.1, 0.7), (0.5, 0.25)):
            w1 = Tensor(np.array([1.3]), requires_grad=True)
            w2 = Tensor(np.array([0.4]), requires_grad=True)
            xs = Tensor(np.array([2.0]))
            coeffs = sample_coefficients(1, np.random.default_rng(0))
            coeffs.alpha_forward[:] = alpha
            coeffs.beta_backward[:] = beta
            out = shake_combine(xs, w1 * xs, w2 * xs, coeffs)
            assert out.data[0] == pytest.approx(2.0 + alpha * 2.6 + (1 - alpha) * 0.8, rel=1e-12)
            out.sum().backward()
            assert w1.grad[0] / w2.grad[0] == pytest.approx(beta / (1 - beta), rel=1e-12)

        draws = sample_coefficients(100_000, np.random.default_rng(123))
        assert abs(draws.alpha_forward.mean() - 0.5) < 0.01


def test_criterion_6_metric_oracles(capsys):
    with criterion(capsys, 6, "AP matches threshold-enumeration oracle on 200 instances "
                              "to 1e-9; F-scores match hand confusion matrices (incl. 11/15)"):
        rng = np.random.default_rng(2718)
        for _ in range(200):
            n = int(rng.integers(3, 50))
            scores = rng.uniform(size=n)
            if rng.uniform() < 0.25:
                scores = np.round(scores, 1)
            labels = (rng.uniform(size=n) < 0.35).astype(int)
            if labels.sum() == 0:
                labels[int(rng.integers(0, n))] = 1
            assert abs(
                average_precision(scores, labels)
                - ap_threshold_enumeration(scores.tolist(), labels.tolist())
            ) < 1e-9

        # classical: TP=1 FP=1 FN=0 -> 2/3
        preds = PredictionSet(scores=np.array([[0.9], [0.8], [0.1]]),
                              labels=np.array([[1], [0], [0]]))
        assert f1_classical(preds, 0.5) == pytest.approx(2.0 / 3.0, abs=1e-12)
        # pos/neg: TP=1 FP=1 FN=0 TN=2 -> (2/3 + 4/5) / 2 = 11/15
        preds = PredictionSet(scores=np.array([[0.9], [0.8], [0.1], [0.2]]),
                              labels=np.array([[1], [0], [0], [0]]))
        assert f1_posneg(preds, 0.5) == pytest.approx(11.0 / 15.0, abs=1e-12)
        # perfect predictor
        perfect = PredictionSet(scores=np.array([[0.9], [0.1]]), labels=np.array([[1], [0]]))
        assert f1_classical(perfect, 0.5) == 1.0 and f1_posneg(perfect, 0.5) == 1.0


def test_criterion_7_training_protocol(capsys, tmp_path):
    from rfcnn.experiments import run_training

    with criterion(capsys, 7, "Adam matches closed form to 1e-12; mixup exactly affine; "
                              "same-seed end-to-end training yields identical CSV"):
        # Adam against a step-by-step python-float reference
        p = Tensor(np.array([0.5]), requires_grad=True)
        opt = Adam(OrderedDict(p=p), lr=0.02)
        m = v = 0.0
        theta = 0.5
        rng = np.random.default_rng(0)
        for t in range(1, 31):
            g = float(rng.standard_normal())
            p.grad = np.array([g])
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.02 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(p.data[0] - theta) < 1e-12

        # mixup is exactly the affine expression, bit for bit
        x1 = rng.standard_normal((5, 4))
        x2 = rng.standard_normal((5, 4))
        y1 = rng.uniform(size=(5, 2))
        y2 = rng.uniform(size=(5, 2))
        for lam in (0.0, 0.3, 1.0):
            x, y, _ = mixup_batch(x1, y1, x2, y2, lam)
            assert np.array_equal(x, lam * x1 + (1 - lam) * x2)
            assert np.array_equal(y, lam * y1 + (1 - lam) * y2)

        cfg = ExperimentConfig.model_validate({
            "arch": "cp_resnet", "rho": 0, "width": 4,
            "dataset": {"kind": "synthetic", "n_classes": 3, "pattern_size": 5,
                        "n_train": 32, "n_test": 16, "seed": 4},
            "train": {"epochs": 3, "batch_size": 16, "learning_rate": 1e-3,
                      "seed": 11, "eval_window": 2, "checkpoint_every": 0,
                      "mixup_enabled": True, "mixup_concentration": 0.2},
            "output_dir": str(tmp_path / "a"),
        })
        result_a = run_training(cfg)
        cfg_b = cfg.model_copy(update={"output_dir": str(tmp_path / "b")})
        result_b = run_training(cfg_b)
        csv_a = (result_a.run_dir / "metrics.csv").read_bytes()
        csv_b = (result_b.run_dir / "metrics.csv").read_bytes()
        assert csv_a == csv_b


def _kendall_tau(xs, ys):
    concordant = discordant = 0
    for i in range(len(xs)):
        for j in range(i + 1, len(xs)):
            s = np.sign(xs[j] - xs[i]) * np.sign(ys[j] - ys[i])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    return (concordant - discordant) / (len(xs) * (len(xs) - 1) / 2)


def test_criterion_8_rf_generalization_sweep(capsys, tmp_path):
    """Reduced-width synthetic reproduction of the loss-versus-RF behavior."""
    from rfcnn.experiments import run_sweep

    rho_values = [0, 3, 7, 12, 21]
    with criterion(capsys, 8, "5-seed synthetic rho sweep: train loss non-increasing in RF "
                              "(tau <= 0) and test loss at rho=21 above the minimum, >= 4/5"):
        passes = 0
        for rep in range(5):
            base = ExperimentConfig.model_validate({
                "arch": "cp_resnet", "rho": 0, "width": 8,
                "dataset": {"kind": "synthetic", "n_classes": 5, "pattern_size": 7,
                            "n_train": 192, "n_test": 96, "seed": 1000 + rep},
                "train": {"epochs": 12, "batch_size": 24, "learning_rate": 1e-3,
                          "seed": rep, "eval_window": 3, "checkpoint_every": 0},
                "output_dir": str(tmp_path / f"rep{rep}"),
            })
            results, csv_path = run_sweep(base, rho_values)
            assert all(r.status == "completed" for r in results)
            trains = [r.final_epoch.train_loss for r in results]
            tests = [r.final_epoch.test_loss for r in results]
            tau = _kendall_tau(rho_values, trains)
            cond_a = tau <= 0.0
            cond_b = tests[-1] > min(tests)
            with capsys.disabled():
                print(f"  rep {rep}: tau={tau:+.2f} train={np.round(trains, 3).tolist()} "
                      f"test={np.round(tests, 3).tolist()} a={cond_a} b={cond_b}")
            if cond_a and cond_b:
                passes += 1
            with open(csv_path) as fh:
                rows = list(csv.DictReader(fh))
            assert {row["rf"] for row in rows} == {"23", "55", "135", "295", "583"}
        assert passes >= 4, f"only {passes}/5 repetitions satisfied both conditions"


def test_criterion_9_checkpoint_round_trip(capsys, tmp_path):
    with criterion(capsys, 9, "save -> load -> forward is bit-identical; container "
                              "round-trip is byte-exact"):
        dataset = generate_synthetic(3, 5, 32, 16, seed=6)
        model = instantiate(build_cp_resnet(1, n_classes=3, base_width=4), seed=2)
        opt_cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-3,
                              seed=0, eval_window=1)
        train_model(model, dataset, opt_cfg)
        path = tmp_path / "model.rfcnn"
        save_checkpoint(path, model)
        restored = restore_model(parse(path.read_bytes()))
        x = Tensor(dataset.test.stacked()[:8])
        np.testing.assert_array_equal(
            model.forward(x, mode="eval").data,
            restored.forward(x, mode="eval").data,
        )

        opt = Adam(model.parameters(), lr=1e-3)
        for p in model.parameters().values():
            p.grad = np.ones_like(p.data)
        opt.step()
        blob = checkpoint_bytes(model, opt)
        ckpt = parse(blob)
        assert serialize(ckpt.spec.to_text(), ckpt.arrays, ckpt.moments, ckpt.step_count) == blob
