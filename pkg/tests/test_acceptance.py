"""Acceptance suite: each test is one exit criterion, self-contained with
its own independent oracles, run at the stated tolerance and budget.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from blflab.activations import BoundedFn, blf_critical_points, evaluate
from blflab.attacks import AttackConfig, pgd, spsa, spsa_gradient_estimate
from blflab.cli import main as cli_main
from blflab.data import synth_blobs
from blflab.diagnostics import linf_operator_norm, loss_surface
from blflab.losses import LossSpec, batch_loss_and_gradient, batch_trades_terms
from blflab.nn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from blflab.nn.model import Model
from blflab.theoremlab import FreeLogitRun, divergence_report, optimize_free_logits

GOLDEN_BOUND = (math.sqrt(5.0) + 1.0) / 2.0


# --------------------------------------------------------------- criterion 1


def grid_scan_root_oracle():
    """High-resolution sign-change scan of 2 + z - 2*z*sigmoid(z) in mpmath.

    Independent of the library: its own arithmetic, its own precision, no
    bisection.  Three rounds of thousand-fold subdivision pin the root to
    ~1e-10.
    """
    import mpmath as mp

    mp.mp.dps = 30

    def f(z):
        return 2 + z - 2 * z / (1 + mp.e ** (-z))

    lo, hi = mp.mpf(2), mp.sqrt(5) + 1
    for _ in range(3):
        grid = [lo + (hi - lo) * i / 1000 for i in range(1001)]
        vals = [f(z) for z in grid]
        for i in range(1000):
            if vals[i] > 0 >= vals[i + 1]:
                lo, hi = grid[i], grid[i + 1]
                break
    return float((lo + hi) / 2)


def test_criterion_1_critical_point():
    start = time.time()
    cp = blf_critical_points()
    assert 2.0 < cp.z_max < math.sqrt(5) + 1
    oracle = grid_scan_root_oracle()
    assert abs(cp.z_max - oracle) < 1e-6
    assert cp.z_max == pytest.approx(2.39936, abs=1e-3)
    assert abs(evaluate(BoundedFn("blf"), cp.z_max) - cp.z_max / 2.0) < 1e-10
    assert cp.g_max == cp.z_max / 2.0
    assert time.time() - start < 5.0


# --------------------------------------------------------------- criterion 2


def test_criterion_2_fixed_points():
    start = time.time()
    from blflab.activations import softmax
    from blflab.theoremlab import check_label_smoothing_optimum, check_logit_squeezing_optimum

    run = optimize_free_logits(
        FreeLogitRun(spec=LossSpec("label_smoothing", alpha=0.1), m=10, steps=200_000, record_every=1000)
    )
    assert run.converged and run.final_grad_linf < 1e-8
    sm = softmax(run.trajectory.final_logits())
    assert abs(sm[0] - 0.9) < 1e-4
    report = check_label_smoothing_optimum(0.1, 10, run)
    assert report.residuals["log_fixed_point_t"] < 1e-6

    for lam in (0.5, 1.0, 100.0):
        run = optimize_free_logits(
            FreeLogitRun(spec=LossSpec("logit_squeezing", lam=lam), m=10, steps=200_000, record_every=1000)
        )
        assert run.converged and run.final_grad_linf < 1e-8
        report = check_logit_squeezing_optimum(lam, run)
        assert report.max_residual() < 1e-6
        z = run.trajectory.final_logits()
        assert 0.0 <= z[0] <= 1.0 / lam
        assert np.all(z[1:] >= -1.0 / lam) and np.all(z[1:] <= 0.0)
    assert time.time() - start < 10.0


# --------------------------------------------------------------- criterion 3


def test_criterion_3_divergence_vs_finite_optimum():
    start = time.time()
    z_max = blf_critical_points().z_max

    ce = optimize_free_logits(
        FreeLogitRun(spec=LossSpec("ce"), m=10, steps=10_000, lr=0.1, grad_tol=0.0)
    )
    rep = divergence_report(ce, threshold=5.0, of="logits")
    assert rep.monotone_tail and rep.final_linf > 5.0

    tanh_run = optimize_free_logits(
        FreeLogitRun(
            spec=LossSpec("ce"),
            activation=BoundedFn("tanh", 1.0),
            m=10,
            steps=10_000,
            lr=2.0,
            grad_tol=0.0,
        )
    )
    rep = divergence_report(tanh_run, threshold=5.0, of="pre_logits")
    assert rep.monotone_tail and rep.final_linf > 5.0
    assert np.all(np.abs(tanh_run.trajectory.logits) < 1.0)

    for gamma in (0.1, 0.5, 1.0):
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("blf", gamma),
                m=10,
                steps=60_000,
                record_every=1000,
            )
        )
        pre = run.trajectory.final_pre_logits()
        assert abs(pre[0] - z_max) < 1e-3
        assert np.all(np.abs(pre[1:] + z_max) < 1e-3)
        logits = run.trajectory.final_logits()
        assert np.all(np.abs(logits) > gamma)
        assert np.all(np.abs(logits) < gamma * GOLDEN_BOUND)
    assert time.time() - start < 30.0


# --------------------------------------------------------------- criterion 4


HOOKS = ("identity", "tanh", "sigmoid", "blf", "sine_wave", "single_wave")


def _tiny_dense(hook, learnable=False):
    rng = np.random.default_rng(0)
    layers = [Dense(6, 5, rng=rng), ReLU(), Dense(5, 3, rng=rng)]
    return Model(layers, hook=BoundedFn(hook, 0.8), learnable_gamma=learnable)


def _tiny_conv(hook):
    rng = np.random.default_rng(0)
    layers = [
        Conv2D(1, 2, 3, 3, rng=rng),
        ReLU(),
        MaxPool2D(2, 2),
        Flatten(),
        Dropout(0.5),
        Dense(8, 3, rng=rng),
    ]
    return Model(layers, hook=BoundedFn(hook))


def _fd_check(model, loss_at, analytic_flat, h=1e-4, rtol=1e-4):
    """Central differences over every parameter vs the analytic gradients."""
    idx = 0
    for p in model.parameters():
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = analytic_flat[idx + i]
            assert abs(analytic - numeric) <= rtol * max(abs(numeric), 1e-6), (
                f"param grad mismatch at {idx + i}: {analytic} vs {numeric}"
            )
        idx += flat.size


def _flatten_grads(grads):
    return np.concatenate([g.reshape(-1) for per_layer in grads.layer_grads for g in per_layer])


def test_criterion_4_gradient_integrity():
    x = np.random.default_rng(0).uniform(0, 1, size=(3, 6))
    y = np.array([0, 2, 1])
    specs = [
        LossSpec("ce"),
        LossSpec("label_smoothing", alpha=0.1),
        LossSpec("logit_squeezing", lam=0.5),
    ]
    for hook in HOOKS:
        for spec in specs:
            model = _tiny_dense(hook)
            _, grads, _ = model.loss_and_gradients(x, y, spec)
            loss_at = lambda: model.loss_and_gradients(x, y, spec)[0]
            _fd_check(model, loss_at, _flatten_grads(grads))

        # trades couples two forward passes through the same parameters
        model = _tiny_dense(hook)
        x_adv = np.clip(x + 0.05, 0.0, 1.0)

        def trades_loss_at():
            sc = model.forward(x)
            sa = model.forward(x_adv)
            return batch_trades_terms(sc.logits, sa.logits, y, 3.0)[0]

        sc = model.forward(x)
        sa = model.forward(x_adv)
        _, d_clean, d_adv = batch_trades_terms(sc.logits, sa.logits, y, 3.0)
        gc = model.backward(sc, d_clean)
        ga = model.backward(sa, d_adv)
        combined = np.concatenate(
            [
                (c + a).reshape(-1)
                for lc, la in zip(gc.layer_grads, ga.layer_grads)
                for c, a in zip(lc, la)
            ]
        )
        _fd_check(model, trades_loss_at, combined)

    # conv/pool/flatten/dropout stack with a frozen dropout mask
    xc = np.random.default_rng(1).uniform(0, 1, size=(2, 1, 6, 6))
    yc = np.array([1, 0])
    model = _tiny_conv("blf")
    factory = lambda: np.random.default_rng(99)
    _, grads, _ = model.loss_and_gradients(xc, yc, LossSpec("ce"), train=True, rng=factory())
    loss_at = lambda: model.loss_and_gradients(xc, yc, LossSpec("ce"), train=True, rng=factory())[0]
    _fd_check(model, loss_at, _flatten_grads(grads))

    # learnable scale parameter
    model = _tiny_dense("blf", learnable=True)
    _, grads, _ = model.loss_and_gradients(x, y, LossSpec("ce"))
    h = 1e-4
    model.gamma_tilde += h
    up = model.loss_and_gradients(x, y, LossSpec("ce"))[0]
    model.gamma_tilde -= 2 * h
    down = model.loss_and_gradients(x, y, LossSpec("ce"))[0]
    model.gamma_tilde += h
    numeric = (up - down) / (2 * h)
    assert abs(grads.gamma_tilde_grad - numeric) <= 1e-4 * max(abs(numeric), 1e-6)


# --------------------------------------------------------------- criterion 5


def test_criterion_5_attack_invariants():
    start = time.time()
    rng = np.random.default_rng(0)
    outputs = 0
    for trial in range(10):
        layers = [Dense(8, 6, rng=rng), ReLU(), Dense(6, 3, rng=rng)]
        model = Model(layers, hook=BoundedFn("blf" if trial % 2 else "identity"))
        x = rng.uniform(0, 1, size=(50, 8))
        y = rng.integers(0, 3, size=50)
        eps = float(rng.uniform(0.0, 0.3))
        cfg = AttackConfig(epsilon=eps, step_size=0.05, iterations=5, random_init=True)
        adv = pgd(model, x, y, cfg, rng=np.random.default_rng(trial))
        assert np.all(np.abs(adv - x) <= eps + 1e-12)
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        outputs += 50

        scfg = AttackConfig(
            kind="spsa", epsilon=eps, iterations=3, spsa_directions=8, spsa_lr=0.05
        )
        adv = spsa(model, x, y, scfg, rng=np.random.default_rng(trial))
        assert np.all(np.abs(adv - x) <= eps + 1e-12)
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        outputs += 50
    assert outputs == 1000

    # closed-form saturation on a hand-built linear binary model
    w = np.array([[0.6, -0.2], [-0.4, 0.5], [0.1, -0.9], [0.8, 0.3], [-0.7, -0.1]])
    layer = Dense(5, 2)
    layer.weight[...] = w
    layer.bias[...] = 0.0
    model = Model([layer])
    x = np.random.default_rng(7).uniform(0.2, 0.8, size=(20, 5))
    y = np.zeros(20, dtype=np.int64)
    closed = np.clip(x + 0.1 * np.sign(w[:, 1] - w[:, 0]), 0.0, 1.0)
    adv = pgd(model, x, y, AttackConfig(epsilon=0.1, step_size=0.1, iterations=4, random_init=False))
    np.testing.assert_allclose(adv, closed, atol=1e-12)

    # estimator quality on a quadratic with 2048 directions
    c = np.random.default_rng(8).uniform(0, 1, size=20)
    x0 = np.random.default_rng(9).uniform(0, 1, size=(1, 20))
    est = spsa_gradient_estimate(
        lambda b: np.sum((b - c) ** 2, axis=1), x0, delta=0.01, directions=2048,
        rng=np.random.default_rng(10),
    )
    true = 2 * (x0 - c)
    cos = float(np.sum(est * true) / (np.linalg.norm(est) * np.linalg.norm(true)))
    assert cos > 0.9
    assert time.time() - start < 60.0


# --------------------------------------------------------------- criterion 6


def _mnist_dir() -> Path | None:
    root = Path(os.environ.get("BLFLAB_MNIST_DIR", "data"))
    needed = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]
    if all((root / n).exists() for n in needed):
        return root
    return None


def test_criterion_6_desk_scale_twins(tmp_path):
    start = time.time()
    mnist = _mnist_dir()
    if mnist is not None:
        base = {
            "model": {
                "arch": "conv",
                "input_shape": [1, 28, 28],
                "classes": 10,
                "conv_channels": [10, 20],
                "kernel": 5,
                "fc": [50],
            },
            "data": {
                "source": "idx",
                "images_path": str(mnist / "train-images-idx3-ubyte"),
                "labels_path": str(mnist / "train-labels-idx1-ubyte"),
                "train_count": 1000,
                "eval_count": 500,
            },
            "train": {"loss": {"family": "ce"}, "lr": 0.01, "momentum": 0.9, "epochs": 5},
        }
    else:
        base = {
            "model": {"arch": "dense", "input_shape": [64], "classes": 10, "hidden": [32]},
            "data": {"source": "blobs", "classes": 10, "per_class": 100, "dim": 64, "spread": 0.05},
            "train": {"loss": {"family": "ce"}, "lr": 0.1, "momentum": 0.9, "epochs": 5},
        }
    base["eval_epsilons"] = []
    gamma = 1.0

    stats = {}
    for hook in ("blf", "identity"):
        cfg = json.loads(json.dumps(base))
        cfg["model"]["hook"] = hook
        cfg["model"]["gamma"] = gamma
        cfg_path = tmp_path / f"{hook}.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / hook
        assert cli_main(["train", "--config", str(cfg_path), "--seed", "0", "--out", str(out)]) == 0
        record = json.loads((out / "record.json").read_text())
        stats[hook] = record["logit_stats"]["mean_linf"]

    bound = gamma * GOLDEN_BOUND
    assert stats["blf"] <= bound
    assert stats["identity"] > bound
    assert time.time() - start < 300.0


# --------------------------------------------------------------- criterion 7


def test_criterion_7_diagnostics():
    start = time.time()
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_in, n_out = int(rng.integers(2, 10)), int(rng.integers(2, 10))
        layer = Dense(n_in, n_out)
        layer.weight[...] = rng.normal(scale=2.0, size=(n_in, n_out))
        norm = linf_operator_norm(layer)
        # Brute force over unit-Linf extreme points: every per-output sign
        # pattern plus random sign probes.
        candidates = np.sign(layer.weight.T)
        candidates[candidates == 0] = 1.0
        probes = rng.integers(0, 2, size=(10_000, n_in)) * 2.0 - 1.0
        allv = np.vstack([candidates, probes])
        brute = float(np.abs(allv @ layer.weight).max())
        assert abs(norm - brute) < 1e-9

    model_rng = np.random.default_rng(1)
    model = Model([Dense(12, 6, rng=model_rng), ReLU(), Dense(6, 3, rng=model_rng)])
    x = model_rng.uniform(0, 1, size=12)
    surf = loss_surface(model, x, label=2, direction_seed=4)
    assert surf.grid.shape == (65, 65)
    state = model.forward(x[None, :])
    clean, _ = batch_loss_and_gradient(LossSpec("ce"), state.logits, np.array([2]))
    assert surf.grid[32, 32] == clean          # bit-exact, same code path
    assert surf.max_min_diff >= 0.0
    assert time.time() - start < 30.0


# --------------------------------------------------------------- criterion 8


def _strip_timing(text: str) -> str:
    return "\n".join(
        line
        for line in text.splitlines()
        if '"created_unix"' not in line and '"wall_clock_seconds"' not in line
    )


def test_criterion_8_reproducibility(tmp_path):
    cfg = {
        "model": {"arch": "dense", "input_shape": [16], "classes": 3, "hidden": [8], "hook": "blf"},
        "data": {"source": "blobs", "classes": 3, "per_class": 40, "dim": 16, "spread": 0.05},
        "train": {"loss": {"family": "ce"}, "epochs": 3, "batch_size": 16},
        "attack": {"kind": "pgd", "epsilon": 0.1, "step_size": 0.05, "iterations": 4},
        "eval_epsilons": [0.0, 0.1],
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli_main(["train", "--config", str(cfg_path), "--seed", "11", "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    assert _strip_timing((a / "record.json").read_text()) == _strip_timing((b / "record.json").read_text())
    assert (a / "model.blflab").read_bytes() == (b / "model.blflab").read_bytes()
    assert (a / "accuracy_vs_eps.csv").read_bytes() == (b / "accuracy_vs_eps.csv").read_bytes()

    # theorem reports reproduce as well
    for name in ("t1", "t2"):
        out = tmp_path / name
        assert (
            cli_main(
                [
                    "theorems",
                    "--seed", "3",
                    "--out", str(out),
                    "--override", "theorems.blf_gammas=[0.5]",
                    "--override", "theorems.smoothing_alphas=[0.1]",
                    "--override", "theorems.squeezing_lambdas=[1.0]",
                ]
            )
            == 0
        )
    assert _strip_timing((tmp_path / "t1" / "record.json").read_text()) == _strip_timing(
        (tmp_path / "t2" / "record.json").read_text()
    )
