"""Experiment runners: each CLI/service command maps to one function that
takes a validated ExperimentConfig and returns a RunRecord plus named
artifact files.

Seeding layout: the dataset is built from the experiment seed alone, so
two runs differing only in their hook train on identical data; repeat r
offsets every other stream by r (init, shuffling, dropout, attacks).
"""

from __future__ import annotations

import base64
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import __version__
from .activations import BoundedFn, blf_critical_points, evaluate
from .attacks import evaluate_robust_accuracy, surrogate_pgd
from .data import Dataset, load_idx, synth_blobs, take_subset
from .diagnostics import logit_stats, loss_surface, operator_norms, surface_to_csv
from .losses import LossSpec
from .nn.checkpoint import deserialize_model, serialize_model
from .nn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from .nn.model import Model
from .nn.train import TrainConfig, train
from .schemas import (
    EpochMetricsModel,
    EpsAccuracy,
    ExperimentConfig,
    LogitStatsModel,
    ModelSpec,
    OperatorNormsModel,
    RunRecord,
    SurfaceSummaryModel,
    SurrogateEvalModel,
    SweepRowModel,
    TheoremCheckModel,
    TimingModel,
)
from .theoremlab import (
    FreeLogitRun,
    check_label_smoothing_optimum,
    check_logit_squeezing_optimum,
    divergence_report,
    lipschitz_evidence,
    optimize_free_logits,
)

GOLDEN = (math.sqrt(5.0) + 1.0) / 2.0


@dataclass
class ExperimentResult:
    record: RunRecord
    artifacts: dict[str, bytes]


# ------------------------------------------------------------- construction


def build_model(spec: ModelSpec, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    layers = []
    if spec.arch == "dense":
        dims = [spec.input_shape[0], *spec.hidden, spec.classes]
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            layers.append(Dense(fan_in, fan_out, rng=rng))
            if i < len(dims) - 2:
                layers.append(ReLU())
        if spec.dropout > 0:
            layers.insert(len(layers) - 1, Dropout(spec.dropout))
    else:
        c, h, w = spec.input_shape
        for i, cout in enumerate(spec.conv_channels):
            layers.append(Conv2D(c, cout, spec.kernel, spec.kernel, rng=rng))
            layers.append(ReLU())
            layers.append(MaxPool2D(spec.pool, spec.pool))
            if spec.dropout > 0 and i == 0:
                layers.append(Dropout(spec.dropout))
            h = (h - spec.kernel + 1 - spec.pool) // spec.pool + 1
            w = (w - spec.kernel + 1 - spec.pool) // spec.pool + 1
            c = cout
        layers.append(Flatten())
        flat = c * h * w
        for width in spec.fc:
            layers.append(Dense(flat, width, rng=rng))
            layers.append(ReLU())
            if spec.dropout > 0:
                layers.append(Dropout(spec.dropout))
            flat = width
        layers.append(Dense(flat, spec.classes, rng=rng))
    return Model(
        layers,
        hook=BoundedFn(spec.hook, spec.gamma),
        learnable_gamma=spec.learnable_gamma,
        gamma_tilde=spec.gamma_tilde_init,
    )


def build_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = config.data
    if d.source == "idx":
        train_ds = load_idx(d.images_path, d.labels_path, name="idx-train")
        if d.eval_images_path:
            eval_ds = load_idx(d.eval_images_path, d.eval_labels_path, name="idx-eval")
        else:
            eval_ds = train_ds
    else:
        shape = tuple(d.image_shape) if d.image_shape else None
        # One draw, split per class block: train and eval share the same
        # cluster centers and differ only in their noise samples.
        eval_per_class = max(d.per_class // 4, 2)
        total = d.per_class + eval_per_class
        full = synth_blobs(d.classes, total, d.dim, d.spread, seed=config.seed, image_shape=shape)
        offsets = np.arange(d.classes)[:, None] * total
        train_idx = (offsets + np.arange(d.per_class)[None, :]).ravel()
        eval_idx = (offsets + d.per_class + np.arange(eval_per_class)[None, :]).ravel()
        train_ds = Dataset(full.images[train_idx], full.labels[train_idx], name="blobs-train")
        eval_ds = Dataset(full.images[eval_idx], full.labels[eval_idx], name="blobs-eval")
    if d.train_count:
        train_ds = take_subset(train_ds, d.train_count, seed=config.seed)
    if d.eval_count:
        eval_ds = take_subset(eval_ds, min(d.eval_count, len(eval_ds)), seed=config.seed + 1)
    return train_ds, eval_ds


def _train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    t = config.train
    return TrainConfig(
        loss=t.loss.to_spec(),
        lr=t.lr,
        momentum=t.momentum,
        weight_decay=t.weight_decay,
        epochs=t.epochs,
        batch_size=t.batch_size,
        lr_schedule=tuple((int(e), float(d)) for e, d in t.lr_schedule),
        adversarial=t.adversarial.to_config() if t.adversarial else None,
        seed=seed,
    )


def _obtain_model(config: ExperimentConfig):
    """Model from the inlined checkpoint when present, else a fresh training run."""
    train_ds, eval_ds = build_datasets(config)
    if config.checkpoint_b64:
        model = deserialize_model(base64.b64decode(config.checkpoint_b64))
        return model, None, train_ds, eval_ds
    model = build_model(config.model, config.seed)
    result = train(model, train_ds.images, train_ds.labels, _train_config(config, config.seed))
    return model, result, train_ds, eval_ds


# ------------------------------------------------------------- theorems


def _check(name: str, passed: bool, **details) -> TheoremCheckModel:
    clean = {}
    for k, v in details.items():
        if isinstance(v, (np.floating, np.integer)):
            v = float(v)
        clean[k] = v
    return TheoremCheckModel(name=name, passed=bool(passed), details=clean)


def run_theorems(config: ExperimentConfig):
    t = config.theorems
    m = t.classes
    checks = []

    cp = blf_critical_points()
    checks.append(
        _check(
            "blf_critical_point",
            2.0 < cp.z_max < math.sqrt(5) + 1
            and abs(evaluate(BoundedFn("blf"), cp.z_max) - cp.z_max / 2.0) < 1e-10,
            z_max=cp.z_max,
            g_max=cp.g_max,
            lower_bound=2.0,
            upper_bound=math.sqrt(5) + 1,
        )
    )

    run = optimize_free_logits(
        FreeLogitRun(spec=LossSpec("ce"), m=m, steps=t.divergence_steps, lr=t.ce_lr, grad_tol=0.0)
    )
    rep = divergence_report(run, threshold=t.divergence_threshold, of="logits")
    checks.append(
        _check(
            "ce_one_hot_divergence",
            rep.diverged,
            final_linf=rep.final_linf,
            threshold=rep.threshold,
            monotone_tail=rep.monotone_tail,
        )
    )

    for kind, lr in (("tanh", t.tanh_lr), ("sigmoid", t.sigmoid_lr)):
        gamma = t.tanh_gamma
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn(kind, gamma),
                m=m,
                steps=t.divergence_steps,
                lr=lr,
                grad_tol=0.0,
            )
        )
        rep = divergence_report(run, threshold=t.divergence_threshold, of="pre_logits")
        logits = run.trajectory.logits
        bounded = bool(np.all(np.abs(logits) < gamma)) if kind == "tanh" else bool(
            np.all(logits > 0) and np.all(logits < gamma)
        )
        checks.append(
            _check(
                f"{kind}_pre_logit_divergence",
                rep.diverged and bounded,
                final_pre_logit_linf=rep.final_linf,
                logits_bounded=bounded,
                gamma=gamma,
            )
        )

    for gamma in t.blf_gammas:
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("blf", gamma),
                m=m,
                steps=t.blf_steps,
                record_every=1000,
            )
        )
        pre = run.trajectory.final_pre_logits()
        logits = run.trajectory.final_logits()
        err_t = abs(pre[0] - cp.z_max)
        err_off = float(np.abs(pre[1:] + cp.z_max).max())
        inside = bool(np.all(np.abs(logits) > gamma) and np.all(np.abs(logits) < gamma * GOLDEN))
        checks.append(
            _check(
                f"blf_finite_optimum_gamma_{gamma}",
                err_t < 1e-3 and err_off < 1e-3 and inside,
                gamma=gamma,
                pre_logit_error_target=err_t,
                pre_logit_error_off=err_off,
                logits_strictly_inside_bounds=inside,
                z_max=cp.z_max,
            )
        )

    for alpha in t.smoothing_alphas:
        for m_a in t.smoothing_classes or [m]:
            run = optimize_free_logits(
                FreeLogitRun(
                    spec=LossSpec("label_smoothing", alpha=alpha),
                    m=m_a,
                    steps=t.fixed_point_steps,
                    record_every=1000,
                )
            )
            report = check_label_smoothing_optimum(alpha, m_a, run)
            passed = (
                report.converged
                and report.residuals["target_prob"] < 1e-4
                and report.residuals["log_fixed_point_t"] < 1e-6
                and report.residuals["log_fixed_point_off"] < 1e-6
            )
            checks.append(
                _check(
                    f"label_smoothing_fixed_point_alpha_{alpha}_m_{m_a}",
                    passed,
                    converged=report.converged,
                    grad_linf=report.grad_linf,
                    **report.residuals,
                )
            )

    for lam in t.squeezing_lambdas:
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("logit_squeezing", lam=lam),
                m=m,
                steps=t.fixed_point_steps,
                record_every=1000,
            )
        )
        report = check_logit_squeezing_optimum(lam, run)
        passed = report.converged and report.max_residual() < 1e-6 and report.bounds_ok
        checks.append(
            _check(
                f"logit_squeezing_fixed_point_lam_{lam}",
                passed,
                converged=report.converged,
                bounds_ok=report.bounds_ok,
                **report.residuals,
            )
        )

    gap = lipschitz_evidence(m, 0, 1, checkpoints=tuple(t.gap_checkpoints), lr=t.ce_lr)
    # The doubling claim is tied to a >=100x span between the first and the
    # last checkpoint; shorter spans still must grow strictly.
    wide_span = max(t.gap_checkpoints) >= 100 * min(t.gap_checkpoints)
    doubled = gap.gaps[-1] > 2 * gap.gaps[0]
    checks.append(
        _check(
            "unbounded_lipschitz_gap_growth",
            gap.strictly_increasing and (doubled or not wide_span),
            checkpoints=list(gap.checkpoints),
            gaps=[float(g) for g in gap.gaps],
            doubled_over_span=doubled,
        )
    )

    record = RunRecord(
        version=__version__,
        command="theorems",
        seed=config.seed,
        config=config,
        passed=all(c.passed for c in checks),
        theorem_checks=checks,
    )
    return record, {}


# ------------------------------------------------------------- train / evaluate


def _accuracy_csv(rows: list[EpsAccuracy]) -> bytes:
    lines = ["epsilon,accuracy,stderr"]
    lines += [f"{r.epsilon!r},{r.accuracy!r},{r.stderr!r}" for r in rows]
    return ("\n".join(lines) + "\n").encode()


def _robust_rows(model, eval_ds, config, seed) -> list[tuple[float, float]]:
    return evaluate_robust_accuracy(
        model,
        eval_ds.images,
        eval_ds.labels,
        config.eval_epsilons,
        config.attack.to_config(),
        seed=seed,
    )


def _surrogate_rows(model, eval_ds, config, seed) -> list[SurrogateEvalModel]:
    rows = []
    for eps in config.eval_epsilons:
        if eps == 0.0:
            continue
        result = surrogate_pgd(
            model,
            eval_ds.images,
            eval_ds.labels,
            config.attack.to_config(epsilon=eps),
            seed=seed,
        )
        rows.append(
            SurrogateEvalModel(
                epsilon=eps,
                accuracy_native=result.accuracy_native,
                accuracy_surrogate=result.accuracy_surrogate,
            )
        )
    return rows


def run_train(config: ExperimentConfig):
    train_ds, eval_ds = build_datasets(config)
    per_eps: list[list[float]] = [[] for _ in config.eval_epsilons]
    first_model = None
    first_result = None
    aborted, reason = False, None

    for r in range(config.repeats):
        seed = config.seed + r
        model = build_model(config.model, seed)
        result = train(model, train_ds.images, train_ds.labels, _train_config(config, seed))
        if r == 0:
            first_model, first_result = model, result
        if result.aborted:
            aborted, reason = True, result.abort_reason
            break
        if config.eval_epsilons:
            for i, (_, acc) in enumerate(_robust_rows(model, eval_ds, config, seed)):
                per_eps[i].append(acc)

    robust = None
    if config.eval_epsilons and not aborted:
        robust = []
        for eps, accs in zip(config.eval_epsilons, per_eps):
            mean = float(np.mean(accs))
            stderr = float(np.std(accs, ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else 0.0
            robust.append(EpsAccuracy(epsilon=eps, accuracy=mean, stderr=stderr))

    surrogate = None
    if (
        not aborted
        and config.evaluate_surrogate
        and config.model.hook == "blf"
        and config.eval_epsilons
    ):
        surrogate = _surrogate_rows(first_model, eval_ds, config, config.seed)

    stats = logit_stats(first_model, eval_ds.images) if not aborted else None
    artifacts = {"model.blflab": serialize_model(first_model)}
    if robust is not None:
        artifacts["accuracy_vs_eps.csv"] = _accuracy_csv(robust)

    record = RunRecord(
        version=__version__,
        command=config.command,
        seed=config.seed,
        config=config,
        passed=not aborted,
        aborted=aborted,
        abort_reason=reason,
        epochs=[
            EpochMetricsModel(
                epoch=e.epoch,
                mean_loss=e.mean_loss,
                train_accuracy=e.train_accuracy,
                lr=e.lr,
                gamma=e.gamma,
            )
            for e in first_result.epochs
        ],
        logit_stats=LogitStatsModel(**stats.__dict__) if stats else None,
        robust_accuracy=robust,
        surrogate_eval=surrogate,
        artifact_names=sorted(artifacts),
    )
    return record, artifacts


def run_evaluate(config: ExperimentConfig):
    model, train_result, _, eval_ds = _obtain_model(config)
    rows = [
        EpsAccuracy(epsilon=eps, accuracy=acc)
        for eps, acc in _robust_rows(model, eval_ds, config, config.seed)
    ]
    surrogate = None
    if config.evaluate_surrogate and model.hook.kind == "blf":
        surrogate = _surrogate_rows(model, eval_ds, config, config.seed)
    artifacts = {"accuracy_vs_eps.csv": _accuracy_csv(rows)}
    record = RunRecord(
        version=__version__,
        command="evaluate",
        seed=config.seed,
        config=config,
        passed=not (train_result.aborted if train_result else False),
        robust_accuracy=rows,
        surrogate_eval=surrogate,
        logit_stats=LogitStatsModel(**logit_stats(model, eval_ds.images).__dict__),
        artifact_names=sorted(artifacts),
    )
    return record, artifacts


# ------------------------------------------------------------- sweep


def _sweep_grid(config: ExperimentConfig) -> list[tuple[str, float | None]]:
    s = config.sweep
    grid: list[tuple[str, float | None]] = []
    if s.include_baseline:
        grid.append(("baseline", None))
    grid += [("label_smoothing", v) for v in s.label_smoothing]
    grid += [("logit_squeezing", v) for v in s.logit_squeezing]
    grid += [("tanh", v) for v in s.tanh]
    grid += [("blf", v) for v in s.blf]
    return grid


def _sweep_point(config: ExperimentConfig, method: str, value: float | None) -> SweepRowModel:
    try:
        model_spec = config.model.model_copy()
        loss = LossSpec("ce")
        if method == "label_smoothing":
            loss = LossSpec("label_smoothing", alpha=value)
        elif method == "logit_squeezing":
            loss = LossSpec("logit_squeezing", lam=value)
        elif method in ("tanh", "blf"):
            model_spec = model_spec.model_copy(update={"hook": method, "gamma": value})

        train_ds, eval_ds = build_datasets(config)
        model = build_model(model_spec, config.seed)
        tc = _train_config(config, config.seed)
        tc = TrainConfig(
            loss=loss,
            lr=tc.lr,
            momentum=tc.momentum,
            weight_decay=tc.weight_decay,
            epochs=tc.epochs,
            batch_size=tc.batch_size,
            lr_schedule=tc.lr_schedule,
            adversarial=tc.adversarial,
            seed=config.seed,
        )
        result = train(model, train_ds.images, train_ds.labels, tc)
        if result.aborted:
            return SweepRowModel(method=method, value=value, aborted=True)
        eps = config.sweep.robust_epsilon
        rows = evaluate_robust_accuracy(
            model,
            eval_ds.images,
            eval_ds.labels,
            [0.0, eps],
            config.attack.to_config(),
            seed=config.seed,
        )
        stats = logit_stats(model, eval_ds.images)
        return SweepRowModel(
            method=method,
            value=value,
            clean_accuracy=rows[0][1],
            robust_accuracy=rows[1][1],
            mean_logit_l2=stats.mean_l2,
            mean_logit_linf=stats.mean_linf,
            mean_prelogit_l2=stats.mean_prelogit_l2,
            mean_prelogit_linf=stats.mean_prelogit_linf,
        )
    except Exception:
        return SweepRowModel(method=method, value=value, aborted=True)


def _scatter_csv(rows: list[SweepRowModel]) -> bytes:
    cols = [
        "method",
        "value",
        "clean_accuracy",
        "robust_accuracy",
        "mean_logit_l2",
        "mean_logit_linf",
        "mean_prelogit_l2",
        "mean_prelogit_linf",
        "aborted",
    ]
    lines = [",".join(cols)]
    for r in rows:
        vals = [getattr(r, c) for c in cols]
        lines.append(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v) for v in vals))
    return ("\n".join(lines) + "\n").encode()


def run_sweep(config: ExperimentConfig):
    grid = _sweep_grid(config)
    if config.sweep.workers > 1:
        methods = [m for m, _ in grid]
        values = [v for _, v in grid]
        # Results come back in grid order regardless of completion order.
        with ProcessPoolExecutor(max_workers=config.sweep.workers) as pool:
            rows = list(pool.map(_sweep_point, [config] * len(grid), methods, values))
    else:
        rows = [_sweep_point(config, m, v) for m, v in grid]
    artifacts = {"scatter.csv": _scatter_csv(rows)}
    record = RunRecord(
        version=__version__,
        command="sweep",
        seed=config.seed,
        config=config,
        passed=all(not r.aborted for r in rows),
        sweep_rows=rows,
        artifact_names=sorted(artifacts),
    )
    return record, artifacts


# ------------------------------------------------------------- surface / opnorms


def run_surface(config: ExperimentConfig):
    model, train_result, _, eval_ds = _obtain_model(config)
    s = config.surface
    count = min(s.datapoints, len(eval_ds))
    artifacts = {}
    summaries = []
    for i in range(count):
        surf = loss_surface(
            model,
            eval_ds.images[i],
            int(eval_ds.labels[i]),
            direction_seed=s.direction_seed + i,
            datapoint_index=i,
            eps_max=s.eps_max,
            eps_step=s.eps_step,
        )
        name = f"surface_{i}.csv"
        artifacts[name] = surface_to_csv(surf).encode()
        summaries.append(
            SurfaceSummaryModel(
                datapoint_index=i,
                direction_seed=surf.direction_seed,
                clean_loss=surf.clean_loss,
                max_min_diff=surf.max_min_diff,
                csv_name=name,
            )
        )
    record = RunRecord(
        version=__version__,
        command="surface",
        seed=config.seed,
        config=config,
        passed=not (train_result.aborted if train_result else False),
        surfaces=summaries,
        artifact_names=sorted(artifacts),
    )
    return record, artifacts


def run_opnorms(config: ExperimentConfig):
    model, train_result, _, _ = _obtain_model(config)
    report = operator_norms(model)
    record = RunRecord(
        version=__version__,
        command="opnorms",
        seed=config.seed,
        config=config,
        passed=not (train_result.aborted if train_result else False),
        operator_norms=OperatorNormsModel(
            per_layer=report.per_layer,
            product=report.product,
            conv_average=report.conv_average,
            all_layer_average=report.all_layer_average,
        ),
        artifact_names=[],
    )
    return record, {}


_HANDLERS = {
    "theorems": run_theorems,
    "train": run_train,
    "evaluate": run_evaluate,
    "sweep": run_sweep,
    "surface": run_surface,
    "opnorms": run_opnorms,
}


def execute(config: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    record, artifacts = _HANDLERS[config.command](config)
    record.timing = TimingModel(created_unix=started, wall_clock_seconds=time.time() - started)
    return ExperimentResult(record=record, artifacts=artifacts)


def load_preset(name: str) -> dict:
    """Named experiment config shipped with the package."""
    path = resources.files("blflab").joinpath("presets", f"{name}.json")
    if not path.is_file():
        available = sorted(
            p.name.removesuffix(".json")
            for p in resources.files("blflab").joinpath("presets").iterdir()
        )
        raise FileNotFoundError(f"no preset {name!r}; available: {available}")
    return json.loads(path.read_text())
