"""Pydantic request/response schemas shared by the service, the CLI, and
the experiment runners.

Every config model rejects unknown keys so a typo in an experiment file
fails loudly before any computation starts.  RunRecord echoes the full
config it was produced from; re-running a record's config with its seed
reproduces the record byte-for-byte apart from the timing block.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from .attacks import AttackConfig
from .losses import LossSpec

HookName = Literal["identity", "tanh", "sigmoid", "blf", "sine_wave", "single_wave"]
CommandName = Literal["theorems", "train", "evaluate", "sweep", "surface", "opnorms"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------- configs


class ModelSpec(StrictModel):
    arch: Literal["dense", "conv"] = "dense"
    input_shape: list[int] = Field(default_factory=lambda: [64])
    classes: int = 10
    hidden: list[int] = Field(default_factory=lambda: [32])
    conv_channels: list[int] = Field(default_factory=lambda: [10, 20])
    kernel: int = 5
    pool: int = 2
    fc: list[int] = Field(default_factory=lambda: [50])
    dropout: float = 0.0
    hook: HookName = "identity"
    gamma: float = 1.0
    learnable_gamma: bool = False
    gamma_tilde_init: float = -1.0


class LossConfig(StrictModel):
    family: Literal["ce", "label_smoothing", "logit_squeezing", "trades"] = "ce"
    alpha: Optional[float] = None
    lam: Optional[float] = None
    beta: Optional[float] = None

    def to_spec(self) -> LossSpec:
        return LossSpec(family=self.family, alpha=self.alpha, lam=self.lam, beta=self.beta)


class AttackSpec(StrictModel):
    kind: Literal["pgd", "spsa"] = "pgd"
    epsilon: float = 0.1
    step_size: float = 0.01
    iterations: int = 40
    random_init: bool = True
    restarts: int = 1
    spsa_delta: float = 0.01
    spsa_lr: float = 0.01
    spsa_directions: int = 128
    spsa_data_batch: Optional[int] = None

    def to_config(self, epsilon: Optional[float] = None) -> AttackConfig:
        return AttackConfig(
            kind=self.kind,
            epsilon=self.epsilon if epsilon is None else epsilon,
            step_size=self.step_size,
            iterations=self.iterations,
            random_init=self.random_init,
            restarts=self.restarts,
            spsa_delta=self.spsa_delta,
            spsa_lr=self.spsa_lr,
            spsa_directions=self.spsa_directions,
            spsa_data_batch=self.spsa_data_batch,
        )


class TrainSpec(StrictModel):
    loss: LossConfig = Field(default_factory=LossConfig)
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 5
    batch_size: int = 64
    lr_schedule: list[tuple[int, float]] = Field(default_factory=list)
    adversarial: Optional[AttackSpec] = None


class DataSpec(StrictModel):
    source: Literal["blobs", "idx"] = "blobs"
    classes: int = 10
    per_class: int = 100
    dim: int = 64
    spread: float = 0.05
    image_shape: Optional[list[int]] = None
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    eval_images_path: Optional[str] = None
    eval_labels_path: Optional[str] = None
    train_count: Optional[int] = None
    eval_count: Optional[int] = None


class TheoremsSpec(StrictModel):
    classes: int = 10
    divergence_steps: int = 10_000
    divergence_threshold: float = 5.0
    ce_lr: float = 0.1
    tanh_gamma: float = 1.0
    tanh_lr: float = 2.0
    sigmoid_lr: float = 2.0
    blf_gammas: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    blf_steps: int = 60_000
    smoothing_alphas: list[float] = Field(default_factory=lambda: [0.1, 0.3])
    smoothing_classes: Optional[list[int]] = None
    squeezing_lambdas: list[float] = Field(default_factory=lambda: [0.5, 1.0, 100.0])
    fixed_point_steps: int = 200_000
    gap_checkpoints: list[int] = Field(default_factory=lambda: [100, 1000, 10_000])


class SweepSpec(StrictModel):
    # method name -> hyperparameter grid; tanh/blf values are gammas
    label_smoothing: list[float] = Field(default_factory=lambda: [0.05, 0.3, 0.7])
    logit_squeezing: list[float] = Field(default_factory=lambda: [0.05, 0.3, 0.9])
    tanh: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    blf: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    include_baseline: bool = True
    robust_epsilon: float = 0.1
    workers: int = 1


class SurfaceSpec(StrictModel):
    datapoints: int = 8
    direction_seed: int = 0
    eps_max: float = 16.0 / 255.0
    eps_step: float = 0.5 / 255.0


class ExperimentConfig(StrictModel):
    command: CommandName = "theorems"
    seed: int = 0
    repeats: int = 1
    model: ModelSpec = Field(default_factory=ModelSpec)
    data: DataSpec = Field(default_factory=DataSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    attack: AttackSpec = Field(default_factory=AttackSpec)
    eval_epsilons: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    evaluate_surrogate: bool = True
    theorems: TheoremsSpec = Field(default_factory=TheoremsSpec)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    surface: SurfaceSpec = Field(default_factory=SurfaceSpec)
    # CLI-side path; resolved to checkpoint_b64 before a request is sent.
    checkpoint_path: Optional[str] = None
    checkpoint_b64: Optional[str] = None


# ---------------------------------------------------------------- records


class EpochMetricsModel(StrictModel):
    epoch: int
    mean_loss: float
    train_accuracy: float
    lr: float
    gamma: Optional[float] = None


class LogitStatsModel(StrictModel):
    mean_l2: float
    mean_linf: float
    mean_prelogit_l2: float
    mean_prelogit_linf: float
    sample_count: int


class EpsAccuracy(StrictModel):
    epsilon: float
    accuracy: float
    stderr: float = 0.0


class SurrogateEvalModel(StrictModel):
    epsilon: float
    accuracy_native: float
    accuracy_surrogate: float


class TheoremCheckModel(StrictModel):
    name: str
    passed: bool
    details: dict = Field(default_factory=dict)


class OperatorNormsModel(StrictModel):
    per_layer: list[dict]
    product: float
    conv_average: Optional[float] = None
    all_layer_average: Optional[float] = None


class SurfaceSummaryModel(StrictModel):
    datapoint_index: int
    direction_seed: int
    clean_loss: float
    max_min_diff: float
    csv_name: str


class SweepRowModel(StrictModel):
    method: str
    value: Optional[float] = None
    clean_accuracy: Optional[float] = None
    robust_accuracy: Optional[float] = None
    mean_logit_l2: Optional[float] = None
    mean_logit_linf: Optional[float] = None
    mean_prelogit_l2: Optional[float] = None
    mean_prelogit_linf: Optional[float] = None
    aborted: bool = False


class TimingModel(BaseModel):
    created_unix: float = 0.0
    wall_clock_seconds: float = 0.0


class RunRecord(StrictModel):
    tool: str = "blflab"
    version: str = "0.1.0"
    command: str
    seed: int
    config: ExperimentConfig
    passed: bool = True
    aborted: bool = False
    abort_reason: Optional[str] = None
    theorem_checks: Optional[list[TheoremCheckModel]] = None
    epochs: Optional[list[EpochMetricsModel]] = None
    logit_stats: Optional[LogitStatsModel] = None
    robust_accuracy: Optional[list[EpsAccuracy]] = None
    surrogate_eval: Optional[list[SurrogateEvalModel]] = None
    operator_norms: Optional[OperatorNormsModel] = None
    surfaces: Optional[list[SurfaceSummaryModel]] = None
    sweep_rows: Optional[list[SweepRowModel]] = None
    artifact_names: list[str] = Field(default_factory=list)
    timing: Optional[TimingModel] = None

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class RunResponse(BaseModel):
    ok: bool
    record: RunRecord
    artifacts: dict[str, str] = Field(default_factory=dict)   # name -> base64
