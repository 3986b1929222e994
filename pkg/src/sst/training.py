"""The training loop: subject-level validation split, paired forward passes,
early stopping on validation macro-F1, best-checkpoint selection, and the
transfer/variance evaluation harnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericalError
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, evaluate_metrics
from .model import ModelConfig, ModelParams, sst_forward
from .optim import AdamState, adam_step, clip_global_norm, zero_grads
from .sampling import (
    SAMPLING_MODES,
    EpochStore,
    SamplingMemory,
    draw_pair_batch,
    update_memory,
)


@dataclass
class TrainConfig:
    max_steps: int = 10000
    validate_every: int = 100
    patience: int = 10
    batch_size: int = 64
    seq_len: int = 20
    lr: float = 0.001
    weight_decay: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 5.0
    val_fraction: float = 0.10
    seed: int = 0
    sampling_mode: str = "easy+difficult"
    p0: float = 0.25
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        positive = {
            "max_steps": self.max_steps, "validate_every": self.validate_every,
            "patience": self.patience, "batch_size": self.batch_size,
            "seq_len": self.seq_len, "lr": self.lr, "clip_norm": self.clip_norm,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"train config: {name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise ConfigError(f"train config: weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"train config: val_fraction must be in (0, 1), got {self.val_fraction}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"train config: betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ConfigError(
                f"train config: sampling_mode must be one of {SAMPLING_MODES}, got {self.sampling_mode!r}"
            )


@dataclass
class RunSummary:
    best_val_metric: float | None
    best_step: int
    stopped_early: bool
    steps_trained: int
    history: list            # one dict per validation: step, val_loss, macro_f1, accuracy, kappa
    final_report: MetricsReport | None

    def to_dict(self) -> dict:
        return {
            "best_val_metric": self.best_val_metric,
            "best_step": self.best_step,
            "stopped_early": self.stopped_early,
            "steps_trained": self.steps_trained,
            "history": self.history,
            "final_report": self.final_report.to_dict() if self.final_report else None,
        }


def split_subjects(store: EpochStore, val_fraction: float, rng: np.random.Generator):
    """Partition subjects (not epochs) into train and validation stores."""
    subjects = list(store.subjects)
    if len(subjects) < 2:
        raise DataError(f"need at least 2 subjects to split, store has {len(subjects)}")
    order = rng.permutation(len(subjects))
    n_val = max(1, int(round(val_fraction * len(subjects))))
    if n_val >= len(subjects):
        n_val = len(subjects) - 1
    val_set = {subjects[i] for i in order[:n_val]}

    def records_for(keep):
        return [
            (subject, store.signals[i], int(store.labels[i]))
            for subject in subjects
            if (subject in val_set) == keep
            for i in store.subject_records(subject)
        ]

    return EpochStore(records_for(False)), EpochStore(records_for(True))


def sequential_windows(store: EpochStore, S: int) -> list[list[int]]:
    """Non-overlapping stride-S windows per subject, in store order."""
    out = []
    for subject in store.subjects:
        ids = store.subject_records(subject)
        for start in range(0, len(ids) - S + 1, S):
            out.append(ids[start : start + S])
    return out


def _infer_batches(params, store, windows, model_cfg, batch_size, loss_cfg):
    """Inference with X' := X over fixed windows. Returns (mean loss, report)."""
    loss_sum = 0.0
    n_windows = 0
    trues, preds = [], []
    with ad.no_grad():
        for at in range(0, len(windows), batch_size):
            chunk = windows[at : at + batch_size]
            X = ad.Tensor(np.stack([store.assemble(ids) for ids in chunk]))
            Y = np.stack([store.labels[np.asarray(ids)] for ids in chunk])
            trace = sst_forward(X, X, params, model_cfg)
            breakdown = total_loss(trace, trace, Y, loss_cfg)
            loss_sum += breakdown.total.item() * len(chunk)
            n_windows += len(chunk)
            trues.append(Y.reshape(-1))
            preds.append(np.argmax(trace.z.data, axis=-1).reshape(-1))
    report = evaluate_metrics(np.concatenate(trues), np.concatenate(preds))
    return loss_sum / n_windows, report


def validate(params: ModelParams, store_val: EpochStore, cfg: TrainConfig,
             model_cfg: ModelConfig):
    """Deterministic scoring pass: sequential windows, companion equal to
    the input. Returns (mean total loss, MetricsReport)."""
    windows = sequential_windows(store_val, cfg.seq_len)
    if not windows:
        raise DataError(
            f"validation store has no subject with {cfg.seq_len} consecutive epochs"
        )
    return _infer_batches(params, store_val, windows, model_cfg, cfg.batch_size, cfg.loss)


def train(store: EpochStore, cfg: TrainConfig, model_cfg: ModelConfig,
          validate_fn=None):
    """Train with paired batches; return (best params, RunSummary).

    The checkpoint returned is the one with the best validation macro-F1.
    validate_fn replaces validate() for harness tests; it receives
    (params, store_val, cfg, model_cfg) and returns (loss, MetricsReport).
    """
    validate_fn = validate_fn if validate_fn is not None else validate
    root = np.random.SeedSequence(cfg.seed)
    split_seq, init_seq, sampler_seq = root.spawn(3)
    store_train, store_val = split_subjects(store, cfg.val_fraction, np.random.default_rng(split_seq))
    params = ModelParams(model_cfg, np.random.default_rng(init_seq))
    sampler_rng = np.random.default_rng(sampler_seq)

    adam = AdamState(params.params())
    memory = SamplingMemory(p0=cfg.p0, mode=cfg.sampling_mode)
    history: list[dict] = []
    best_metric = -math.inf
    best_step = 0
    best_params = params.copy()
    best_report: MetricsReport | None = None
    bad_streak = 0
    stopped_early = False
    steps_trained = 0

    for step in range(1, cfg.max_steps + 1):
        batch = draw_pair_batch(store_train, memory, cfg.batch_size, cfg.seq_len, sampler_rng)
        trace = sst_forward(batch.X, batch.Xp, params, model_cfg)
        trace_rev = sst_forward(batch.Xp, batch.X, params, model_cfg)
        breakdown = total_loss(trace, trace_rev, batch.Y, cfg.loss)
        total = breakdown.total.item()
        if not math.isfinite(total):
            raise NumericalError(
                f"non-finite loss at step {step}: total={total}, "
                f"ls={breakdown.ls.item()}, cos={breakdown.cos.item()}, kl={breakdown.kl.item()}"
            )
        zero_grads(params.params())
        breakdown.total.backward()
        clip_global_norm(params.params(), cfg.clip_norm)
        adam_step(params.params(), adam, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                  weight_decay=cfg.weight_decay)
        steps_trained = step

        if step % cfg.validate_every == 0:
            val_loss, report = validate_fn(params, store_val, cfg, model_cfg)
            update_memory(memory, batch, val_loss)
            history.append({
                "step": step,
                "val_loss": float(val_loss),
                "macro_f1": report.macro_f1,
                "accuracy": report.accuracy,
                "kappa": report.kappa,
            })
            if report.macro_f1 > best_metric:
                best_metric = report.macro_f1
                best_step = step
                best_params = params.copy()
                best_report = report
                bad_streak = 0
            else:
                bad_streak += 1
                if bad_streak >= cfg.patience:
                    stopped_early = True
                    break

    summary = RunSummary(
        best_val_metric=None if best_report is None else float(best_metric),
        best_step=best_step,
        stopped_early=stopped_early,
        steps_trained=steps_trained,
        history=history,
        final_report=best_report,
    )
    if best_report is None:
        best_params = params.copy()
    return best_params, summary


def transfer_evaluate(params: ModelParams, store_test: EpochStore, cfg: TrainConfig,
                      model_cfg: ModelConfig) -> MetricsReport:
    """Pure inference over a test store; no fine-tuning, no updates."""
    C, T = store_test.signal_shape
    if (C, T) != (model_cfg.C, model_cfg.T):
        raise ConfigError(
            f"test epochs are ({C}, {T}) but the checkpoint expects "
            f"({model_cfg.C}, {model_cfg.T}); resample the data to {model_cfg.fs} Hz first"
        )
    windows = sequential_windows(store_test, cfg.seq_len)
    if not windows:
        raise DataError(f"test store has no subject with {cfg.seq_len} consecutive epochs")
    _, report = _infer_batches(params, store_test, windows, model_cfg, cfg.batch_size, cfg.loss)
    return report


def variance_experiment(store_train: EpochStore, store_test: EpochStore, cfg: TrainConfig,
                        model_cfg: ModelConfig, n_runs: int,
                        modes=SAMPLING_MODES, seeds=None) -> dict:
    """Repeat training under each sampling mode and summarize test metrics.

    seeds defaults to cfg.seed + run index; passing an explicit list (for
    example n_runs copies of one seed) pins every run's randomness.
    """
    if n_runs < 2:
        raise ConfigError(f"variance experiment needs n_runs >= 2, got {n_runs}")
    if seeds is None:
        seeds = [cfg.seed + i for i in range(n_runs)]
    if len(seeds) != n_runs:
        raise ConfigError(f"{len(seeds)} seeds for {n_runs} runs")

    results: dict = {}
    for mode in modes:
        runs = []
        for seed in seeds:
            run_cfg = TrainConfig(**{**cfg.__dict__, "seed": seed, "sampling_mode": mode})
            best_params, _ = train(store_train, run_cfg, model_cfg)
            report = transfer_evaluate(best_params, store_test, run_cfg, model_cfg)
            runs.append({
                "seed": seed,
                "macro_f1": report.macro_f1,
                "accuracy": report.accuracy,
                "kappa": report.kappa,
            })
        summary = {}
        for key in ("macro_f1", "accuracy", "kappa"):
            values = np.array([r[key] for r in runs])
            summary[key] = {"mean": float(values.mean()), "sd": float(values.std())}
        results[mode] = {"runs": runs, "summary": summary}
    return results
