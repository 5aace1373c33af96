"""Training methods with quantized checkpoint evaluation.

Four ways to produce a gradient for the same SGD update:

* ptq     - forward and backward on the full-precision weights;
* qat     - gradient taken at the round-to-nearest cast of the weights and
            applied to the full-precision weights (identity straight-through);
* rat     - like qat but the forward point is a fresh randomized rounding;
* lotion  - full-precision gradient plus the curvature-weighted gradient of
            the rounding-noise variance.

Every eval_every steps the checkpoint is evaluated in full precision, after
a round-to-nearest cast, and under several independent randomized roundings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .quant import QuantFormat, cast_rtn
from .rounding import rr_sample
from .smooth import FisherDiag, lotion_gn_grad
from .tensorcore import NS_EVAL, NS_TRAIN_NOISE, RngStream, stream_id

__all__ = [
    "Method",
    "TrainConfig",
    "RunRecord",
    "RunResult",
    "cosine_lr",
    "sgd_step",
    "train",
    "evaluate_checkpoint",
    "best_of_sweep",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12


class Method(str, Enum):
    PTQ = "ptq"
    QAT = "qat"
    RAT = "rat"
    LOTION = "lotion"


@dataclass(frozen=True)
class TrainConfig:
    method: Method
    lr: float
    total_steps: int
    fmt: QuantFormat
    lam: float = 0.0
    eval_every: int = 50
    rr_eval_seeds: int = 8
    seed: int = 0
    final_fraction: float = 0.0
    curvature: str = "exact"  # "exact" (task Hessian diagonal) or "fisher"
    fisher_beta: float = 0.999
    differentiate_scale: bool = False

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.eval_every < 1 or self.total_steps % self.eval_every != 0:
            raise ValueError(
                f"eval_every ({self.eval_every}) must divide total_steps ({self.total_steps})"
            )
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.rr_eval_seeds < 1:
            raise ValueError(f"rr_eval_seeds must be >= 1, got {self.rr_eval_seeds}")
        if self.curvature not in ("exact", "fisher"):
            raise ValueError(f"curvature must be 'exact' or 'fisher', got {self.curvature!r}")


@dataclass(frozen=True)
class RunRecord:
    step: int
    fp_loss: float
    rtn_loss: float
    rr_loss_mean: float
    rr_loss_sd: float
    lr_now: float
    diverged: bool = False


@dataclass
class RunResult:
    config: TrainConfig
    records: list[RunRecord]
    weights: list[np.ndarray]
    diverged: bool = False

    @property
    def final(self) -> RunRecord:
        return self.records[-1]


def cosine_lr(step: int, total: int, lr0: float, final_fraction: float = 0.0) -> float:
    """Cosine decay from lr0 to lr0 * final_fraction over `total` steps."""
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    cos = 0.5 * (1.0 + math.cos(math.pi * step / total))
    return lr0 * (final_fraction + (1.0 - final_fraction) * cos)


def sgd_step(w: np.ndarray, grad: np.ndarray, lr_now: float) -> np.ndarray:
    if w.shape != np.asarray(grad).shape:
        raise ValueError(f"shape mismatch: weights {w.shape} vs grad {np.asarray(grad).shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient; aborting run")
    return w - lr_now * grad


def evaluate_checkpoint(
    task,
    weights,
    fmt: QuantFormat,
    rr_eval_seeds: int,
    seed: int,
    step: int = 0,
    lr_now: float = 0.0,
) -> RunRecord:
    """Full-precision, round-to-nearest, and randomized-rounding losses of a checkpoint.

    The rounding draws come from streams keyed only by (seed, step, draw
    index), never by the training method, so methods that reach identical
    weights report identical rounded losses.
    """
    fp_loss = task.loss_of(weights)
    rtn_loss = task.loss_of([cast_rtn(x, fmt) for x in weights])
    rr_losses = np.empty(rr_eval_seeds)
    for j in range(rr_eval_seeds):
        rng = RngStream(seed, stream_id(NS_EVAL, step, j))
        rr_losses[j] = task.loss_of([rr_sample(x, fmt, rng) for x in weights])
    return RunRecord(
        step=step,
        fp_loss=fp_loss,
        rtn_loss=rtn_loss,
        rr_loss_mean=float(rr_losses.mean()),
        rr_loss_sd=float(rr_losses.std()),
        lr_now=lr_now,
    )


def _step_gradient(task, weights, config: TrainConfig, step: int, fishers):
    """(step loss, gradients) according to the configured method."""
    method = config.method
    if method == Method.PTQ:
        return task.loss_and_grads(weights)
    if method == Method.QAT:
        qw = [cast_rtn(x, config.fmt) for x in weights]
        return task.loss_and_grads(qw)
    if method == Method.RAT:
        qw = [
            rr_sample(x, config.fmt, RngStream(config.seed, stream_id(NS_TRAIN_NOISE, step, i)))
            for i, x in enumerate(weights)
        ]
        return task.loss_and_grads(qw)
    if method == Method.LOTION:
        loss, base_grads = task.loss_and_grads(weights)
        if config.curvature == "fisher":
            for f, g in zip(fishers, base_grads):
                f.update(g)
            curvatures = [f.read() for f in fishers]
        else:
            curvatures = task.curvature_diags(weights)
        grads = [
            lotion_gn_grad(
                x, g, c, config.fmt, config.lam, differentiate_scale=config.differentiate_scale
            )
            for x, g, c in zip(weights, base_grads, curvatures)
        ]
        return loss, grads
    raise ValueError(f"unknown method: {method!r}")


def train(config: TrainConfig, task, init_weights=None) -> RunResult:
    """Run the configured method on `task`; deterministic given the config.

    A non-finite or > DIVERGENCE_LIMIT step loss (or a non-finite gradient)
    truncates the run with a final record flagged as diverged.
    """
    if init_weights is None:
        weights = task.init_weights(config.seed)
    else:
        weights = [np.array(x, dtype=np.float64) for x in init_weights]
    fishers = None
    if config.method == Method.LOTION and config.curvature == "fisher":
        fishers = [FisherDiag.zeros(x.shape, beta=config.fisher_beta) for x in weights]

    records: list[RunRecord] = []
    for step in range(config.total_steps):
        lr_now = cosine_lr(step, config.total_steps, config.lr, config.final_fraction)
        step_loss, grads = _step_gradient(task, weights, config, step, fishers)
        bad_grad = any(not np.all(np.isfinite(g)) for g in grads)
        if bad_grad or not math.isfinite(step_loss) or step_loss > DIVERGENCE_LIMIT:
            records.append(
                RunRecord(
                    step=step,
                    fp_loss=float(step_loss),
                    rtn_loss=float("nan"),
                    rr_loss_mean=float("nan"),
                    rr_loss_sd=float("nan"),
                    lr_now=lr_now,
                    diverged=True,
                )
            )
            return RunResult(config=config, records=records, weights=weights, diverged=True)
        weights = [w - lr_now * g for w, g in zip(weights, grads)]
        done = step + 1
        if done % config.eval_every == 0:
            lr_next = cosine_lr(done, config.total_steps, config.lr, config.final_fraction)
            records.append(
                evaluate_checkpoint(
                    task, weights, config.fmt, config.rr_eval_seeds, config.seed, done, lr_next
                )
            )
    return RunResult(config=config, records=records, weights=weights)


def best_of_sweep(results: list[RunResult]) -> dict[str, dict[str, RunResult]]:
    """Per-method best run, selected independently for RTN and RR eval loss.

    The winner minimizes the final quantized loss; ties go to the lowest
    learning rate.  Raises if every run of some method diverged.
    """
    by_method: dict[str, list[RunResult]] = {}
    for res in results:
        by_method.setdefault(res.config.method.value, []).append(res)

    out: dict[str, dict[str, RunResult]] = {}
    for method, runs in by_method.items():
        alive = [r for r in runs if not r.diverged]
        if not alive:
            configs = ", ".join(f"lr={r.config.lr:g}, lam={r.config.lam:g}" for r in runs)
            raise RuntimeError(f"all {method} runs diverged: {configs}")
        picks = {}
        for metric, key in (("rtn", lambda r: r.final.rtn_loss), ("rr", lambda r: r.final.rr_loss_mean)):
            picks[metric] = min(alive, key=lambda r: (key(r), r.config.lr))
        out[method] = picks
    return out
