"""Policy-gradient training against a fixed backoff schedule.

The trainer maximizes the penalized episodic return: the plain return
minus a weighted p-norm of the tightened-constraint violations. Each
epoch collects a batch of rollouts, subtracts the batch-mean baseline,
forms the score-function gradient estimate in one weighted reverse pass
and takes an Adam ascent step. Training stops when the smoothed batch
mean of the penalized return stalls, or after the epoch budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam
from .policy import PolicyConfig, score_backward
from .streams import StreamTree
from .trajectory import RolloutBatch, rollout_batch

__all__ = [
    "BackoffSchedule",
    "TrainConfig",
    "TrainReport",
    "TrainingAbort",
    "baseline",
    "gradient_estimate",
    "penalized_return",
    "penalized_returns_batch",
    "train_fixed_backoff",
]


class TrainingAbort(ArithmeticError):
    """Gradient or parameters became non-finite; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class BackoffSchedule:
    """Constraint tightening b[j, t] = scale[j] * base[j, t], all >= 0."""

    base: np.ndarray  # (n_constraints, horizon)
    scale: np.ndarray  # (n_constraints,)

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if self.base.ndim != 2:
            raise ValueError("backoff base must be (n_constraints, horizon)")
        if self.scale.shape != (self.base.shape[0],):
            raise ValueError("one scale entry per constraint required")
        if np.any(self.base < 0.0) or np.any(self.scale < 0.0):
            raise ValueError("backoffs must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        return self.scale[:, None] * self.base

    @classmethod
    def zeros(cls, n_constraints: int, horizon: int) -> "BackoffSchedule":
        return cls(base=np.zeros((n_constraints, horizon)), scale=np.zeros(n_constraints))


def penalized_returns_batch(
    returns: np.ndarray,
    constraints: np.ndarray,
    schedule: BackoffSchedule,
    penalty_weight: float,
    penalty_power: int,
) -> np.ndarray:
    """Penalized return for each rollout in a batch.

    constraints is (B, n_constraints, horizon); the penalty is the sum
    over constraints and steps of max(g + b, 0)**p, scaled by the
    penalty weight.
    """
    if constraints.shape[1] == 0:
        return np.asarray(returns, dtype=float).copy()
    tightened = constraints + schedule.matrix[None, :, :]
    violation = np.maximum(tightened, 0.0)
    penalty = (violation**penalty_power).sum(axis=(1, 2))
    return np.asarray(returns, dtype=float) - penalty_weight * penalty


def penalized_return(traj, schedule: BackoffSchedule, penalty_weight: float, penalty_power: int) -> float:
    """Penalized return of a single trajectory."""
    r = float(np.asarray(traj.rewards, dtype=float).sum())
    g = np.asarray(traj.constraints, dtype=float)
    return float(
        penalized_returns_batch(np.array([r]), g[None, :, :], schedule, penalty_weight, penalty_power)[0]
    )


def baseline(penalized_returns) -> float:
    """Batch-mean baseline; subtracting it leaves the estimator unbiased."""
    values = np.asarray(penalized_returns, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one sample")
    return float(values.mean())


def gradient_estimate(logp_grads: np.ndarray, penalized: np.ndarray, baseline_value: float) -> np.ndarray:
    """Score-function gradient: mean over rollouts of the advantage times
    the summed per-step log-density gradients.

    logp_grads is (S, n_params), already summed over steps, or
    (S, T, n_params) with the per-step gradients left unstacked.
    """
    grads = np.asarray(logp_grads, dtype=float)
    if grads.ndim == 3:
        grads = grads.sum(axis=1)
    advantages = np.asarray(penalized, dtype=float) - baseline_value
    if grads.shape[0] != advantages.shape[0]:
        raise ValueError("one penalized return per gradient row required")
    return advantages @ grads / grads.shape[0]


@dataclass
class TrainConfig:
    """Penalty, batch and stopping settings for one training run."""

    batch_size: int = 1000
    max_epochs: int = 200
    tol: float = 1e-4
    penalty_weight: float = 1.0
    penalty_power: int = 1
    learning_rate: float = 1e-2
    lr_decay: float = 1.0  # multiplicative per-epoch update; 1.0 keeps it constant
    smooth_window: int = 5
    checkpoint_every: int = 10

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty_weight must be >= 0")
        if self.penalty_power not in (1, 2):
            raise ValueError("penalty_power must be 1 or 2")
        if self.learning_rate <= 0.0 or self.lr_decay <= 0.0:
            raise ValueError("learning rate settings must be positive")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "tol": self.tol,
            "penalty_weight": self.penalty_weight,
            "penalty_power": self.penalty_power,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "smooth_window": self.smooth_window,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(
            batch_size=int(d["batch_size"]),
            max_epochs=int(d["max_epochs"]),
            tol=float(d["tol"]),
            penalty_weight=float(d["penalty_weight"]),
            penalty_power=int(d["penalty_power"]),
            learning_rate=float(d["learning_rate"]),
            lr_decay=float(d.get("lr_decay", 1.0)),
            smooth_window=int(d.get("smooth_window", 5)),
            checkpoint_every=int(d.get("checkpoint_every", 10)),
        )
        cfg.validate()
        return cfg


@dataclass
class TrainReport:
    """Per-epoch training series plus the stop verdict."""

    mean_penalized: list[float] = field(default_factory=list)
    mean_return: list[float] = field(default_factory=list)
    mean_penalty: list[float] = field(default_factory=list)
    baselines: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    epochs_run: int = 0
    stop_reason: str = ""

    CSV_HEADER = "epoch,mean_penalized,mean_return,mean_penalty,baseline,grad_norm"

    def csv_rows(self) -> list[str]:
        rows = [self.CSV_HEADER]
        for i in range(self.epochs_run):
            rows.append(
                f"{i + 1},{self.mean_penalized[i]!r},{self.mean_return[i]!r},"
                f"{self.mean_penalty[i]!r},{self.baselines[i]!r},{self.grad_norms[i]!r}"
            )
        return rows


def _epoch_gradient(
    pcfg: PolicyConfig,
    theta: np.ndarray,
    batch: RolloutBatch,
    advantages: np.ndarray,
) -> np.ndarray:
    """(1/S) sum_s advantage_s * sum_t grad logp in one weighted pass."""
    s, horizon = batch.inputs.shape[0], batch.inputs.shape[1]
    rows = batch.inputs.reshape(s * horizon, -1)
    acts = batch.presquash.reshape(s * horizon, -1)
    row_w = np.repeat(advantages / s, horizon)
    return score_backward(pcfg, theta, rows, acts, row_w)


def train_fixed_backoff(
    env,
    pcfg: PolicyConfig,
    theta0: np.ndarray,
    schedule: BackoffSchedule,
    cfg: TrainConfig,
    streams: StreamTree,
    checkpoint_cb=None,
) -> tuple[np.ndarray, TrainReport]:
    """Train the policy under a fixed backoff schedule.

    Per-rollout RNG streams are derived from (streams, epoch, rollout
    index), so reruns and any parallel grouping of the batch reproduce
    bit-identical results. checkpoint_cb, when given, is invoked as
    checkpoint_cb(epoch, theta, optimizer_state) every
    cfg.checkpoint_every epochs.
    """
    cfg.validate()
    theta = np.asarray(theta0, dtype=float).copy()
    adam = Adam(learning_rate=cfg.learning_rate)
    report = TrainReport()
    smoothed_prev: float | None = None

    for epoch in range(1, cfg.max_epochs + 1):
        rngs = [streams.rng("rollout", epoch, s) for s in range(cfg.batch_size)]
        batch = rollout_batch(env, pcfg, theta, rngs)
        returns = batch.returns()
        penalized = penalized_returns_batch(
            returns, batch.constraints, schedule, cfg.penalty_weight, cfg.penalty_power
        )
        beta = baseline(penalized)
        advantages = penalized - beta
        grad = _epoch_gradient(pcfg, theta, batch, advantages)
        if not np.all(np.isfinite(grad)):
            raise TrainingAbort(
                f"non-finite gradient at epoch {epoch}",
                diagnostics={
                    "epoch": epoch,
                    "mean_penalized": float(np.mean(penalized)),
                    "bad_entries": int(np.count_nonzero(~np.isfinite(grad))),
                },
            )
        theta = adam.step(theta, grad)
        adam.learning_rate *= cfg.lr_decay

        report.mean_penalized.append(float(np.mean(penalized)))
        report.mean_return.append(float(np.mean(returns)))
        report.mean_penalty.append(float(np.mean(returns - penalized)))
        report.baselines.append(beta)
        report.grad_norms.append(float(np.linalg.norm(grad)))
        report.epochs_run = epoch

        if checkpoint_cb is not None and epoch % cfg.checkpoint_every == 0:
            checkpoint_cb(epoch, theta, adam.state_dict())

        window = report.mean_penalized[-cfg.smooth_window :]
        smoothed = float(np.mean(window))
        diff = math.inf if smoothed_prev is None else abs(smoothed - smoothed_prev)
        smoothed_prev = smoothed
        if diff <= cfg.tol:
            report.stop_reason = "tol"
            break
    else:
        report.stop_reason = "max_epochs"
    return theta, report
