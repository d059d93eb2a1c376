"""Joint chance-constraint statistics.

A closed-loop trajectory satisfies the joint constraint iff its worst
constraint value over all constraints and time steps is <= 0. Given S
Monte-Carlo rollouts this module turns the pass fraction into an exact
binomial (Clopper-Pearson) lower confidence bound on the true
satisfaction probability, computes the per-constraint empirical
quantiles that seed the constraint backoffs, and scores how far the
bound sits from the requested satisfaction level.

The regularized incomplete beta function and its inverse are implemented
here directly (continued fraction + safeguarded Newton) so the bound is
self-contained and testable against independent oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChanceStatsError",
    "EcdfSummary",
    "InitialBackoffs",
    "betainc",
    "betainv",
    "ecdf",
    "empirical_quantile",
    "initial_backoffs",
    "joint_violation_value",
    "lower_bound",
    "residual",
]


class ChanceStatsError(ArithmeticError):
    """Numeric failure inside the beta-function machinery."""


# ---------------------------------------------------------------------------
# Regularized incomplete beta function and its inverse
# ---------------------------------------------------------------------------

_CF_MAX_ITER = 400
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, evaluated by the
    modified Lentz recurrence."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ChanceStatsError(
        f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )


def betainc(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta I_x(a, b), the Beta(a, b) CDF at x."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    front = math.exp(ln_front)
    # Use the fraction on whichever tail converges fast, mirror the other.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainv(prob: float, a: float, b: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Inverse of the regularized incomplete beta: x with I_x(a, b) = prob.

    Newton iteration on the CDF with a bisection safeguard; the returned
    x satisfies |I_x(a, b) - prob| < 1e-10 or ChanceStatsError is raised.
    """
    if not (0.0 < prob < 1.0):
        raise ValueError(f"prob must lie strictly inside (0, 1), got {prob}")
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")

    ln_beta = _log_beta(a, b)
    lo, hi = 0.0, 1.0
    x = a / (a + b)  # distribution mean as the starting point
    f = betainc(x, a, b) - prob
    for _ in range(max_iter):
        if abs(f) < tol:
            break
        if f > 0.0:
            hi = x
        else:
            lo = x
        # Newton step; density in log space to survive extreme shapes.
        with np.errstate(over="ignore"):
            ln_pdf = (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - ln_beta
        step = f * math.exp(-ln_pdf) if ln_pdf < 700.0 else 0.0
        x_new = x - step
        if not (lo < x_new < hi) or step == 0.0:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
        f = betainc(x, a, b) - prob
    if abs(f) >= 1e-10:
        raise ChanceStatsError(
            f"betainv failed to converge: prob={prob}, a={a}, b={b}, residual={f:.3e}"
        )
    return x


# ---------------------------------------------------------------------------
# ECDF of the joint constraint and its Clopper-Pearson lower bound
# ---------------------------------------------------------------------------


def joint_violation_value(traj) -> float:
    """Worst constraint value over all constraints and time steps.

    Accepts a trajectory (anything exposing a ``constraints`` matrix) or
    the constraint matrix itself. <= 0 means the whole trajectory is
    feasible.
    """
    g = getattr(traj, "constraints", traj)
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise ValueError("no constraint values present")
    return float(np.max(g))


def ecdf(c_values) -> float:
    """Fraction of trajectories whose worst constraint value is <= 0.

    The boundary C = 0 counts as satisfied.
    """
    c = np.asarray(c_values, dtype=float)
    if c.size == 0:
        raise ValueError("need at least one sample")
    return float(np.count_nonzero(c <= 0.0) / c.size)


def lower_bound(sample_count: int, pass_rate: float, confidence_eps: float) -> float:
    """Clopper-Pearson lower confidence bound on the satisfaction probability.

    With confidence 1 - confidence_eps the true probability is at least
    the returned value: for k passes out of S the bound is the
    confidence_eps quantile of Beta(k, S - k + 1), so that
    P(bound <= true probability) >= 1 - confidence_eps for every true
    probability. pass_rate = 0 degenerates to a bound of 0.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if not (0.0 < confidence_eps < 1.0):
        raise ValueError("confidence_eps must lie in (0, 1)")
    passes = pass_rate * sample_count
    if passes <= 0.0:
        return 0.0
    return betainv(confidence_eps, passes, sample_count - passes + 1.0)


@dataclass(frozen=True)
class EcdfSummary:
    """Monte-Carlo satisfaction summary for one policy evaluation."""

    sample_count: int
    passes: int
    pass_rate: float
    confidence_eps: float
    lower_bound: float

    @classmethod
    def from_c_values(cls, c_values, confidence_eps: float) -> "EcdfSummary":
        c = np.asarray(c_values, dtype=float)
        rate = ecdf(c)
        return cls(
            sample_count=int(c.size),
            passes=int(np.count_nonzero(c <= 0.0)),
            pass_rate=rate,
            confidence_eps=float(confidence_eps),
            lower_bound=lower_bound(int(c.size), rate, confidence_eps),
        )

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "passes": self.passes,
            "pass_rate": self.pass_rate,
            "confidence_eps": self.confidence_eps,
            "lower_bound": self.lower_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EcdfSummary":
        return cls(
            sample_count=int(d["sample_count"]),
            passes=int(d["passes"]),
            pass_rate=float(d["pass_rate"]),
            confidence_eps=float(d["confidence_eps"]),
            lower_bound=float(d["lower_bound"]),
        )


def residual(lower_bound_value: float, alpha: float) -> float:
    """Squared distance between the realized lower bound and the target
    satisfaction level 1 - alpha."""
    return float((lower_bound_value - (1.0 - alpha)) ** 2)


# ---------------------------------------------------------------------------
# Empirical quantiles and initial backoffs
# ---------------------------------------------------------------------------


def empirical_quantile(samples, level: float) -> float:
    """Nearest-rank empirical quantile: the k-th smallest sample with
    k = ceil(S * level), clamped to [1, S]."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("need at least one sample")
    if not (0.0 < level <= 1.0):
        raise ValueError(f"quantile level must lie in (0, 1], got {level}")
    k = min(x.size, max(1, math.ceil(x.size * level)))
    return float(x[k - 1])


@dataclass(frozen=True)
class InitialBackoffs:
    """Per-constraint, per-step tightening seeds.

    base[j, t] is the (1 - delta)-quantile of the constraint samples
    minus their mean, computed from the stored sample tensor of shape
    (S, n_constraints, horizon).
    """

    base: np.ndarray
    delta: float
    samples: np.ndarray = field(repr=False)

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]

    def recompute(self) -> np.ndarray:
        """base recomputed from the stored samples (audit path)."""
        return compute_backoff_base(self.samples, self.delta)


def compute_backoff_base(g_samples: np.ndarray, delta: float) -> np.ndarray:
    g = np.asarray(g_samples, dtype=float)
    if g.ndim != 3:
        raise ValueError("expected constraint samples of shape (S, n_constraints, horizon)")
    s_count, n_g, horizon = g.shape
    if s_count < 2:
        raise ValueError("need at least two trajectories")
    base = np.empty((n_g, horizon))
    means = g.mean(axis=0)
    for j in range(n_g):
        for t in range(horizon):
            base[j, t] = empirical_quantile(g[:, j, t], 1.0 - delta) - means[j, t]
    return base


def initial_backoffs(g_samples, delta: float = 0.05) -> InitialBackoffs:
    """Backoff seeds from sampled constraint values of the nominal policy.

    For each constraint j and step t the seed is the (1 - delta)
    empirical quantile of g_{j,t} minus its sample mean, so that
    tightening by the seed pushes the sample-average constraint to its
    1 - delta quantile.
    """
    g = np.asarray(g_samples, dtype=float)
    base = compute_backoff_base(g, delta)
    return InitialBackoffs(base=base, delta=float(delta), samples=g)
