"""Stochastic feedback policy: squashed diagonal Gaussian over controls.

The policy is a small feedforward network over the scaled current state
plus a fixed window of past scaled states and controls. Its head emits a
mean and log-std per control dimension; actions are drawn in that
pre-squash space and mapped through a per-dimension logistic squash onto
the hard control box, so emitted controls satisfy the bounds by
construction. Log-densities carry the exact change-of-variables
correction, and gradients of the log-density with respect to every
network parameter are computed by explicit reverse-mode passes, which
keeps the policy-gradient estimator exact and the whole stack free of
framework dependencies.

Parameters live in a single flat vector (row-major weight matrices
followed by biases, layer by layer), which makes serialization,
optimizer state and finite-difference checks straightforward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam

__all__ = [
    "HistoryWindow",
    "PolicyConfig",
    "build_input",
    "forward",
    "init_params",
    "inverse_squash",
    "logp_grad",
    "policy_from_dict",
    "policy_to_dict",
    "pretrain",
    "sample_action",
    "score_backward",
    "squash",
]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture and scaling of the policy network."""

    control_bounds: tuple = ((120.0, 400.0), (0.0, 40.0))
    state_dim: int = 3
    hidden: tuple = (20, 20, 20, 20)
    window: int = 2
    leak: float = 0.01
    logstd_clamp: tuple = (-5.0, 2.0)
    state_scales: tuple = (10.0, 800.0, 0.2)

    @property
    def n_controls(self) -> int:
        return len(self.control_bounds)

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.window * (self.state_dim + self.n_controls)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, 2 * self.n_controls]

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))

    @property
    def bounds_lo(self) -> np.ndarray:
        return np.asarray([b[0] for b in self.control_bounds], dtype=float)

    @property
    def bounds_hi(self) -> np.ndarray:
        return np.asarray([b[1] for b in self.control_bounds], dtype=float)

    def validate(self) -> None:
        if self.state_dim < 1 or self.window < 0:
            raise ValueError("state_dim must be >= 1 and window >= 0")
        if len(self.state_scales) != self.state_dim:
            raise ValueError("state_scales length must match state_dim")
        if any(s <= 0 for s in self.state_scales):
            raise ValueError("state_scales must be positive")
        lo, hi = self.logstd_clamp
        if not lo < hi:
            raise ValueError("logstd_clamp must be an increasing pair")
        for blo, bhi in self.control_bounds:
            if not blo < bhi:
                raise ValueError("control bounds must satisfy lo < hi")


def init_params(cfg: PolicyConfig, rng: np.random.Generator) -> np.ndarray:
    """Fan-in-scaled random weights, zero biases, as one flat vector."""
    cfg.validate()
    chunks = []
    sizes = cfg.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(size=(n_in, n_out)) / math.sqrt(n_in)
        chunks.append(w.ravel())
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def _unpack(cfg: PolicyConfig, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    sizes = cfg.layer_sizes
    layers = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = theta[offset : offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = theta[offset : offset + n_out]
        offset += n_out
        layers.append((w, b))
    if offset != theta.size:
        raise ValueError(f"parameter vector has {theta.size} entries, expected {offset}")
    return layers


# ---------------------------------------------------------------------------
# Input construction
# ---------------------------------------------------------------------------


def scale_state(cfg: PolicyConfig, x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float) / np.asarray(cfg.state_scales, dtype=float)


def scale_control(cfg: PolicyConfig, u: np.ndarray) -> np.ndarray:
    lo, hi = cfg.bounds_lo, cfg.bounds_hi
    return (np.asarray(u, dtype=float) - lo) / (hi - lo)


@dataclass(frozen=True)
class HistoryWindow:
    """Sliding window of scaled past (state, control) pairs, newest first.

    Slots that predate the episode stay zero and are flagged invalid in
    `valid` so consumers can tell padding from genuine zeros.
    """

    entries: np.ndarray  # (B, window * (state_dim + n_controls))
    valid: np.ndarray  # (B, window) bool

    @classmethod
    def empty(cls, cfg: PolicyConfig, batch: int) -> "HistoryWindow":
        width = cfg.window * (cfg.state_dim + cfg.n_controls)
        return cls(entries=np.zeros((batch, width)), valid=np.zeros((batch, cfg.window), dtype=bool))

    def push(self, cfg: PolicyConfig, x_scaled: np.ndarray, u_scaled: np.ndarray) -> "HistoryWindow":
        if cfg.window == 0:
            return self
        block = np.concatenate([x_scaled, u_scaled], axis=-1)
        width = block.shape[-1]
        entries = np.concatenate([block, self.entries[:, : (cfg.window - 1) * width]], axis=-1)
        valid = np.concatenate(
            [np.ones((self.valid.shape[0], 1), dtype=bool), self.valid[:, : cfg.window - 1]], axis=-1
        )
        return HistoryWindow(entries=entries, valid=valid)


def build_input(cfg: PolicyConfig, x_obs: np.ndarray, hist: HistoryWindow) -> np.ndarray:
    """Network input rows: scaled observed state followed by the window."""
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.ndim == 1:
        x_obs = x_obs[None, :]
    return np.concatenate([scale_state(cfg, x_obs), hist.entries], axis=-1)


# ---------------------------------------------------------------------------
# Forward / backward passes
# ---------------------------------------------------------------------------


def forward(cfg: PolicyConfig, theta: np.ndarray, x: np.ndarray):
    """Batch forward pass.

    Returns (mu, logstd, cache) where mu and logstd are (B, n_controls);
    logstd is clamped to cfg.logstd_clamp. The cache feeds the backward
    pass.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("policy parameters contain non-finite values")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    layers = _unpack(cfg, theta)
    h = x
    activations = [h]
    preacts = []
    for w, b in layers[:-1]:
        z = h @ w + b
        preacts.append(z)
        h = np.where(z > 0.0, z, cfg.leak * z)
        activations.append(h)
    w, b = layers[-1]
    out = h @ w + b
    n_u = cfg.n_controls
    mu = out[:, :n_u]
    raw = out[:, n_u:]
    lo, hi = cfg.logstd_clamp
    logstd = np.clip(raw, lo, hi)
    clamp_mask = (raw > lo) & (raw < hi)
    cache = (layers, activations, preacts, clamp_mask)
    return mu, logstd, cache


def _backward(cfg: PolicyConfig, cache, d_mu: np.ndarray, d_logstd: np.ndarray) -> np.ndarray:
    """Accumulate the flat parameter gradient of sum_rows(d_mu * mu +
    d_logstd * logstd) using the forward cache."""
    layers, activations, preacts, clamp_mask = cache
    d_out = np.concatenate([d_mu, d_logstd * clamp_mask], axis=-1)
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    delta = d_out
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        grads_w[li] = activations[li].T @ delta
        grads_b[li] = delta.sum(axis=0)
        if li > 0:
            dh = delta @ w.T
            z = preacts[li - 1]
            delta = dh * np.where(z > 0.0, 1.0, cfg.leak)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])


# ---------------------------------------------------------------------------
# Squashing and log-densities
# ---------------------------------------------------------------------------


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a, dtype=float)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def squash(cfg: PolicyConfig, a: np.ndarray) -> np.ndarray:
    """Map pre-squash actions onto the control box."""
    lo, hi = cfg.bounds_lo, cfg.bounds_hi
    return lo + (hi - lo) * _sigmoid(np.asarray(a, dtype=float))


def inverse_squash(cfg: PolicyConfig, u: np.ndarray) -> np.ndarray:
    """Pre-squash action for a control strictly inside the box."""
    lo, hi = cfg.bounds_lo, cfg.bounds_hi
    u = np.asarray(u, dtype=float)
    if np.any(u <= lo) or np.any(u >= hi):
        raise ValueError("control on or outside the bounds has no pre-squash preimage")
    frac = (u - lo) / (hi - lo)
    return np.log(frac) - np.log1p(-frac)


def _log_squash_jacobian(cfg: PolicyConfig, a: np.ndarray) -> np.ndarray:
    # d squash / d a = (hi - lo) * sigmoid'(a); sigmoid'(a) in log space:
    # -|a| - 2*log(1 + exp(-|a|)) for numerical safety at large |a|.
    lo, hi = cfg.bounds_lo, cfg.bounds_hi
    abs_a = np.abs(np.asarray(a, dtype=float))
    return np.log(hi - lo) - abs_a - 2.0 * np.log1p(np.exp(-abs_a))


def action_logp(cfg: PolicyConfig, mu: np.ndarray, logstd: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Exact log-density of the squashed control with pre-squash value a."""
    std = np.exp(logstd)
    z = (a - mu) / std
    gauss = -0.5 * math.log(2.0 * math.pi) - logstd - 0.5 * z**2
    return (gauss - _log_squash_jacobian(cfg, a)).sum(axis=-1)


def sample_action(
    cfg: PolicyConfig,
    theta: np.ndarray,
    x_obs: np.ndarray,
    hist: HistoryWindow,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Draw one control and return it with its exact log-density."""
    inp = build_input(cfg, x_obs, hist)
    mu, logstd, _ = forward(cfg, theta, inp)
    z = rng.normal(size=cfg.n_controls)
    a = mu[0] + np.exp(logstd[0]) * z
    u = squash(cfg, a)
    logp = action_logp(cfg, mu[0], logstd[0], a)
    return u, float(logp)


def score_backward(
    cfg: PolicyConfig,
    theta: np.ndarray,
    inputs: np.ndarray,
    presquash: np.ndarray,
    row_weights: np.ndarray,
) -> np.ndarray:
    """Weighted sum over rows of the log-density parameter gradient.

    Returns sum_r w_r * d logp(a_r | input_r) / d theta in one batched
    reverse pass; the policy-gradient estimator and the pretraining loss
    are both single calls with suitable weights.
    """
    mu, logstd, cache = forward(cfg, theta, inputs)
    std = np.exp(logstd)
    diff = (presquash - mu) / std**2
    w = np.asarray(row_weights, dtype=float)[:, None]
    d_mu = diff * w
    d_logstd = (((presquash - mu) / std) ** 2 - 1.0) * w
    return _backward(cfg, cache, d_mu, d_logstd)


def logp_grad(
    cfg: PolicyConfig,
    theta: np.ndarray,
    x_obs: np.ndarray,
    hist: HistoryWindow,
    u: np.ndarray,
) -> np.ndarray:
    """Exact gradient of the control's log-density w.r.t. every parameter."""
    a = inverse_squash(cfg, u)
    inp = build_input(cfg, x_obs, hist)
    return score_backward(cfg, theta, inp, np.atleast_2d(a), np.ones(1))


# ---------------------------------------------------------------------------
# Supervised hot-start
# ---------------------------------------------------------------------------


def pretrain(
    cfg: PolicyConfig,
    theta0: np.ndarray,
    inputs: np.ndarray,
    controls: np.ndarray,
    epochs: int = 200,
    learning_rate: float = 1e-2,
) -> tuple[np.ndarray, list[float]]:
    """Fit the policy to teacher controls by maximum likelihood.

    inputs are pre-built network rows and controls must lie strictly
    inside the bounds. Returns the parameters with the best (lowest)
    negative log-likelihood seen, plus the per-epoch loss curve.
    """
    inputs = np.asarray(inputs, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if inputs.size == 0 or len(inputs) == 0:
        raise ValueError("pretraining dataset is empty")
    presquash = inverse_squash(cfg, controls)
    n = len(inputs)
    theta = np.asarray(theta0, dtype=float).copy()
    adam = Adam(learning_rate=learning_rate)

    def nll(th):
        mu, logstd, _ = forward(cfg, th, inputs)
        return float(-action_logp(cfg, mu, logstd, presquash).mean())

    losses = [nll(theta)]
    best_theta, best_loss = theta.copy(), losses[0]
    weights = np.full(n, 1.0 / n)
    for _ in range(epochs):
        grad = score_backward(cfg, theta, inputs, presquash, weights)
        theta = adam.step(theta, grad)
        loss = nll(theta)
        losses.append(loss)
        if loss < best_loss:
            best_loss, best_theta = loss, theta.copy()
    return best_theta, losses


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def policy_to_dict(cfg: PolicyConfig, theta: np.ndarray) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "activation": "leaky_relu",
        "leak": cfg.leak,
        "state_dim": cfg.state_dim,
        "hidden": list(cfg.hidden),
        "window": cfg.window,
        "control_bounds": [list(b) for b in cfg.control_bounds],
        "logstd_clamp": list(cfg.logstd_clamp),
        "state_scales": list(cfg.state_scales),
        "params": np.asarray(theta, dtype=float).tolist(),
    }


def policy_from_dict(d: dict) -> tuple[PolicyConfig, np.ndarray]:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported policy format version: {version!r}")
    if d.get("activation") != "leaky_relu":
        raise ValueError(f"unsupported activation: {d.get('activation')!r}")
    cfg = PolicyConfig(
        control_bounds=tuple(tuple(b) for b in d["control_bounds"]),
        state_dim=int(d["state_dim"]),
        hidden=tuple(int(h) for h in d["hidden"]),
        window=int(d["window"]),
        leak=float(d["leak"]),
        logstd_clamp=tuple(d["logstd_clamp"]),
        state_scales=tuple(d["state_scales"]),
    )
    cfg.validate()
    theta = np.asarray(d["params"], dtype=float)
    if theta.size != cfg.n_params:
        raise ValueError(f"parameter count {theta.size} does not match architecture ({cfg.n_params})")
    return cfg, theta
