"""Stochastic fed-batch photobioreactor environment.

Ground-truth dynamics for the photo-production case studies: three mass
balances based on Monod kinetics for biomass c_x (g/L), nitrate c_N
(mg/L) and product c_q (g/L), driven by light intensity I (umol/m2/s)
and nitrate inflow F_N (mg/L/h):

    dc_x/dt = u_m * I/(I + k_s + I^2/k_i) * c_x*c_N/(c_N + K_N) - u_d*c_x
    dc_N/dt = -y_nx * u_m * I/(I + k_s + I^2/k_i) * c_x*c_N/(c_N + K_N) + F_N
    dc_q/dt = k_m * I/(I + k_sq + I^2/k_iq) * c_x - k_d*c_q/(c_N + K_Nq)

The batch is discretized into `horizon` control intervals of length
`dt`; within an interval the control is held and the ODEs are integrated
with fixed-step RK4. Stochasticity enters through sampled initial
concentrations, sampled kinetic parameters, an additive process
disturbance applied once per interval, and additive measurement noise on
observations.

State constraints are the normalized nitrate cap and product/biomass
ratio cap:

    g1 = c_N/800 - 1 <= 0        g2 = c_q/(0.011*c_x) - 1 <= 0

and the per-step reward penalizes control moves (diagonal quadratic
form) while the terminal reward is the final product concentration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BioreactorEnv",
    "DegenerateConfigError",
    "EnvConfig",
    "IntegrationError",
    "KineticParams",
    "DEFAULT_PARAM_MEANS",
    "CASE1_PARAM_STDS",
    "NITRATE_LIMIT",
    "PRODUCT_BIOMASS_RATIO",
    "monod_rhs",
    "rk4_integrate",
]

NITRATE_LIMIT = 800.0
PRODUCT_BIOMASS_RATIO = 0.011

# Nominal kinetic coefficients for the Arthrospira platensis phycocyanin
# model. Values for the light/nitrate saturation constants k_s, k_i, K_N
# follow the published uncertainty study; the remaining coefficients are
# the standard published set for this organism and can be overridden in
# EnvConfig.param_means.
DEFAULT_PARAM_MEANS: dict[str, float] = {
    "u_m": 0.0572,  # max specific growth rate (1/h)
    "u_d": 0.0,  # specific decay rate (1/h)
    "y_nx": 504.49,  # nitrate consumed per biomass grown (mg/g)
    "k_m": 0.00016,  # specific product formation rate (g/L/h per g/L)
    "k_d": 0.281,  # product degradation constant (mg/L/h)
    "k_s": 178.9,  # light saturation, growth (umol/m2/s)
    "k_i": 447.1,  # light inhibition, growth (umol/m2/s)
    "K_N": 393.1,  # nitrate half-saturation, growth (mg/L)
    "k_sq": 23.51,  # light saturation, product synthesis (umol/m2/s)
    "k_iq": 800.0,  # light inhibition, product synthesis (umol/m2/s)
    "K_Nq": 16.89,  # nitrate half-saturation, product degradation (mg/L)
}

# 10% relative parametric uncertainty on the three estimated constants.
CASE1_PARAM_STDS: dict[str, float] = {"k_s": 17.89, "k_i": 44.71, "K_N": 39.31}

PARAM_ORDER = ("u_m", "u_d", "y_nx", "k_m", "k_d", "k_s", "k_i", "K_N", "k_sq", "k_iq", "K_Nq")

# Coefficients that appear in denominators and must stay strictly positive.
_POSITIVE_PARAMS = ("k_s", "k_i", "K_N", "k_sq", "k_iq", "K_Nq")

_MAX_REJECTION_RETRIES = 100


class IntegrationError(ArithmeticError):
    """Non-finite state during ODE integration."""

    def __init__(self, message: str, substep: int):
        super().__init__(message)
        self.substep = substep


class DegenerateConfigError(ValueError):
    """Sampling distribution keeps producing invalid kinetic parameters."""


@dataclass(frozen=True)
class KineticParams:
    """Monod-kinetics coefficients; fields are scalars or (B,) arrays."""

    u_m: float | np.ndarray
    u_d: float | np.ndarray
    y_nx: float | np.ndarray
    k_m: float | np.ndarray
    k_d: float | np.ndarray
    k_s: float | np.ndarray
    k_i: float | np.ndarray
    K_N: float | np.ndarray
    k_sq: float | np.ndarray
    k_iq: float | np.ndarray
    K_Nq: float | np.ndarray

    @classmethod
    def from_mapping(cls, values: dict) -> "KineticParams":
        missing = [n for n in PARAM_ORDER if n not in values]
        if missing:
            raise ValueError(f"missing kinetic parameters: {missing}")
        return cls(**{n: values[n] for n in PARAM_ORDER})

    @classmethod
    def stack(cls, items: list["KineticParams"]) -> "KineticParams":
        return cls(**{n: np.array([getattr(p, n) for p in items]) for n in PARAM_ORDER})

    def validate(self, names=PARAM_ORDER) -> None:
        for name in names:
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"kinetic parameter {name} is not finite")
            if name in _POSITIVE_PARAMS:
                if np.any(v <= 0.0):
                    raise ValueError(f"kinetic parameter {name} must be positive")
            elif np.any(v < 0.0):
                raise ValueError(f"kinetic parameter {name} must be non-negative")


@dataclass
class EnvConfig:
    """Batch layout, uncertainty model and reward weights of the reactor."""

    horizon: int = 12
    dt: float = 20.0
    substeps: int = 30
    init_mean: tuple[float, float] = (1.0, 150.0)  # (c_x, c_N); c_q starts at 0
    init_cov_diag: tuple[float, float] = (1e-3, 22.5)
    param_means: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PARAM_MEANS))
    param_stds: dict[str, float] = field(default_factory=dict)
    process_noise_diag: tuple[float, float, float] = (0.0, 0.0, 0.0)
    measurement_noise_diag: tuple[float, float, float] = (0.0, 0.0, 0.0)
    control_bounds: tuple[tuple[float, float], tuple[float, float]] = (
        (120.0, 400.0),
        (0.0, 40.0),
    )
    control_move_weights: tuple[float, float] = (3.125e-8, 3.125e-6)
    cx_floor: float = 1e-9
    seed: int | None = None

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if any(v < 0.0 for v in self.init_cov_diag):
            raise ValueError("initial covariance diagonal must be >= 0")
        if any(v < 0.0 for v in self.process_noise_diag):
            raise ValueError("process noise diagonal must be >= 0")
        if any(v < 0.0 for v in self.measurement_noise_diag):
            raise ValueError("measurement noise diagonal must be >= 0")
        for lo, hi in self.control_bounds:
            if not lo < hi:
                raise ValueError(f"control bounds must satisfy lo < hi, got ({lo}, {hi})")
        for name, std in self.param_stds.items():
            if name not in PARAM_ORDER:
                raise ValueError(f"unknown kinetic parameter {name!r}")
            if std < 0.0:
                raise ValueError(f"std of {name} must be >= 0")
        # Sampled parameters may carry any mean: rejection sampling guards
        # them per episode and flags degenerate distributions there.
        fixed = [n for n in PARAM_ORDER if self.param_stds.get(n, 0.0) == 0.0]
        KineticParams.from_mapping(self.param_means).validate(fixed)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "dt": self.dt,
            "substeps": self.substeps,
            "init_mean": list(self.init_mean),
            "init_cov_diag": list(self.init_cov_diag),
            "param_means": dict(self.param_means),
            "param_stds": dict(self.param_stds),
            "process_noise_diag": list(self.process_noise_diag),
            "measurement_noise_diag": list(self.measurement_noise_diag),
            "control_bounds": [list(b) for b in self.control_bounds],
            "control_move_weights": list(self.control_move_weights),
            "cx_floor": self.cx_floor,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        cfg = cls(
            horizon=int(d["horizon"]),
            dt=float(d["dt"]),
            substeps=int(d["substeps"]),
            init_mean=tuple(d["init_mean"]),
            init_cov_diag=tuple(d["init_cov_diag"]),
            param_means={k: float(v) for k, v in d["param_means"].items()},
            param_stds={k: float(v) for k, v in d.get("param_stds", {}).items()},
            process_noise_diag=tuple(d["process_noise_diag"]),
            measurement_noise_diag=tuple(d["measurement_noise_diag"]),
            control_bounds=tuple(tuple(b) for b in d["control_bounds"]),
            control_move_weights=tuple(d["control_move_weights"]),
            cx_floor=float(d.get("cx_floor", 1e-9)),
            seed=d.get("seed"),
        )
        cfg.validate()
        return cfg

    def with_overrides(self, **kwargs) -> "EnvConfig":
        return replace(self, **kwargs)


def monod_rhs(x: np.ndarray, u: np.ndarray, p: KineticParams) -> np.ndarray:
    """Right-hand side of the three mass balances; broadcasts over leading
    batch dimensions of x (..., 3) and u (..., 2)."""
    c_x, c_n, c_q = x[..., 0], x[..., 1], x[..., 2]
    light, inflow = u[..., 0], u[..., 1]
    growth_light = light / (light + p.k_s + light**2 / p.k_i)
    growth = p.u_m * growth_light * c_x * c_n / (c_n + p.K_N)
    product_light = light / (light + p.k_sq + light**2 / p.k_iq)
    d_cx = growth - p.u_d * c_x
    d_cn = -p.y_nx * growth + inflow
    d_cq = p.k_m * product_light * c_x - p.k_d * c_q / (c_n + p.K_Nq)
    return np.stack([d_cx, d_cn, d_cq], axis=-1)


def rk4_integrate(rhs, x: np.ndarray, dt: float, substeps: int) -> np.ndarray:
    """Integrate dx/dt = rhs(x) over dt with fixed-step classical RK4.

    Raises IntegrationError on non-finite intermediate states, reporting
    the offending substep.
    """
    h = dt / substeps
    state = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(substeps):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * h * k1)
            k3 = rhs(state + 0.5 * h * k2)
            k4 = rhs(state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(state)):
                raise IntegrationError(f"non-finite state at substep {i}", substep=i)
    return state


class BioreactorEnv:
    """Closed-loop simulation interface over :class:`EnvConfig`.

    Single-draw operations take an explicit numpy Generator; batch
    operations take pre-drawn standard normals so that each rollout's
    randomness stays on its own stream regardless of batch layout. All
    operations are pure given their stream.
    """

    state_dim = 3
    n_controls = 2
    n_constraints = 2

    def __init__(self, cfg: EnvConfig):
        cfg.validate()
        self.cfg = cfg
        self._init_std = np.sqrt(np.asarray(cfg.init_cov_diag, dtype=float))
        self._w_std = np.sqrt(np.asarray(cfg.process_noise_diag, dtype=float))
        self._v_std = np.sqrt(np.asarray(cfg.measurement_noise_diag, dtype=float))
        self._bounds = np.asarray(cfg.control_bounds, dtype=float)
        self._move_weights = np.asarray(cfg.control_move_weights, dtype=float)
        self._sampled_params = [n for n in PARAM_ORDER if cfg.param_stds.get(n, 0.0) > 0.0]

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def control_bounds(self) -> np.ndarray:
        return self._bounds

    @property
    def measurement_std(self) -> np.ndarray:
        return self._v_std

    # -- episode context ----------------------------------------------------

    def sample_episode_context(self, rng: np.random.Generator) -> tuple[np.ndarray, KineticParams]:
        """Draw the initial state and this episode's kinetic parameters."""
        init = np.asarray(self.cfg.init_mean, dtype=float) + self._init_std * rng.normal(size=2)
        x0 = np.array([init[0], init[1], 0.0])
        values = dict(self.cfg.param_means)
        for name in self._sampled_params:
            mean = self.cfg.param_means[name]
            std = self.cfg.param_stds[name]
            for attempt in range(_MAX_REJECTION_RETRIES + 1):
                candidate = mean + std * rng.normal()
                if candidate > 0.0:
                    break
            else:  # pragma: no cover - requires pathological configuration
                candidate = -1.0
            if candidate <= 0.0:
                raise DegenerateConfigError(
                    f"could not draw a positive value for {name} "
                    f"(mean={mean}, std={std}) in {_MAX_REJECTION_RETRIES} retries"
                )
            values[name] = candidate
        params = KineticParams.from_mapping(values)
        params.validate()
        return x0, params

    def begin_batch(self, streams: list[np.random.Generator]) -> tuple[np.ndarray, KineticParams]:
        contexts = [self.sample_episode_context(rng) for rng in streams]
        x0 = np.stack([c[0] for c in contexts])
        params = KineticParams.stack([c[1] for c in contexts])
        return x0, params

    # -- dynamics -----------------------------------------------------------

    def _check_controls(self, u: np.ndarray) -> None:
        lo, hi = self._bounds[:, 0], self._bounds[:, 1]
        if np.any(u < lo) or np.any(u > hi):
            raise ValueError(f"control outside hard bounds: {u!r}")

    def _integrate(self, x: np.ndarray, u: np.ndarray, p: KineticParams) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._check_controls(u)
        return rk4_integrate(lambda s: monod_rhs(s, u, p), x, self.cfg.dt, self.cfg.substeps)

    def step(
        self,
        x: np.ndarray,
        u: np.ndarray,
        p: KineticParams,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """True next state: RK4 over one interval plus one additive
        process-disturbance draw."""
        return self._integrate(x, u, p) + self._w_std * rng.normal(size=3)

    def step_batch(
        self,
        x: np.ndarray,
        u: np.ndarray,
        p: KineticParams,
        w_normals: np.ndarray,
    ) -> np.ndarray:
        return self._integrate(x, u, p) + self._w_std * w_normals

    def observe(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(x, dtype=float) + self._v_std * rng.normal(size=3)

    def observe_batch(self, x: np.ndarray, v_normals: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + self._v_std * v_normals

    # -- constraints and reward ----------------------------------------------

    def constraints(self, x: np.ndarray) -> np.ndarray:
        """[c_N/800 - 1, c_q/(0.011 c_x) - 1] with c_x floored at cx_floor."""
        g, _ = self.constraints_batch(np.asarray(x, dtype=float)[None, :])
        return g[0]

    def constraints_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch constraint values plus a mask of rows where the biomass
        floor kicked in (flagged in trajectory metadata)."""
        x = np.asarray(x, dtype=float)
        floored = x[..., 0] <= self.cfg.cx_floor
        cx = np.maximum(x[..., 0], self.cfg.cx_floor)
        g1 = x[..., 1] / NITRATE_LIMIT - 1.0
        g2 = x[..., 2] / (PRODUCT_BIOMASS_RATIO * cx) - 1.0
        return np.stack([g1, g2], axis=-1), floored

    def rewards_batch(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Per-step rewards: negative control-move quadratic form for
        t = 0..T-1 (with u_{-1} := u_0) and final product at t = T."""
        controls = np.asarray(controls, dtype=float)
        states = np.asarray(states, dtype=float)
        prev = np.concatenate([controls[..., :1, :], controls[..., :-1, :]], axis=-2)
        du = controls - prev
        move_cost = (du**2 * self._move_weights).sum(axis=-1)
        rewards = np.concatenate([-move_cost, states[..., -1:, 2]], axis=-1)
        return rewards

    def rewards(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return self.rewards_batch(states[None, ...], controls[None, ...])[0]


def reward(traj, t: int) -> float:
    """Reward at step t of a trajectory (terminal product at t = T)."""
    rewards = np.asarray(traj.rewards, dtype=float)
    return float(rewards[t])
