"""Adam optimizer on flat parameter vectors (ascent convention)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Adam"]


@dataclass
class Adam:
    """Adam with bias correction; `step` moves parameters uphill along the
    supplied gradient, so minimization passes the negated gradient."""

    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta + self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
            "t": self.t,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Adam":
        opt = cls(
            learning_rate=float(d["learning_rate"]),
            beta1=float(d["beta1"]),
            beta2=float(d["beta2"]),
            eps=float(d["eps"]),
            t=int(d["t"]),
        )
        if d.get("m") is not None:
            opt.m = np.asarray(d["m"], dtype=float)
            opt.v = np.asarray(d["v"], dtype=float)
        return opt
