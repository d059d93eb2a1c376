"""Chance-constrained policy optimization for stochastic bioprocess control.

Trains squashed-Gaussian feedback policies with penalized policy
gradients on a stochastic fed-batch photobioreactor (or a Gaussian
process surrogate learned from logged episodes), and tunes constraint
backoffs by Bayesian optimization until the joint chance constraints
hold with a requested probability at a requested confidence level.
"""

__version__ = "0.1.0"

from .bioreactor import BioreactorEnv, EnvConfig, KineticParams
from .chance import EcdfSummary, betainc, betainv, ecdf, initial_backoffs, lower_bound
from .policy import PolicyConfig, init_params, policy_from_dict, policy_to_dict
from .streams import StreamTree, substream
from .trajectory import Trajectory, rollout, rollout_batch
from .training import BackoffSchedule, TrainConfig, TrainReport, train_fixed_backoff

__all__ = [
    "BioreactorEnv",
    "BackoffSchedule",
    "EcdfSummary",
    "EnvConfig",
    "KineticParams",
    "PolicyConfig",
    "StreamTree",
    "TrainConfig",
    "TrainReport",
    "Trajectory",
    "betainc",
    "betainv",
    "ecdf",
    "init_params",
    "initial_backoffs",
    "lower_bound",
    "policy_from_dict",
    "policy_to_dict",
    "rollout",
    "rollout_batch",
    "substream",
    "train_fixed_backoff",
    "__version__",
]
