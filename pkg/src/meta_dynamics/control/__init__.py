"""Planning with learned or simulated dynamics, and the meta-RL loop built on it."""

from .dynamics import Dynamics, MlgpDynamics, SimulatorDynamics
from .metarl import RlConfig, TaskSpec, meta_test, meta_train
from .mpc import MpcConfig, Plan, mpc_episode, plan

__all__ = [
    "Dynamics",
    "MlgpDynamics",
    "MpcConfig",
    "Plan",
    "RlConfig",
    "SimulatorDynamics",
    "TaskSpec",
    "meta_test",
    "meta_train",
    "mpc_episode",
    "plan",
]
