"""Controllers and the dense QP solver they share."""

from taxicbf.control.mpc import MpcCbfController, MpcConfig, MpcInfo, mpc_cbf_step
from taxicbf.control.pid import (
    FilterInfo,
    PidCbfController,
    PidGains,
    PidState,
    pid_cbf_filter,
    pid_control,
)
from taxicbf.control.qp import QpProblem, QpResult, solve_qp

__all__ = [
    "FilterInfo",
    "MpcCbfController",
    "MpcConfig",
    "MpcInfo",
    "PidCbfController",
    "PidGains",
    "PidState",
    "QpProblem",
    "QpResult",
    "mpc_cbf_step",
    "pid_cbf_filter",
    "pid_control",
    "solve_qp",
]
