"""Task-space maps: forward kinematics, positional Jacobian, its analytic
time derivative, and the null-space projector.

Planar robots control (x, z); spatial robots control (x, y, z). The
Jacobian derivative is assembled from the body-velocity recursion rather
than finite differences, so ydd = J qdd + dJ qd holds along trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import pinv
from .multibody import RobotModel, RobotState, chain_motion, chain_pose, cross3


def task_rows(model: RobotModel) -> np.ndarray:
    """World coordinate indices controlled by this robot's task."""
    return np.array([0, 2]) if model.task_dim == 2 else np.array([0, 1, 2])


def forward_kinematics(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """End-effector position in base coordinates (base at the origin)."""
    return chain_pose(model, np.asarray(q, dtype=float)).ee


def _full_jacobian(pose) -> np.ndarray:
    """3 x n positional Jacobian: column k is axis_k x (ee - origin_k)."""
    return cross3(pose.axes_w, pose.ee[None, :] - pose.origins).T


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Task-space positional Jacobian (task_dim x n)."""
    pose = chain_pose(model, np.asarray(q, dtype=float))
    return _full_jacobian(pose)[task_rows(model)]


def jacobian_dot(model: RobotModel, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Time derivative of the task Jacobian along (q, dq)."""
    pose = chain_pose(model, np.asarray(q, dtype=float))
    motion = chain_motion(pose, np.asarray(dq, dtype=float))
    dj = _dj_full(pose, motion)
    return dj[task_rows(model)]


def _dj_full(pose, motion) -> np.ndarray:
    # d/dt [a_k x (ee - p_k)] with the axis carried by its link.
    v_ee = motion.v_origin[-1] + cross3(motion.omega[-1], pose.ee - pose.origins[-1])
    da = cross3(motion.omega, pose.axes_w)
    arm = pose.ee[None, :] - pose.origins
    darm = v_ee[None, :] - motion.v_origin
    return (cross3(da, arm) + cross3(pose.axes_w, darm)).T


def null_projector(jac: np.ndarray) -> np.ndarray:
    """N = I - J^+ J, the projector onto task-redundant joint motion."""
    n = jac.shape[1]
    return np.eye(n) - pinv(jac) @ jac


@dataclass(frozen=True)
class TaskState:
    """Task-space snapshot: position, velocity (J qd by construction),
    Jacobian, Jacobian derivative, and null-space projector."""

    y: np.ndarray
    dy: np.ndarray
    J: np.ndarray
    dJ: np.ndarray
    N: np.ndarray


def task_state(model: RobotModel, state: RobotState) -> TaskState:
    """Evaluate the full task-space snapshot at a robot state."""
    pose = chain_pose(model, state.q)
    motion = chain_motion(pose, state.dq)
    rows = task_rows(model)
    jac = _full_jacobian(pose)[rows]
    dj = _dj_full(pose, motion)[rows]
    return TaskState(y=pose.ee[rows], dy=jac @ state.dq, J=jac, dJ=dj,
                     N=null_projector(jac))
