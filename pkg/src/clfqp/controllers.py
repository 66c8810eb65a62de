"""The five task-space control laws, each a per-step map from
(model, state, reference) to a bounded input u.

QP-based laws:

- clf-qp: picks a virtual task acceleration mu near a PD reference subject
  to the Lyapunov decrease row, with the input tied to mu through the
  input-output linearizing relation and boxed by the actuator bounds.
- soft-id-clf-qp: optimizes over whole-body accelerations instead, imposing
  inverse dynamics as a hard equality only on the actuated rows of the
  collocated coordinates (T_a = B'), which leaves the unactuated rows soft
  and regularizes null-space motion.
- ic-qp: the same program as soft-id-clf-qp with the Lyapunov row and its
  relaxation removed.

Closed-form baselines:

- ic: operational-space impedance control with full cancellation of
  stiffness, damping, and gravity, clamped to the input box.
- uic: impedance control with torque components in unactuated directions
  removed by a null-space correction before clamping.

Controller instances own their warm-start and hold-previous-input state;
the underlying *_step functions are pure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .clf import ClfData, TaskError, clf_row, clf_value, default_clf, vdot_coeffs
from .kinematics import TaskState, task_rows, task_state
from .linalg import pinv
from .multibody import DynamicsTerms, RobotModel, RobotState, bias_terms, solve_inertia
from .qp import QpProblem, QpSolution, QpStatus, solve_qp

LAMBDA_REG = 1e-8        # task-inertia regularization for ic/uic
RANK_DEFICIENT_TOL = 1e-8

CONTROLLER_NAMES = ("clf-qp", "soft-id-clf-qp", "ic", "uic", "ic-qp")


class RankDeficientWarning(UserWarning):
    """The decoupling matrix lost rank; the pseudoinverse branch is live."""


class RankDeficientB(ValueError):
    """Actuation matrix has dependent columns; no collocated form exists."""


@dataclass(frozen=True)
class Reference:
    """Task-space reference: position, velocity, and acceleration, each a
    function of time. Set points carry zero derivatives."""

    y_ref: Callable[[float], np.ndarray]
    dy_ref: Callable[[float], np.ndarray]
    ddy_ref: Callable[[float], np.ndarray]

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.asarray(self.y_ref(t), dtype=float),
                np.asarray(self.dy_ref(t), dtype=float),
                np.asarray(self.ddy_ref(t), dtype=float))

    @classmethod
    def setpoint(cls, y: np.ndarray) -> "Reference":
        y = np.asarray(y, dtype=float)
        zero = np.zeros_like(y)
        return cls(y_ref=lambda t: y, dy_ref=lambda t: zero, ddy_ref=lambda t: zero)


@dataclass
class ControlStepLog:
    """Per-step diagnostics; u always lies inside the input box."""

    u: np.ndarray
    mu: np.ndarray
    delta: float
    V: float
    Vdot: float
    qp_status: str
    solve_time: float
    saturated: np.ndarray


@dataclass(frozen=True)
class CollocatedSplit:
    """Coordinate change T = [B'; W] splitting joints into actuated and
    unactuated parts. S (the first m rows of inv(T')) satisfies S B = I, so
    S (M qdd + h) = u is exactly the actuated block of the dynamics."""

    T: np.ndarray
    S: np.ndarray
    W: np.ndarray


def collocated_split(b: np.ndarray) -> CollocatedSplit:
    b = np.asarray(b, dtype=float)
    n, m = b.shape
    u_svd, sv, _ = np.linalg.svd(b, full_matrices=True)
    if m > 0 and (sv.size < m or sv[m - 1] <= 1e-12 * sv[0]):
        raise RankDeficientB("actuation matrix does not have full column rank")
    w = u_svd[:, m:].T
    t = np.vstack([b.T, w])
    cond = np.linalg.cond(t)
    if cond > 1e8:
        raise RankDeficientB(f"collocated transform condition {cond:.2e} too high")
    s = np.linalg.inv(t)[:, :m].T
    return CollocatedSplit(T=t, S=s, W=w)


def lie_terms(model: RobotModel, state: RobotState,
              terms: DynamicsTerms | None = None,
              ts: TaskState | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Second-order task dynamics pieces: ydd = Lf2y + LgLfy u.

    Lf2y = -J M^-1 h + dJ qd and LgLfy = J M^-1 B.
    """
    if terms is None:
        terms = bias_terms(model, state)
    if ts is None:
        ts = task_state(model, state)
    minv_cols = solve_inertia(terms.M, np.column_stack([terms.h, model.B]))
    lf2y = -ts.J @ minv_cols[:, 0] + ts.dJ @ state.dq
    lglfy = ts.J @ minv_cols[:, 1:]
    return lf2y, lglfy


def io_linearizing_u(model: RobotModel, state: RobotState, ref: Reference,
                     mu: np.ndarray) -> np.ndarray:
    """Input that renders the task error dynamics edd = mu (exactly when the
    decoupling matrix is square and invertible, least-squares otherwise)."""
    _, _, ddy_ref = ref.at(state.t)
    lf2y, lglfy = lie_terms(model, state)
    sv = np.linalg.svd(lglfy, compute_uv=False)
    if sv.size and sv[-1] < RANK_DEFICIENT_TOL * sv[0]:
        warnings.warn("decoupling matrix is rank deficient at this state",
                      RankDeficientWarning, stacklevel=2)
    return pinv(lglfy) @ (-lf2y + mu + ddy_ref)


def mu_ref(gains, err: TaskError) -> np.ndarray:
    """PD reference for the task error acceleration, critically damped
    through kd = 2 sqrt(kp)."""
    return -gains.kd * err.de - gains.kp * err.e


def _clamp(u: np.ndarray, model: RobotModel) -> np.ndarray:
    return np.minimum(np.maximum(u, model.u_min), model.u_max)


def _saturation_mask(u: np.ndarray, model: RobotModel) -> np.ndarray:
    tol = 1e-9 * (model.u_max - model.u_min)
    return (u <= model.u_min + tol) | (u >= model.u_max - tol)


@dataclass
class _StepData:
    """Shared per-step evaluations."""

    terms: DynamicsTerms
    ts: TaskState
    y_ref: np.ndarray
    dy_ref: np.ndarray
    ddy_ref: np.ndarray
    err: TaskError


def _evaluate_step(model: RobotModel, state: RobotState, ref: Reference) -> _StepData:
    terms = bias_terms(model, state)
    ts = task_state(model, state)
    y_ref, dy_ref, ddy_ref = ref.at(state.t)
    err = TaskError(e=ts.y - y_ref, de=ts.dy - dy_ref)
    return _StepData(terms=terms, ts=ts, y_ref=y_ref, dy_ref=dy_ref,
                     ddy_ref=ddy_ref, err=err)


def clf_qp_step(model: RobotModel, state: RobotState, ref: Reference, gains,
                clf: ClfData, warm_start: tuple | None = None,
                u_hold: np.ndarray | None = None
                ) -> tuple[np.ndarray, ControlStepLog, QpSolution]:
    """One step of the clf-qp law.

    Decision variables (u, mu, delta): minimize
    w1 ||mu - mu_ref||^2 + rho delta^2 subject to the Lyapunov decrease row,
    the linearizing equality u = (LgLfy)^+ (-Lf2y + mu + ydd_ref), the input
    box, and delta >= 0. On infeasibility the previous input is held.
    """
    data = _evaluate_step(model, state, ref)
    n_t, m = model.task_dim, model.m
    lf2y, lglfy = lie_terms(model, state, terms=data.terms, ts=data.ts)
    g_pinv = pinv(lglfy)

    d = m + n_t + 1
    h_cost = np.zeros((d, d))
    f_cost = np.zeros(d)
    mu_des = mu_ref(gains, data.err)
    h_cost[m:m + n_t, m:m + n_t] = 2.0 * gains.w1 * np.eye(n_t)
    f_cost[m:m + n_t] = -2.0 * gains.w1 * mu_des
    h_cost[-1, -1] = 2.0 * gains.rho

    a_eq = np.zeros((m, d))
    a_eq[:, :m] = np.eye(m)
    a_eq[:, m:m + n_t] = -g_pinv
    b_eq = g_pinv @ (-lf2y + data.ddy_ref)

    row, rhs = clf_row(clf, data.err)
    a_in = np.zeros((1, d))
    a_in[0, m:] = row
    b_in = np.array([rhs])

    lb = np.concatenate([model.u_min, np.full(n_t, -np.inf), [0.0]])
    ub = np.concatenate([model.u_max, np.full(n_t, np.inf), [np.inf]])

    prob = QpProblem(h_cost, f_cost, a_eq, b_eq, a_in, b_in, lb, ub)
    sol = solve_qp(prob, warm_start=warm_start)
    return _finish_qp_step(model, data, clf, sol, u_slice=slice(0, m),
                           mu_of=lambda x: x[m:m + n_t], delta_of=lambda x: x[-1],
                           u_hold=u_hold, state=state)


def soft_id_clf_qp_step(model: RobotModel, state: RobotState, ref: Reference,
                        gains, clf: ClfData, split: CollocatedSplit,
                        warm_start: tuple | None = None,
                        u_hold: np.ndarray | None = None
                        ) -> tuple[np.ndarray, ControlStepLog, QpSolution]:
    """One step of the soft-id-clf-qp law.

    Decision variables (qdd, u, delta): minimize
    w1 ||mu - mu_ref||^2 + w2 ||qdd||^2 + w3 ||u||^2
    + w4 ||N qdd - qdd_null_ref||^2 + rho delta^2, with
    mu = J qdd + dJ qd - ydd_ref and qdd_null_ref = -d_null N qd, subject to
    the Lyapunov row, the actuated-row equality S (M qdd + h) = u, the input
    box, and delta >= 0.
    """
    data = _evaluate_step(model, state, ref)
    n, m, n_t = model.n, model.m, model.task_dim
    jac, djac, nproj = data.ts.J, data.ts.dJ, data.ts.N

    d = n + m + 1
    mu_des = mu_ref(gains, data.err)
    mu_drift = djac @ state.dq - data.ddy_ref        # mu = J qdd + mu_drift
    qdd_null_ref = -gains.d_null * (nproj @ state.dq)

    h_cost = np.zeros((d, d))
    f_cost = np.zeros(d)
    # N is symmetric idempotent, so N'N = N.
    h_qdd = 2.0 * (gains.w1 * jac.T @ jac + gains.w2 * np.eye(n) + gains.w4 * nproj)
    h_cost[:n, :n] = h_qdd
    f_cost[:n] = (2.0 * gains.w1 * jac.T @ (mu_drift - mu_des)
                  - 2.0 * gains.w4 * (nproj @ qdd_null_ref))
    h_cost[n:n + m, n:n + m] = 2.0 * gains.w3 * np.eye(m)
    h_cost[-1, -1] = 2.0 * gains.rho

    a_eq = np.zeros((m, d))
    a_eq[:, :n] = split.S @ data.terms.M
    a_eq[:, n:n + m] = -np.eye(m)
    b_eq = -split.S @ data.terms.h

    row, rhs = clf_row(clf, data.err)     # over (mu, delta)
    a1 = row[:n_t]
    a_in = np.zeros((1, d))
    a_in[0, :n] = a1 @ jac
    a_in[0, -1] = row[-1]
    b_in = np.array([rhs - a1 @ mu_drift])

    lb = np.concatenate([np.full(n, -np.inf), model.u_min, [0.0]])
    ub = np.concatenate([np.full(n, np.inf), model.u_max, [np.inf]])

    prob = QpProblem(h_cost, f_cost, a_eq, b_eq, a_in, b_in, lb, ub)
    sol = solve_qp(prob, warm_start=warm_start)
    return _finish_qp_step(model, data, clf, sol, u_slice=slice(n, n + m),
                           mu_of=lambda x: jac @ x[:n] + mu_drift,
                           delta_of=lambda x: x[-1], u_hold=u_hold, state=state)


def ic_qp_step(model: RobotModel, state: RobotState, ref: Reference, gains,
               split: CollocatedSplit, warm_start: tuple | None = None,
               u_hold: np.ndarray | None = None, clf: ClfData | None = None
               ) -> tuple[np.ndarray, ControlStepLog, QpSolution]:
    """One step of ic-qp: the soft-id program with the Lyapunov row and its
    relaxation removed."""
    data = _evaluate_step(model, state, ref)
    n, m = model.n, model.m
    jac, djac, nproj = data.ts.J, data.ts.dJ, data.ts.N

    d = n + m
    mu_des = mu_ref(gains, data.err)
    mu_drift = djac @ state.dq - data.ddy_ref
    qdd_null_ref = -gains.d_null * (nproj @ state.dq)

    h_cost = np.zeros((d, d))
    f_cost = np.zeros(d)
    h_cost[:n, :n] = 2.0 * (gains.w1 * jac.T @ jac + gains.w2 * np.eye(n)
                            + gains.w4 * nproj)
    f_cost[:n] = (2.0 * gains.w1 * jac.T @ (mu_drift - mu_des)
                  - 2.0 * gains.w4 * (nproj @ qdd_null_ref))
    h_cost[n:, n:] = 2.0 * gains.w3 * np.eye(m)

    a_eq = np.zeros((m, d))
    a_eq[:, :n] = split.S @ data.terms.M
    a_eq[:, n:] = -np.eye(m)
    b_eq = -split.S @ data.terms.h

    lb = np.concatenate([np.full(n, -np.inf), model.u_min])
    ub = np.concatenate([np.full(n, np.inf), model.u_max])

    prob = QpProblem(h_cost, f_cost, a_eq, b_eq, None, None, lb, ub)
    sol = solve_qp(prob, warm_start=warm_start)
    return _finish_qp_step(model, data, clf, sol, u_slice=slice(n, n + m),
                           mu_of=lambda x: jac @ x[:n] + mu_drift,
                           delta_of=lambda x: 0.0, u_hold=u_hold, state=state)


def _finish_qp_step(model, data, clf, sol, u_slice, mu_of, delta_of, u_hold, state):
    if sol.status is QpStatus.INFEASIBLE:
        u = u_hold if u_hold is not None else np.zeros(model.m)
        u = _clamp(u, model)
        qdd = solve_inertia(data.terms.M, model.B @ u - data.terms.h)
        mu = data.ts.J @ qdd + data.ts.dJ @ state.dq - data.ddy_ref
        delta = np.nan
    else:
        u = _clamp(sol.x_star[u_slice], model)
        mu = np.asarray(mu_of(sol.x_star), dtype=float)
        delta = float(delta_of(sol.x_star))
    v, vdot = _certificate_values(clf, data.err, mu)
    log = ControlStepLog(u=u, mu=mu, delta=delta, V=v, Vdot=vdot,
                         qp_status=sol.status.value, solve_time=sol.solve_time,
                         saturated=_saturation_mask(u, model))
    return u, log, sol


def _certificate_values(clf, err, mu):
    if clf is None:
        return np.nan, np.nan
    a0, a1 = vdot_coeffs(clf, err)
    return clf_value(clf, err), a0 + float(a1 @ mu)


def impedance_step(model: RobotModel, state: RobotState, ref: Reference, gains,
                   clf: ClfData | None = None) -> tuple[np.ndarray, ControlStepLog]:
    """Operational-space impedance law with full potential cancellation.

    Computes the task wrench f = Lambda ydd_des + h_task from PD error
    dynamics (kd = 2 sqrt(kp)), then clamps u = B^+ (J'f + D qd + K q + g)
    to the input box.
    """
    data = _evaluate_step(model, state, ref)
    u_cmd = _impedance_torque(model, state, data, gains, uic=False)
    return _finish_closed_form(model, state, data, clf, u_cmd)


def uic_step(model: RobotModel, state: RobotState, ref: Reference, gains,
             clf: ClfData | None = None) -> tuple[np.ndarray, ControlStepLog]:
    """Impedance law with unactuated torque components removed through the
    null-space correction tau_null = -[(I - Ip) N]^+ (I - Ip) J'f."""
    data = _evaluate_step(model, state, ref)
    u_cmd = _impedance_torque(model, state, data, gains, uic=True)
    return _finish_closed_form(model, state, data, clf, u_cmd)


def _impedance_torque(model, state, data, gains, uic: bool) -> np.ndarray:
    jac, djac = data.ts.J, data.ts.dJ
    terms = data.terms
    minv_jt = solve_inertia(terms.M, jac.T)
    lam_inv = jac @ minv_jt
    lam = np.linalg.inv(lam_inv + LAMBDA_REG * np.eye(model.task_dim))

    ydd_des = data.ddy_ref - gains.kd * data.err.de - gains.kp * data.err.e
    h_task = pinv(jac).T @ terms.c_vec - lam @ (djac @ state.dq)
    wrench = lam @ ydd_des + h_task

    tau_task = jac.T @ wrench
    if uic:
        # projector onto the actuated torque subspace range(B)
        i_p = model.B @ pinv(model.B)
        nproj = data.ts.N
        blocked = (np.eye(model.n) - i_p)
        tau_null = -pinv(blocked @ nproj) @ (blocked @ tau_task)
        tau_task = tau_task + nproj @ tau_null
    tau = tau_task + terms.d_vec + terms.k_vec + terms.g_vec
    return pinv(model.B) @ tau


def _finish_closed_form(model, state, data, clf, u_cmd):
    u = _clamp(u_cmd, model)
    qdd = solve_inertia(data.terms.M, model.B @ u - data.terms.h)
    mu = data.ts.J @ qdd + data.ts.dJ @ state.dq - data.ddy_ref
    v, vdot = _certificate_values(clf, data.err, mu)
    log = ControlStepLog(u=u, mu=mu, delta=0.0, V=v, Vdot=vdot,
                         qp_status="ClosedForm", solve_time=0.0,
                         saturated=_saturation_mask(u, model))
    return u, log


class _ControllerBase:
    """Owns hold/warm-start state for one simulation thread."""

    name = ""
    uses_qp = False

    def __init__(self, model: RobotModel, gains):
        self.model = model
        self.gains = gains
        self.clf = default_clf(gains.eps, model.task_dim)
        self.reset()

    def reset(self):
        self._warm = None
        self._u_hold = _clamp(np.zeros(self.model.m), self.model)

    def step(self, state: RobotState, ref: Reference) -> tuple[np.ndarray, ControlStepLog]:
        raise NotImplementedError


class ClfQpController(_ControllerBase):
    name = "clf-qp"
    uses_qp = True

    def step(self, state, ref):
        u, log, sol = clf_qp_step(self.model, state, ref, self.gains, self.clf,
                                  warm_start=self._warm, u_hold=self._u_hold)
        self._warm = sol.active_set or self._warm
        self._u_hold = u
        return u, log


class SoftIdClfQpController(_ControllerBase):
    name = "soft-id-clf-qp"
    uses_qp = True

    def __init__(self, model, gains):
        self.split = collocated_split(model.B)
        super().__init__(model, gains)

    def step(self, state, ref):
        u, log, sol = soft_id_clf_qp_step(self.model, state, ref, self.gains,
                                          self.clf, self.split,
                                          warm_start=self._warm, u_hold=self._u_hold)
        self._warm = sol.active_set or self._warm
        self._u_hold = u
        return u, log


class IcQpController(_ControllerBase):
    name = "ic-qp"
    uses_qp = True

    def __init__(self, model, gains):
        self.split = collocated_split(model.B)
        super().__init__(model, gains)

    def step(self, state, ref):
        u, log, sol = ic_qp_step(self.model, state, ref, self.gains, self.split,
                                 warm_start=self._warm, u_hold=self._u_hold,
                                 clf=self.clf)
        self._warm = sol.active_set or self._warm
        self._u_hold = u
        return u, log


class ImpedanceController(_ControllerBase):
    name = "ic"

    def step(self, state, ref):
        return impedance_step(self.model, state, ref, self.gains, clf=self.clf)


class UnderactuatedImpedanceController(_ControllerBase):
    name = "uic"

    def step(self, state, ref):
        return uic_step(self.model, state, ref, self.gains, clf=self.clf)


CONTROLLER_CLASSES = {
    "clf-qp": ClfQpController,
    "soft-id-clf-qp": SoftIdClfQpController,
    "ic": ImpedanceController,
    "uic": UnderactuatedImpedanceController,
    "ic-qp": IcQpController,
}


def make_controller(name: str, model: RobotModel, gains) -> _ControllerBase:
    try:
        cls = CONTROLLER_CLASSES[name]
    except KeyError:
        raise KeyError(f"unknown controller {name!r}; choose from {CONTROLLER_NAMES}")
    return cls(model, gains)
