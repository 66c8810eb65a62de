"""Dense convex quadratic programming.

Solves
    min  1/2 x'Hx + f'x
    s.t. A_eq x = b_eq
         A_in x <= b_in
         lb <= x <= ub

with a dual active-set iteration (Goldfarb-Idnani style) after eliminating
the equality constraints. Problems here are small (tens of variables, one
solve per control step), so every working-set change re-solves a dense KKT
system instead of updating factorizations. The working set of the previous
solve can be passed back in as a warm start.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

FEAS_TOL = 1e-8          # absolute slack threshold for "satisfied"
DUAL_TOL = 1e-10         # multiplier nonnegativity slack
ZERO_DIR_TOL = 1e-11     # primal step directions below this are "no motion"
EQ_RANK_TOL = 1e-12      # relative singular-value cutoff for A_eq


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class QpProblem:
    """Standard-form dense convex QP.

    H must be symmetric positive semidefinite; lb/ub entries may be +-inf.
    Missing constraint blocks may be passed as None.
    """

    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        d = self.f.shape[0]
        if self.H.shape != (d, d):
            raise ValueError(f"H must be {d}x{d}, got {self.H.shape}")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, d))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is None:
            self.A_in = np.zeros((0, d))
            self.b_in = np.zeros(0)
        else:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        self.lb = np.full(d, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(d, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        self.validate()

    @property
    def dim(self) -> int:
        return self.f.shape[0]

    def validate(self):
        for name in ("H", "f", "A_eq", "b_eq", "A_in", "b_in"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        scale = max(1.0, float(np.max(np.abs(self.H))))
        if np.max(np.abs(self.H - self.H.T)) > 1e-12 * scale:
            raise ValueError("H must be symmetric (1e-12 relative)")
        w = np.linalg.eigvalsh(0.5 * (self.H + self.H.T))
        if w[0] < -1e-10 * scale:
            raise ValueError(f"H must be positive semidefinite (min eig {w[0]:.3e})")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)


@dataclass
class QpSolution:
    x_star: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int
    solve_time: float
    objective: float = np.nan
    # Indices into the stacked inequality list (A_in rows, then lb rows,
    # then ub rows) that were active at the solution; reusable as warm start.
    active_set: tuple = field(default_factory=tuple)


def _stack_inequalities(prob: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Fold bound constraints into the inequality block.

    Row order is stable: user rows, then finite lower bounds (as -x <= -lb),
    then finite upper bounds. Warm-start indices refer to this order.
    """
    d = prob.dim
    rows = [prob.A_in]
    rhs = [prob.b_in]
    eye = np.eye(d)
    lo = np.isfinite(prob.lb)
    hi = np.isfinite(prob.ub)
    rows.append(-eye[lo])
    rhs.append(-prob.lb[lo])
    rows.append(eye[hi])
    rhs.append(prob.ub[hi])
    return np.vstack(rows), np.concatenate(rhs)


def _eliminate_equalities(prob: QpProblem):
    """Return (x_p, Z, consistent) with x = x_p + Z z spanning A_eq x = b_eq."""
    d = prob.dim
    if prob.A_eq.shape[0] == 0:
        return np.zeros(d), np.eye(d), True
    u, s, vt = np.linalg.svd(prob.A_eq, full_matrices=True)
    rank = int(np.sum(s > EQ_RANK_TOL * max(s[0], 1.0))) if s.size else 0
    x_p = vt[:rank].T @ ((u[:, :rank].T @ prob.b_eq) / s[:rank])
    z_basis = vt[rank:].T
    resid = np.max(np.abs(prob.A_eq @ x_p - prob.b_eq)) if prob.b_eq.size else 0.0
    consistent = resid <= FEAS_TOL * (1.0 + np.max(np.abs(prob.b_eq), initial=0.0))
    return x_p, z_basis, consistent


def _chol_with_ridge(h: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of h, adding a tiny ridge if h is only semidefinite.

    The ridge is a numerical device; optimality is certified afterwards by
    the KKT residual of the original problem.
    """
    scale = max(1.0, float(np.max(np.abs(h))))
    ridge = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(h + ridge * np.eye(h.shape[0])), ridge
        except np.linalg.LinAlgError:
            ridge = max(ridge * 100.0, 1e-12 * scale)
    raise np.linalg.LinAlgError("reduced Hessian is not positive semidefinite")


class _WorkingSet:
    """Dual active-set state in the reduced (equality-free) space."""

    def __init__(self, h, f, g_rows, h_rhs):
        self.h = h
        self.f = f
        self.g = g_rows
        self.rhs = h_rhs
        self.idx: list[int] = []
        self.lam: list[float] = []
        chol, _ = _chol_with_ridge(h)
        self._chol = chol
        self.z = self._solve_h(-f)

    def _solve_h(self, b):
        y = np.linalg.solve(self._chol, b)
        return np.linalg.solve(self._chol.T, y)

    def solve_eqp(self):
        """Minimize over the current working set treated as equalities."""
        if not self.idx:
            self.z = self._solve_h(-self.f)
            self.lam = []
            return
        gw = self.g[self.idx]
        k = len(self.idx)
        kkt = np.block([[self.h, gw.T], [gw, np.zeros((k, k))]])
        rhs = np.concatenate([-self.f, self.rhs[self.idx]])
        sol = np.linalg.solve(kkt, rhs)
        self.z = sol[: self.h.shape[0]]
        self.lam = list(sol[self.h.shape[0]:])

    def step_directions(self, n_p):
        """Directions (dz, r) for increasing the multiplier of normal n_p."""
        if not self.idx:
            return self._solve_h(n_p), np.zeros(0)
        gw = self.g[self.idx]
        k = len(self.idx)
        kkt = np.block([[self.h, gw.T], [gw, np.zeros((k, k))]])
        rhs = np.concatenate([n_p, np.zeros(k)])
        sol = np.linalg.solve(kkt, rhs)
        return sol[: self.h.shape[0]], sol[self.h.shape[0]:]

    def drop(self, local_k: int):
        del self.idx[local_k]
        del self.lam[local_k]

    def add(self, p: int, lam_p: float):
        self.idx.append(p)
        self.lam.append(lam_p)


def solve_qp(prob: QpProblem, warm_start: tuple | None = None,
             max_iter: int | None = None) -> QpSolution:
    """Solve a dense convex QP.

    warm_start is the active_set of a previous, structurally identical
    solve; it seeds the working set and typically cuts the iteration count
    to a handful on consecutive control steps.
    """
    t0 = time.perf_counter()
    d = prob.dim
    g_all, h_all = _stack_inequalities(prob)
    x_p, z_basis, consistent = _eliminate_equalities(prob)

    def finish(x, status, iters):
        lam_full = np.zeros(g_all.shape[0])
        active = ()
        if status is not QpStatus.INFEASIBLE and ws is not None:
            for local, p in enumerate(ws.idx):
                lam_full[p] = ws.lam[local]
            active = tuple(sorted(ws.idx))
        resid = _kkt_residual(prob, g_all, h_all, x, lam_full)
        return QpSolution(
            x_star=x, status=status, kkt_residual=resid, iterations=iters,
            solve_time=time.perf_counter() - t0, objective=prob.objective(x),
            active_set=active)

    ws = None
    if not consistent:
        return finish(x_p, QpStatus.INFEASIBLE, 0)

    n_free = z_basis.shape[1]
    g_red = g_all @ z_basis
    h_red = h_all - g_all @ x_p
    if n_free == 0:
        # Equalities pin x completely; only feasibility remains to check.
        x = x_p
        viol = g_all @ x - h_all
        status = QpStatus.OPTIMAL if (viol.size == 0 or np.max(viol) <= FEAS_TOL) else QpStatus.INFEASIBLE
        return finish(x, status, 0)

    h_z = z_basis.T @ prob.H @ z_basis
    h_z = 0.5 * (h_z + h_z.T)
    f_z = z_basis.T @ (prob.H @ x_p + prob.f)
    ws = _WorkingSet(h_z, f_z, g_red, h_red)

    if warm_start:
        _seed_working_set(ws, warm_start)

    if max_iter is None:
        max_iter = 50 + 10 * g_all.shape[0]

    iters = 0
    while iters < max_iter:
        iters += 1
        slack = ws.g @ ws.z - ws.rhs
        if slack.size:
            slack[ws.idx] = -np.inf  # working-set rows are tight by construction
        p = int(np.argmax(slack)) if slack.size else -1
        if p < 0 or slack[p] <= FEAS_TOL:
            return finish(x_p + z_basis @ ws.z, QpStatus.OPTIMAL, iters)

        n_p = ws.g[p]
        s_p = slack[p]
        lam_p = 0.0
        while True:
            dz, r = ws.step_directions(n_p)
            curvature = float(n_p @ dz)
            moving = curvature > ZERO_DIR_TOL * (1.0 + float(np.abs(n_p) @ np.abs(dz)))

            t1 = np.inf
            block = -1
            for local, rate in enumerate(r):
                if rate > DUAL_TOL:
                    cand = ws.lam[local] / rate
                    if cand < t1:
                        t1, block = cand, local
            if not moving:
                if not np.isfinite(t1):
                    return finish(x_p + z_basis @ ws.z, QpStatus.INFEASIBLE, iters)
                for local, rate in enumerate(r):
                    ws.lam[local] -= t1 * rate
                lam_p += t1
                ws.drop(block)
                continue

            t2 = s_p / curvature
            t = min(t1, t2)
            ws.z = ws.z - t * dz
            for local, rate in enumerate(r):
                ws.lam[local] -= t * rate
            lam_p += t
            s_p -= t * curvature
            if t2 <= t1:
                ws.add(p, lam_p)
                break
            ws.drop(block)

    return finish(x_p + z_basis @ ws.z, QpStatus.MAX_ITER, iters)


def _seed_working_set(ws: _WorkingSet, warm_start):
    """Install a previous active set, keeping rows independent and
    multipliers nonnegative so the dual iteration invariant holds."""
    candidates = [p for p in warm_start if 0 <= p < ws.g.shape[0]]
    rows = []
    for p in candidates:
        trial = rows + [p]
        if np.linalg.matrix_rank(ws.g[trial], tol=1e-10) == len(trial):
            rows = trial
    ws.idx = rows
    ws.lam = [0.0] * len(rows)
    while True:
        try:
            ws.solve_eqp()
        except np.linalg.LinAlgError:
            ws.idx, ws.lam = [], []
            ws.solve_eqp()
            return
        if not ws.lam:
            return
        worst = int(np.argmin(ws.lam))
        if ws.lam[worst] >= -DUAL_TOL:
            return
        ws.drop(worst)


def _kkt_residual(prob: QpProblem, g_all, h_all, x, lam) -> float:
    """Max-norm KKT residual of the original problem at (x, lam)."""
    grad = prob.H @ x + prob.f + g_all.T @ lam
    if prob.A_eq.shape[0]:
        nu, *_ = np.linalg.lstsq(prob.A_eq.T, -grad, rcond=None)
        grad = grad + prob.A_eq.T @ nu
        eq_viol = np.max(np.abs(prob.A_eq @ x - prob.b_eq))
    else:
        eq_viol = 0.0
    slack = g_all @ x - h_all if h_all.size else np.zeros(0)
    in_viol = float(np.max(slack, initial=0.0))
    comp = float(np.max(np.abs(lam * slack), initial=0.0)) if slack.size else 0.0
    dual_viol = float(np.max(-lam, initial=0.0))
    return max(float(np.max(np.abs(grad))), eq_viol, max(0.0, in_viol), comp, dual_viol)
