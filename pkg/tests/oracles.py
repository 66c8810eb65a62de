"""Independent reference implementations used only to check the library.

Everything here is deliberately brute force (enumeration, finite
differences, textbook closed forms) and shares no code with the package.
"""

import itertools

import numpy as np


def svd_pinv(a, tol=1e-8):
    """Pseudoinverse assembled term by term from the SVD."""
    a = np.asarray(a, dtype=float)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = tol * (s[0] if s.size else 0.0)
    out = np.zeros((a.shape[1], a.shape[0]))
    for i, sv in enumerate(s):
        if sv > cutoff:
            out += np.outer(vt[i], u[:, i]) / sv
    return out


def penrose_defect(a, a_pinv):
    """Largest violation of the four Penrose identities."""
    a = np.asarray(a, dtype=float)
    return max(
        np.max(np.abs(a @ a_pinv @ a - a), initial=0.0),
        np.max(np.abs(a_pinv @ a @ a_pinv - a_pinv), initial=0.0),
        np.max(np.abs((a @ a_pinv).T - a @ a_pinv), initial=0.0),
        np.max(np.abs((a_pinv @ a).T - a_pinv @ a), initial=0.0),
    )


def brute_force_qp(H, f, A_eq=None, b_eq=None, A_in=None, b_in=None,
                   lb=None, ub=None, feas_tol=1e-8):
    """Globally solve a small convex QP by enumerating active sets.

    Bounds are folded into inequality rows. Every subset of inequality rows
    is treated as active, the resulting KKT system is solved, and the best
    feasible candidate with nonnegative multipliers wins. Returns None if no
    candidate is feasible (infeasible problem, as far as enumeration can
    tell).
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float).ravel()
    d = f.size
    A_eq = np.zeros((0, d)) if A_eq is None else np.atleast_2d(A_eq)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    rows = [np.zeros((0, d))] if A_in is None else [np.atleast_2d(A_in)]
    rhs = [np.zeros(0)] if b_in is None else [np.asarray(b_in, dtype=float).ravel()]
    eye = np.eye(d)
    if lb is not None:
        lo = np.isfinite(lb)
        rows.append(-eye[lo])
        rhs.append(-np.asarray(lb, dtype=float)[lo])
    if ub is not None:
        hi = np.isfinite(ub)
        rows.append(eye[hi])
        rhs.append(np.asarray(ub, dtype=float)[hi])
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    r = G.shape[0]
    # More than d - p independent active rows is impossible; dependent
    # supersets only reproduce solutions already found at smaller sets.
    max_active = min(r, d - A_eq.shape[0])

    best_x, best_obj = None, np.inf
    for k in range(max_active + 1):
        for active in itertools.combinations(range(r), k):
            A = np.vstack([A_eq, G[list(active)]])
            b = np.concatenate([b_eq, h[list(active)]])
            m = A.shape[0]
            kkt = np.block([[H, A.T], [A, np.zeros((m, m))]])
            rhs_v = np.concatenate([-f, b])
            try:
                sol = np.linalg.solve(kkt, rhs_v)
            except np.linalg.LinAlgError:
                continue
            x = sol[:d]
            lam_in = sol[d + A_eq.shape[0]:]
            if np.any(lam_in < -1e-9):
                continue
            if A_eq.shape[0] and np.max(np.abs(A_eq @ x - b_eq)) > feas_tol:
                continue
            if r and np.max(G @ x - h) > feas_tol:
                continue
            obj = 0.5 * x @ H @ x + f @ x
            if obj < best_obj - 1e-12:
                best_obj, best_x = obj, x
    return best_x


def fd_gradient(func, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = h
        g[i] = (func(x + dx) - func(x - dx)) / (2.0 * h)
    return g


def fd_jacobian(func, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = h
        jac[:, i] = (np.asarray(func(x + dx)) - np.asarray(func(x - dx))) / (2.0 * h)
    return jac


def two_link_mass_matrix(m1, m2, l1, l2, lc1, lc2, i1, i2, q2):
    """Closed-form inertia matrix of a planar two-link arm (textbook form).

    Angles are relative; lc are joint-to-COM distances along each link and
    i1/i2 are rotational inertias about the COMs.
    """
    a = i1 + i2 + m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2)
    b = m2 * l1 * lc2
    c = i2 + m2 * lc2 ** 2
    return np.array([
        [a + 2.0 * b * np.cos(q2), c + b * np.cos(q2)],
        [c + b * np.cos(q2), c],
    ])


def christoffel_coriolis(mass_fn, q, dq, h=1e-6):
    """Coriolis matrix from Christoffel symbols of a finite-differenced M."""
    n = q.size
    dM = np.zeros((n, n, n))
    for k in range(n):
        dqk = np.zeros(n)
        dqk[k] = h
        dM[:, :, k] = (mass_fn(q + dqk) - mass_fn(q - dqk)) / (2.0 * h)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                C[i, j] += 0.5 * (dM[i, j, k] + dM[i, k, j] - dM[k, j, i]) * dq[k]
    return C
