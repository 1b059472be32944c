"""
Dense convex QP solver (Goldfarb-Idnani dual active-set method)

    min  0.5 z'Hz + g'z
    s.t. A_eq z  = b_eq
         A_in z >= b_in

Starts from the unconstrained minimizer and adds violated constraints one at
a time while keeping the multipliers dual feasible. Infeasibility is declared
only when the dual step is unbounded, which is a certificate.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from exceptions import QPInfeasibleError

logger = logging.getLogger(__name__)

SOLVED = 'solved'
INFEASIBLE = 'infeasible'
MAX_ITER = 'max-iter'


@dataclass
class QPResult:
    """Primal/dual solution; y_in >= 0 are the inequality multipliers"""
    z: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    status: str
    iterations: int
    objective: float
    active: List[int] = field(default_factory=list)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED

    def raise_for_status(self):
        """Raise QPInfeasibleError unless the QP was solved"""
        if not self.solved:
            raise QPInfeasibleError(f"QP not solved: {self.status} after {self.iterations} iterations")
        return self


class _ActiveFactor:
    """J, R with J J' = H^-1 and J1' N = R for the active normals N"""

    def __init__(self, L_inv: np.ndarray):
        self.L_inv = L_inv
        self.n = L_inv.shape[0]
        self._key = None
        self.J = L_inv.T
        self.R = np.zeros((0, 0))

    def update(self, normals: np.ndarray, key: tuple):
        if key == self._key:
            return
        self._key = key
        q = normals.shape[1]
        if q == 0:
            self.J = self.L_inv.T
            self.R = np.zeros((0, 0))
            return
        B = self.L_inv @ normals
        Qf, Rf = np.linalg.qr(B, mode='complete')
        self.J = self.L_inv.T @ Qf
        self.R = Rf[:q, :q]


def _regularized_cholesky(H: np.ndarray, reg: float):
    n = H.shape[0]
    shift = 0.0
    for _ in range(12):
        try:
            L = linalg.cholesky(H + shift * np.eye(n), lower=True)
            if shift > 0:
                logger.debug("QP Hessian regularized with %.1e", shift)
            return L
        except linalg.LinAlgError:
            shift = reg if shift == 0.0 else shift * 10.0
    raise linalg.LinAlgError("QP Hessian is not positive definite even after regularization")


def solve_qp(H, g, A_eq=None, b_eq=None, A_in=None, b_in=None,
             initial_active: Optional[Sequence[int]] = None,
             tol: float = 1e-10, reg: float = 1e-8, max_iter: Optional[int] = None) -> QPResult:
    """
    Solve a strictly convex QP

    Args:
        H: (n, n) symmetric positive (semi)definite Hessian
        g: (n,) linear term
        A_eq, b_eq: equality rows
        A_in, b_in: inequality rows, A_in z >= b_in
        initial_active: inequality indices to start from as active when their
            multipliers come out nonnegative (warm start)
        tol: feasibility tolerance (scaled by row norm)
        reg: diagonal regularization used when H is only semidefinite
        max_iter: cap on active-set changes

    Returns:
        QPResult with status 'solved', 'infeasible' or 'max-iter'
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    A_in = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, dtype=float))
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float).reshape(-1)
    m_eq = A_eq.shape[0]
    m_in = A_in.shape[0]
    if max_iter is None:
        max_iter = 10 * (n + m_eq + m_in) + 50

    L = _regularized_cholesky(0.5 * (H + H.T), reg)
    L_inv = linalg.solve_triangular(L, np.eye(n), lower=True)
    H_inv_g = L_inv.T @ (L_inv @ g)
    h_inv_scale = float(np.max(np.sum(L_inv * L_inv, axis=0), initial=1.0))

    # all constraint normals as columns, equalities first
    C = np.vstack([A_eq, A_in]).T if (m_eq + m_in) else np.zeros((n, 0))
    b = np.concatenate([b_eq, b_in])
    row_norm = np.linalg.norm(C, axis=0) if C.size else np.zeros(0)
    row_norm[row_norm == 0] = 1.0
    sign = np.ones(m_eq + m_in)

    factor = _ActiveFactor(L_inv)
    active: List[int] = []
    u = np.zeros(0)
    z = -H_inv_g
    iterations = 0

    def normals():
        return C[:, active] * sign[active]

    def slack(i):
        return sign[i] * (C[:, i] @ z - b[i])

    if initial_active:
        start = [m_eq + int(i) for i in initial_active]
        N = C[:, start]
        factor.update(N, tuple(start))
        R = factor.R
        rhs = b[start] + N.T @ H_inv_g
        try:
            u0 = linalg.solve_triangular(R, linalg.solve_triangular(R, rhs, trans='T'))
        except (linalg.LinAlgError, ValueError):
            u0 = np.full(len(start), np.nan)
        if np.all(u0 >= -tol):
            active = list(start)
            u = np.maximum(u0, 0.0)
            z = L_inv.T @ (L_inv @ (N @ u)) - H_inv_g
        else:
            factor.update(np.zeros((n, 0)), ())

    def add_constraint(p) -> Optional[str]:
        """Run the primal/dual step loop until p enters the active set"""
        nonlocal z, u, active, iterations
        u_new = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                return MAX_ITER
            factor.update(normals(), tuple(active) + tuple(sign[active]))
            n_p = sign[p] * C[:, p]
            q = len(active)
            d = factor.J.T @ n_p
            step_z = factor.J[:, q:] @ d[q:]
            r = linalg.solve_triangular(factor.R, d[:q]) if q else np.zeros(0)

            # partial (dual) step limit over active inequalities
            t1, drop = np.inf, None
            for k, idx in enumerate(active):
                if idx >= m_eq and r[k] > tol:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1, drop = ratio, k

            zn = float(step_z @ n_p)
            s_p = slack(p)
            if zn <= 1e-12 * h_inv_scale * float(n_p @ n_p):
                t2 = np.inf
            else:
                t2 = -s_p / zn

            if not np.isfinite(t1) and not np.isfinite(t2):
                if p < m_eq and abs(s_p) <= tol * row_norm[p] * (1.0 + abs(b[p])):
                    return 'redundant'
                return INFEASIBLE

            if not np.isfinite(t2):
                u = u - t1 * r
                u_new += t1
                del active[drop]
                u = np.delete(u, drop)
                continue

            t = min(t1, t2)
            z = z + t * step_z
            u = u - t * r
            u_new += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_new)
                return None
            del active[drop]
            u = np.delete(u, drop)

    status = SOLVED
    for p in range(m_eq):
        if slack(p) > 0:
            sign[p] = -1.0
        outcome = add_constraint(p)
        if outcome == 'redundant':
            continue
        if outcome is not None:
            status = outcome
            break

    while status == SOLVED:
        if m_in == 0:
            break
        s_in = sign[m_eq:] * (A_in @ z - b_in) / row_norm[m_eq:]
        if active:
            s_in[[i - m_eq for i in active if i >= m_eq]] = np.inf
        worst = int(np.argmin(s_in))
        if s_in[worst] >= -tol * (1.0 + abs(b_in[worst]) / row_norm[m_eq + worst]):
            break
        outcome = add_constraint(m_eq + worst)
        if outcome is not None:
            status = outcome if outcome != 'redundant' else INFEASIBLE

    y = np.zeros(m_eq + m_in)
    for k, idx in enumerate(active):
        y[idx] = sign[idx] * u[k]
    objective = float(0.5 * z @ H @ z + g @ z)
    if status != SOLVED:
        logger.debug("QP finished with status %s after %d iterations", status, iterations)
    return QPResult(
        z=z, y_eq=y[:m_eq], y_in=y[m_eq:], status=status, iterations=iterations,
        objective=objective, active=[i - m_eq for i in active if i >= m_eq],
    )


def kkt_residuals(result: QPResult, H, g, A_eq=None, b_eq=None, A_in=None, b_in=None) -> dict:
    """Stationarity, primal feasibility and complementarity of a QP result"""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    A_in = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, dtype=float))
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float).reshape(-1)
    z = result.z

    grad = H @ z + g - A_eq.T @ result.y_eq - A_in.T @ result.y_in
    eq_res = A_eq @ z - b_eq
    in_res = A_in @ z - b_in
    return {
        'stationarity': float(np.max(np.abs(grad), initial=0.0)),
        'primal': float(max(np.max(np.abs(eq_res), initial=0.0), np.max(-in_res, initial=0.0))),
        'dual': float(np.max(-result.y_in, initial=0.0)),
        'complementarity': float(np.max(np.abs(result.y_in * in_res), initial=0.0)),
    }
