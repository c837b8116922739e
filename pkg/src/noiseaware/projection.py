"""Projection of raw error-probability estimates onto the probability simplex.

The feasible set is ``{p >= 0, sum(p) <= 1}`` (identity probability
omitted). Distances are Mahalanobis, ``(p - p_hat)^T Q (p - p_hat)``, solved
with a primal active-set method; a Euclidean projection is the fallback when
``Q`` is unusable or the solver fails its optimality check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KKT_TOL = 1e-9


@dataclass(frozen=True)
class ProjectionResult:
    p: np.ndarray
    kkt_residual: float
    iterations: int
    fallback: bool


def project_simplex_euclidean(p_hat: np.ndarray) -> np.ndarray:
    """Nearest point of ``{p >= 0, sum(p) <= 1}`` in Euclidean distance."""
    p_hat = np.asarray(p_hat, dtype=float)
    clipped = np.maximum(p_hat, 0.0)
    if clipped.sum() <= 1.0:
        return clipped
    # Projection onto the face sum(p) == 1 (sort-based simplex projection).
    u = np.sort(p_hat)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(p_hat - theta, 0.0)


def _constraints(n: int) -> tuple[np.ndarray, np.ndarray]:
    # G p >= h: p_i >= 0 and -sum(p) >= -1.
    g = np.vstack([np.eye(n), -np.ones((1, n))])
    h = np.concatenate([np.zeros(n), [-1.0]])
    return g, h


def kkt_residual(p: np.ndarray, p_hat: np.ndarray, q: np.ndarray) -> float:
    """Largest violation of the optimality conditions, relative to the problem scale.

    Multipliers are recovered by non-negative least squares on the active
    constraints, so the value is zero exactly at the optimum.
    """
    from scipy.optimize import nnls

    n = p.size
    g_mat, h = _constraints(n)
    slack = g_mat @ p - h
    scale = max(np.abs(q).max(), 1e-300)
    grad = q @ (p - p_hat) / scale
    active = np.flatnonzero(slack <= 1e-12)
    if active.size:
        mult, _ = nnls(g_mat[active].T, grad)
        stat = grad - g_mat[active].T @ mult
    else:
        stat = grad
    infeas = max(0.0, -slack.min())
    return float(max(np.abs(stat).max(initial=0.0) / max(1.0, np.abs(grad).max(initial=0.0)), infeas))


def project_simplex_mahalanobis(
    p_hat: np.ndarray, q: np.ndarray | None = None, max_iter: int = 200
) -> ProjectionResult:
    """Minimise ``(p - p_hat)^T Q (p - p_hat)`` over ``{p >= 0, sum(p) <= 1}``."""
    p_hat = np.asarray(p_hat, dtype=float)
    n = p_hat.size
    if q is None:
        q = np.eye(n)
    q = np.asarray(q, dtype=float)
    q = 0.5 * (q + q.T)
    ok = np.all(np.isfinite(q)) and np.all(np.isfinite(p_hat))
    if ok:
        scale = np.abs(np.diag(q)).max()
        ok = scale > 0
    if ok:
        q = q / scale
        try:
            np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            ok = False
    if not ok:
        p = project_simplex_euclidean(np.nan_to_num(p_hat))
        return ProjectionResult(p, kkt_residual(p, p_hat, np.eye(n)) if np.all(np.isfinite(p_hat)) else np.inf, 0, True)

    g_mat, h = _constraints(n)
    x = project_simplex_euclidean(p_hat)
    work = [i for i in range(n + 1) if abs(g_mat[i] @ x - h[i]) <= 1e-15]
    if len(work) > n:
        work = work[:n]
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        grad = q @ (x - p_hat)
        a = g_mat[work]
        m = len(work)
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = q
        kkt[:n, n:] = -a.T
        kkt[n:, :n] = -a
        rhs = np.concatenate([-grad, np.zeros(m)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        d = sol[:n]
        if np.abs(d).max(initial=0.0) <= 1e-14 * max(1.0, np.abs(x).max()):
            # Multipliers of Q(x - p_hat) = A^T mu.
            mu = np.linalg.lstsq(a.T, grad, rcond=None)[0] if m else np.zeros(0)
            if m == 0 or mu.min() >= -1e-14:
                converged = True
                break
            work.pop(int(np.argmin(mu)))
            continue
        alpha, block = 1.0, None
        for i in range(n + 1):
            if i in work:
                continue
            gd = g_mat[i] @ d
            if gd < 0:
                step = (h[i] - g_mat[i] @ x) / gd
                if step < alpha:
                    alpha, block = max(step, 0.0), i
        x = x + alpha * d
        if block is not None:
            work.append(block)
    # Snap tiny negative round-off onto the boundary.
    x = np.maximum(x, 0.0)
    if x.sum() > 1:
        x = x / x.sum()
    res = kkt_residual(x, p_hat, q)
    if not converged or res > KKT_TOL:
        p = project_simplex_euclidean(p_hat)
        return ProjectionResult(p, kkt_residual(p, p_hat, q), it, True)
    return ProjectionResult(x, res, it, False)
