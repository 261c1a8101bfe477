"""Slow-but-sure reference optimizers used to cross-check the fast paths.

Nothing here shares code with :mod:`peergrid.qp`: the point is to have an
independent route to the same numbers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["projected_gradient_box_qp", "batch_projected_gradient_box_qp"]


def projected_gradient_box_qp(Q, q, lo, hi, x0=None, tol=1e-10, max_iter=500_000):
    """Minimize ``0.5 x'Qx + q'x`` over a box by plain projected gradient.

    Uses the fixed step 1/lambda_max(Q).  Converges linearly for positive
    definite Q; intended as an oracle, so it favors simplicity over speed.
    Returns (x, objective, iterations).
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = q.shape[0]
    lam_max = float(np.linalg.eigvalsh(Q)[-1]) if n else 1.0
    step = 1.0 / max(lam_max, 1e-12)
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    for k in range(1, max_iter + 1):
        x_new = np.clip(x - step * (Q @ x + q), lo, hi)
        if np.max(np.abs(x_new - x)) <= tol:
            x = x_new
            break
        x = x_new
    obj = float(0.5 * x @ Q @ x + q @ x)
    return x, obj, k


def batch_projected_gradient_box_qp(Qs, qs, los, his, tol=1e-11, max_iter=400_000):
    """Vectorized projected gradient over a stack of box QPs.

    ``Qs`` is (B, n, n); the remaining arguments are (B, n).  All instances
    advance in lock step with per-instance steps 1/lambda_max; iteration
    stops once every instance's update is below ``tol``.  Returns
    (xs, objectives).
    """
    Qs = np.asarray(Qs, dtype=float)
    qs = np.asarray(qs, dtype=float)
    los = np.asarray(los, dtype=float)
    his = np.asarray(his, dtype=float)
    lam_max = np.linalg.eigvalsh(Qs)[:, -1]
    steps = (1.0 / np.maximum(lam_max, 1e-12))[:, None]
    xs = np.clip(np.zeros_like(qs), los, his)
    for _ in range(max_iter):
        grad = np.einsum("bij,bj->bi", Qs, xs) + qs
        xs_new = np.clip(xs - steps * grad, los, his)
        delta = np.max(np.abs(xs_new - xs))
        xs = xs_new
        if delta <= tol:
            break
    objs = 0.5 * np.einsum("bi,bij,bj->b", xs, Qs, xs) + np.einsum("bi,bi->b", qs, xs)
    return xs, objs
