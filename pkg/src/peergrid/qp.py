"""Dense convex quadratic programming by operator splitting.

Solves the standard form

    minimize    0.5 * x' Q x + q' x + c0
    subject to  A x = b,   lo <= G x <= hi

with an over-relaxed ADMM iteration on the stacked constraint
``l <= C x <= u`` (equalities are rows with ``l == u``), Ruiz
equilibration for conditioning, an optional active-set polish step that
sharpens the solution to near machine precision, and OSQP-style
certificates for primal infeasibility / unboundedness.

Problems here are small and dense (tens to a few hundred variables), so
the linear algebra uses one cached Cholesky factorization; re-solves with
an updated linear cost reuse the factor, which makes the solver cheap
inside iterative schemes that only perturb ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve
from scipy.optimize import nnls

__all__ = ["QpProblem", "QpSolution", "QpSettings", "PreparedQp", "solve"]


def _empty(n: int) -> np.ndarray:
    return np.zeros((0, n))


@dataclass
class QpProblem:
    """Standard-form convex QP with two-sided linear inequalities."""

    Q: np.ndarray
    q: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    c0: float = 0.0
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {self.Q.shape}")
        asym = np.max(np.abs(self.Q - self.Q.T)) if n else 0.0
        if asym > 1e-8 * max(1.0, np.max(np.abs(self.Q)) if n else 1.0):
            raise ValueError("Q must be symmetric")
        self.Q = 0.5 * (self.Q + self.Q.T)

        self.A = _empty(n) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree on the number of equalities")

        self.G = _empty(n) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, n)
        m = self.G.shape[0]
        self.lo = np.full(m, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.full(m, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if self.lo.shape[0] != m or self.hi.shape[0] != m:
            raise ValueError("G, lo and hi disagree on the number of inequality rows")
        if np.any(self.lo > self.hi):
            raise ValueError("inequality bounds must satisfy lo <= hi")
        if self.names is not None and len(self.names) != n:
            raise ValueError("names must have one entry per variable")

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]

    def check_psd(self, tol: float = 1e-9) -> None:
        """Reject objectives with meaningfully negative curvature."""
        if self.n_vars == 0:
            return
        lam_min = float(np.linalg.eigvalsh(self.Q)[0])
        if lam_min < -tol * max(1.0, float(np.max(np.abs(self.Q)))):
            raise ValueError(f"Q is not positive semidefinite (lambda_min={lam_min:.3e})")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.c0)

    def dump(self) -> str:
        """Self-describing text rendering for offline inspection."""
        lines = [f"# qp n_vars={self.n_vars} n_eq={self.A.shape[0]} n_ineq={self.G.shape[0]}"]
        if self.names:
            lines.append("# vars: " + " ".join(self.names))

        def block(tag, arr):
            lines.append(f"[{tag}] shape={arr.shape}")
            for row in np.atleast_2d(arr):
                lines.append(" ".join(format(v, ".12g") for v in np.atleast_1d(row)))

        for tag, arr in (("Q", self.Q), ("q", self.q), ("A", self.A), ("b", self.b),
                         ("G", self.G), ("lo", self.lo), ("hi", self.hi)):
            block(tag, arr)
        lines.append(f"[c0] {format(self.c0, '.12g')}")
        return "\n".join(lines) + "\n"


@dataclass
class QpSolution:
    """Solver output with the residuals needed for KKT verification."""

    x: np.ndarray
    objective: float
    status: str  # optimal | max-iter | infeasible | unbounded
    iterations: int
    eq_residual: float
    ineq_violation: float
    stationarity: float
    comp_slack: float
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    polished: bool = False


@dataclass
class QpSettings:
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_iter: int = 20000
    sigma: float = 1e-6
    rho: float = 0.1
    eq_rho_scale: float = 1e3
    alpha: float = 1.6
    scaling_iters: int = 10
    adaptive_rho: bool = True
    check_interval: int = 25
    polish: bool = True
    # skip the post-convergence polish (the early rescue attempts below
    # still run); lets hot loops trade exactness for per-solve latency
    final_polish: bool = True
    polish_reg: float = 1e-9
    # attempt an early active-set polish once the primal mismatch is below
    # this absolute level; succeeds often on degenerate tails where the
    # duals take thousands of iterations to settle
    polish_trigger: float = 1e-3
    polish_try_interval: int = 250
    infeas_tol: float = 1e-7
    # rho adaptation cadence: act only every adapt_interval iterations and
    # let the iteration settle after each refactorization
    adapt_interval: int = 200
    max_refactors: int = 10
    # Fallback stall detector: declare infeasibility only when the primal
    # residual is stuck far above tolerance for a very long stretch.
    stall_checks: int = 300
    stall_scale: float = 1e3


class PreparedQp:
    """A QP bound to its scaling and factorization, ready for re-solves.

    The constraint matrix is fixed at construction; ``update_linear_cost``
    swaps in a new ``q`` (and constant) without refactorizing, so iterative
    callers pay one Cholesky per problem structure.
    """

    def __init__(self, problem: QpProblem, settings: Optional[QpSettings] = None,
                 validate: bool = True):
        self.problem = problem
        self.settings = settings or QpSettings()
        if validate:
            problem.check_psd()

        self.n = problem.n_vars
        self.m_eq = problem.A.shape[0]
        self.C = np.vstack([problem.A, problem.G])
        self.l = np.concatenate([problem.b, problem.lo])
        self.u = np.concatenate([problem.b, problem.hi])
        self.m = self.C.shape[0]
        self.is_eq = np.zeros(self.m, dtype=bool)
        self.is_eq[: self.m_eq] = True
        self.is_eq |= self.l == self.u

        self._equilibrate()
        self._build_rho(self.settings.rho)
        self._factor()

        self._x = np.zeros(self.n)
        self._z = np.zeros(self.m)
        self._y = np.zeros(self.m)

    # -- scaling ---------------------------------------------------------

    def _equilibrate(self):
        n, m = self.n, self.m
        D = np.ones(n)
        E = np.ones(m)
        Qs = self.problem.Q.copy()
        Cs = self.C.copy()
        for _ in range(self.settings.scaling_iters):
            col = np.maximum(
                np.max(np.abs(Qs), axis=0, initial=0.0),
                np.max(np.abs(Cs), axis=0, initial=0.0),
            )
            d = 1.0 / np.sqrt(np.where(col > 1e-12, col, 1.0))
            row = np.max(np.abs(Cs), axis=1, initial=0.0) if m else np.zeros(0)
            e = 1.0 / np.sqrt(np.where(row > 1e-12, row, 1.0))
            Qs = (d[:, None] * Qs) * d[None, :]
            Cs = (e[:, None] * Cs) * d[None, :]
            D *= d
            E *= e

        qs = D * self.problem.q
        col_norms = np.max(np.abs(Qs), axis=0, initial=0.0) if n else np.zeros(0)
        denom = max(float(np.mean(col_norms)) if n else 0.0,
                    float(np.max(np.abs(qs))) if n else 0.0)
        cost = 1.0 / denom if denom > 1e-12 else 1.0
        self.D, self.E, self.cost_scale = D, E, cost
        self.Qs = cost * Qs
        self.qs = cost * qs
        self.Cs = Cs
        self.ls = E * self.l
        self.us = E * self.u

    def update_linear_cost(self, q: np.ndarray, c0: Optional[float] = None) -> None:
        self.problem.q = np.asarray(q, dtype=float).ravel()
        if c0 is not None:
            self.problem.c0 = float(c0)
        self.qs = self.cost_scale * (self.D * self.problem.q)

    # -- factorization ---------------------------------------------------

    def _build_rho(self, base: float):
        rho = np.full(self.m, base)
        rho[self.is_eq] *= self.settings.eq_rho_scale
        self.rho_base = base
        self.rho = rho

    def _factor(self):
        K = self.Qs + self.settings.sigma * np.eye(self.n)
        if self.m:
            K = K + (self.Cs.T * self.rho) @ self.Cs
        self._chol = cho_factor(K, lower=True, check_finite=False)

    # -- residual helpers (all in unscaled space) -------------------------

    def _unscale(self, x, z, y):
        return (
            self.D * x,
            z / self.E if self.m else z,
            (self.E * y) / self.cost_scale if self.m else y,
        )

    def _residuals(self, xu, zu, yu):
        prob = self.problem
        r_stat = prob.Q @ xu + prob.q
        if self.m:
            r_stat = r_stat + self.C.T @ yu
        cx = self.C @ xu if self.m else np.zeros(0)
        r_prim = float(np.max(np.abs(cx - zu), initial=0.0))
        return r_prim, float(np.max(np.abs(r_stat), initial=0.0)), cx

    def _violations(self, xu):
        prob = self.problem
        eq = float(np.max(np.abs(prob.A @ xu - prob.b), initial=0.0)) if self.m_eq else 0.0
        if prob.G.shape[0]:
            gx = prob.G @ xu
            viol = np.maximum(prob.lo - gx, gx - prob.hi)
            ineq = float(max(0.0, np.max(viol)))
        else:
            ineq = 0.0
        return eq, ineq

    def _comp_slack(self, xu, yu) -> float:
        if not self.m:
            return 0.0
        cx = self.C @ xu
        tol = 1e-12
        upper = np.where(yu > tol, np.abs(cx - self.u), 0.0)
        lower = np.where(yu < -tol, np.abs(cx - self.l), 0.0)
        finite = np.isfinite(np.where(yu > tol, self.u, np.where(yu < -tol, self.l, 0.0)))
        return float(np.max(np.where(finite, np.maximum(upper, lower), np.inf), initial=0.0))

    # -- certificates ------------------------------------------------------

    def _primal_cert(self, dy) -> bool:
        nv = float(np.max(np.abs(dy), initial=0.0))
        if nv < 1e-12:
            return False
        v = dy / nv
        eps = self.settings.infeas_tol
        if float(np.max(np.abs(self.C.T @ v), initial=0.0)) > eps:
            return False
        pos, neg = np.maximum(v, 0.0), np.minimum(v, 0.0)
        if np.any((pos > eps) & ~np.isfinite(self.u)) or np.any((neg < -eps) & ~np.isfinite(self.l)):
            return False
        support = float(np.sum(self.u[pos > eps] * pos[pos > eps])) + float(
            np.sum(self.l[neg < -eps] * neg[neg < -eps])
        )
        return support < -eps

    def _dual_cert(self, dx) -> bool:
        nv = float(np.max(np.abs(dx), initial=0.0))
        if nv < 1e-12:
            return False
        v = dx / nv
        eps = self.settings.infeas_tol
        if float(np.max(np.abs(self.problem.Q @ v), initial=0.0)) > eps:
            return False
        if float(self.problem.q @ v) > -eps:
            return False
        if self.m:
            cv = self.C @ v
            lo_fin, hi_fin = np.isfinite(self.l), np.isfinite(self.u)
            if np.any(np.abs(cv[lo_fin & hi_fin]) > eps):
                return False
            if np.any(cv[lo_fin & ~hi_fin] < -eps) or np.any(cv[~lo_fin & hi_fin] > eps):
                return False
        return True

    # -- main loop ---------------------------------------------------------

    def solve(self, x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None) -> QpSolution:
        s = self.settings
        n, m = self.n, self.m

        if x0 is not None:
            self._x = np.asarray(x0, dtype=float) / self.D
            self._z = np.clip(self.Cs @ self._x, self.ls, self.us) if m else np.zeros(0)
        if y0 is not None:
            y0 = np.asarray(y0, dtype=float)
            self._y = self.cost_scale * (y0 / self.E) if m else np.zeros(0)

        x, z, y = self._x, self._z, self._y
        sigma, alpha = s.sigma, s.alpha
        rho = self.rho

        stall_count, stall_best = 0, np.inf
        status, iters = "max-iter", s.max_iter
        refactors, last_adapt, last_polish = 0, 0, 0
        early = None

        for k in range(1, s.max_iter + 1):
            rhs = sigma * x - self.qs
            if m:
                rhs = rhs + self.Cs.T @ (rho * z - y)
            xt = cho_solve(self._chol, rhs, check_finite=False)
            x_prev, y_prev = x, y
            x = alpha * xt + (1.0 - alpha) * x
            if m:
                zt = self.Cs @ xt
                w = alpha * zt + (1.0 - alpha) * z + y / rho
                z_new = np.clip(w, self.ls, self.us)
                y = rho * (w - z_new)
                z = z_new

            if k % s.check_interval == 0 or k == s.max_iter:
                xu, zu, yu = self._unscale(x, z, y)
                r_prim, r_dual, _ = self._residuals(xu, zu, yu)
                if r_prim <= s.tol_primal and r_dual <= s.tol_dual:
                    status, iters = "optimal", k
                    break
                if (s.polish and m
                        and r_prim <= max(s.polish_trigger, s.tol_primal)
                        and k - last_polish >= s.polish_try_interval):
                    last_polish = k
                    early = self._try_early_polish(xu, yu)
                    if early is not None:
                        status, iters = "optimal", k
                        break
                if m and self._primal_cert((self.E * (y - y_prev)) / self.cost_scale):
                    status, iters = "infeasible", k
                    break
                if self._dual_cert(self.D * (x - x_prev)):
                    status, iters = "unbounded", k
                    break
                # fallback stall detector: watches true constraint violation,
                # so slow dual tails on feasible problems do not trip it
                if m:
                    eq_v, ineq_v = self._violations(xu)
                    viol = max(eq_v, ineq_v)
                    if viol < stall_best * (1.0 - 1e-3):
                        stall_best, stall_count = viol, 0
                    else:
                        stall_count += 1
                    if stall_count >= s.stall_checks and viol > max(1.0, s.stall_scale * s.tol_primal):
                        status, iters = "infeasible", k
                        break
                if (s.adaptive_rho and m and refactors < s.max_refactors
                        and k - last_adapt >= s.adapt_interval):
                    new_base = self._adapted_rho(x, z, y)
                    if new_base > 5.0 * self.rho_base or new_base < self.rho_base / 5.0:
                        self._build_rho(new_base)
                        rho = self.rho
                        self._factor()
                        refactors += 1
                        last_adapt = k

        self._x, self._z, self._y = x, z, y
        xu, zu, yu = self._unscale(x, z, y)

        if status in ("infeasible", "unbounded"):
            eq, ineq = self._violations(xu)
            return QpSolution(
                x=xu, objective=self.problem.objective(xu), status=status, iterations=iters,
                eq_residual=eq, ineq_violation=ineq, stationarity=np.inf, comp_slack=np.inf,
                duals_eq=yu[: self.m_eq], duals_ineq=yu[self.m_eq:],
            )

        pol_flag = False
        if early is not None:
            xu, yu = early
            pol_flag = True
        elif s.polish and s.final_polish and status == "optimal":
            polished = self._polish(xu, yu)
            if polished is not None:
                xu, yu, pol_flag = polished

        r_prim, r_stat, _ = self._residuals(xu, np.clip(self.C @ xu, self.l, self.u) if m else zu, yu)
        eq, ineq = self._violations(xu)
        return QpSolution(
            x=xu, objective=self.problem.objective(xu), status=status, iterations=iters,
            eq_residual=eq, ineq_violation=ineq, stationarity=r_stat,
            comp_slack=self._comp_slack(xu, yu),
            duals_eq=yu[: self.m_eq], duals_ineq=yu[self.m_eq:], polished=pol_flag,
        )

    def _try_early_polish(self, xu, yu):
        """Accept an early polish only if it lands inside tolerances."""
        polished = self._polish(xu, yu)
        if polished is None:
            return None
        x_pol, y_pol, _ = polished
        z_pol = np.clip(self.C @ x_pol, self.l, self.u)
        r_prim, r_stat, _ = self._residuals(x_pol, z_pol, y_pol)
        if r_prim <= self.settings.tol_primal and r_stat <= self.settings.tol_dual:
            return x_pol, y_pol
        return None

    def _adapted_rho(self, x, z, y) -> float:
        cx = self.Cs @ x
        num = float(np.max(np.abs(cx - z), initial=0.0))
        num /= max(float(np.max(np.abs(cx), initial=0.0)), float(np.max(np.abs(z), initial=0.0)), 1e-10)
        stat = self.Qs @ x + self.qs + self.Cs.T @ y
        den = float(np.max(np.abs(stat), initial=0.0))
        den /= max(
            float(np.max(np.abs(self.Qs @ x), initial=0.0)),
            float(np.max(np.abs(self.qs), initial=0.0)),
            float(np.max(np.abs(self.Cs.T @ y), initial=0.0)),
            1e-10,
        )
        if den < 1e-14:
            return self.rho_base
        return float(np.clip(self.rho_base * np.sqrt(num / den), 1e-6, 1e6))

    # -- polish ------------------------------------------------------------

    def _polish(self, xu, yu):
        """Finish on the active set: a short primal active-set loop seeded
        by the splitting iterate.

        Starting from the rows the iterate pins (by dual sign or by sitting
        on a bound), each pass re-solves the equality-pinned KKT system,
        then adds the most violated loose row, resolves dual-degenerate
        sets by sign-constrained least squares, or drops the worst
        wrong-signed row.  Typically one or two passes suffice.
        """
        if not self.m:
            return None
        act_low = (yu < -1e-9) & np.isfinite(self.l) & ~self.is_eq
        act_up = (yu > 1e-9) & np.isfinite(self.u) & ~self.is_eq
        cx = self.C @ xu
        scale = np.maximum(1.0, np.maximum(np.abs(np.where(np.isfinite(self.l), self.l, 0.0)),
                                           np.abs(np.where(np.isfinite(self.u), self.u, 0.0))))
        on_low = np.isfinite(self.l) & (np.abs(cx - self.l) <= 1e-7 * scale) & ~self.is_eq
        on_up = np.isfinite(self.u) & (np.abs(cx - self.u) <= 1e-7 * scale) & ~self.is_eq
        act_low |= on_low & ~act_up
        act_up |= on_up & ~act_low

        for _ in range(40):
            out = self._polish_attempt(act_low, act_up)
            if out is None:
                return None
            x_pol, y_pol, bad = out
            if not np.all(np.isfinite(x_pol)) or float(np.max(np.abs(x_pol), initial=0.0)) > 1e12:
                return None

            cxp = self.C @ x_pol
            viol_low = np.where(np.isfinite(self.l), self.l - cxp, -np.inf)
            viol_up = np.where(np.isfinite(self.u), cxp - self.u, -np.inf)
            viol_low[act_low | self.is_eq] = -np.inf
            viol_up[act_up | self.is_eq] = -np.inf
            worst_low = int(np.argmax(viol_low)) if self.m else 0
            worst_up = int(np.argmax(viol_up)) if self.m else 0
            tol_act = 1e-9
            if viol_low[worst_low] > tol_act * scale[worst_low] or \
               viol_up[worst_up] > tol_act * scale[worst_up]:
                if viol_low[worst_low] / scale[worst_low] >= viol_up[worst_up] / scale[worst_up]:
                    act_low[worst_low] = True
                else:
                    act_up[worst_up] = True
                continue

            if not np.any(bad):
                return self._polish_accept(x_pol, y_pol, xu, yu)

            recovered = self._recover_duals(x_pol, act_low, act_up)
            if recovered is not None:
                r_stat = self.problem.Q @ x_pol + self.problem.q + self.C.T @ recovered
                if float(np.max(np.abs(r_stat), initial=0.0)) <= 1e-9:
                    return self._polish_accept(x_pol, recovered, xu, yu)

            # genuinely wrong working set: release the worst-signed row
            wrongness = np.where(bad, np.abs(y_pol), -np.inf)
            drop = int(np.argmax(wrongness))
            act_low[drop] = False
            act_up[drop] = False
        return None

    def _polish_attempt(self, act_low, act_up):
        prob = self.problem
        active = self.is_eq | act_low | act_up
        idx = np.where(active)[0]
        rhs_act = np.where(act_low, self.l, np.where(act_up, self.u, self.l))[idx]
        C_act = self.C[idx]
        na = idx.shape[0]

        reg = self.settings.polish_reg
        K = np.zeros((self.n + na, self.n + na))
        K[: self.n, : self.n] = prob.Q + reg * np.eye(self.n)
        K[: self.n, self.n:] = C_act.T
        K[self.n:, : self.n] = C_act
        K[self.n:, self.n:] = -reg * np.eye(na)
        rhs = np.concatenate([-prob.q, rhs_act])
        try:
            lu = lu_factor(K, check_finite=False)
        except Exception:
            return None
        sol = lu_solve(lu, rhs, check_finite=False)
        # two rounds of iterative refinement against the unregularized system
        K0 = K.copy()
        K0[: self.n, : self.n] -= reg * np.eye(self.n)
        K0[self.n:, self.n:] += reg * np.eye(na)
        for _ in range(2):
            resid = rhs - K0 @ sol
            sol = sol + lu_solve(lu, resid, check_finite=False)

        x_pol = sol[: self.n]
        y_pol = np.zeros(self.m)
        y_pol[idx] = sol[self.n:]
        if not np.all(np.isfinite(x_pol)) or not np.all(np.isfinite(y_pol)):
            return None
        bad = (~self.is_eq) & (((y_pol < -1e-8) & ~act_low) | ((y_pol > 1e-8) & ~act_up))
        return x_pol, y_pol, bad

    def _recover_duals(self, x_pol, act_low, act_up):
        """Sign-constrained least-squares dual recovery at a fixed primal.

        Builds one nonnegative column per one-sided multiplier (equality
        rows get both signs) and solves the stationarity system with NNLS.
        """
        target = -(self.problem.Q @ x_pol + self.problem.q)
        eq_idx = np.where(self.is_eq)[0]
        lo_idx = np.where(act_low & ~self.is_eq)[0]
        up_idx = np.where(act_up & ~self.is_eq)[0]
        cols = [self.C[eq_idx].T, -self.C[eq_idx].T, -self.C[lo_idx].T, self.C[up_idx].T]
        B = np.hstack([c for c in cols if c.size] or [np.zeros((self.n, 0))])
        if B.shape[1] == 0:
            return None
        try:
            v, _ = nnls(B, target, maxiter=10 * B.shape[1])
        except Exception:
            return None
        y = np.zeros(self.m)
        ne = eq_idx.shape[0]
        y[eq_idx] += v[:ne]
        y[eq_idx] -= v[ne: 2 * ne]
        y[lo_idx] -= v[2 * ne: 2 * ne + lo_idx.shape[0]]
        y[up_idx] += v[2 * ne + lo_idx.shape[0]:]
        return y

    def _polish_accept(self, x_pol, y_pol, xu, yu):
        z_pol = np.clip(self.C @ x_pol, self.l, self.u)
        r_prim_new, r_stat_new, _ = self._residuals(x_pol, z_pol, y_pol)
        r_prim_old, r_stat_old, _ = self._residuals(
            xu, np.clip(self.C @ xu, self.l, self.u), yu
        )
        if max(r_prim_new, r_stat_new) <= max(r_prim_old, r_stat_old):
            return x_pol, y_pol, True
        return None


def solve(problem: QpProblem, settings: Optional[QpSettings] = None,
          x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None) -> QpSolution:
    """One-shot convenience wrapper around :class:`PreparedQp`."""
    return PreparedQp(problem, settings).solve(x0=x0, y0=y0)
