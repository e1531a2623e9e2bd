"""Dense convex quadratic programming with KKT-certified solutions.

Solves  min 1/2 z'Hz + h'z  s.t.  E z = e,  G z <= g  with a primal-dual
interior-point method (Mehrotra predictor-corrector on the slack form
G z + s = g). A solution reported as ``optimal`` carries stationarity,
primal-feasibility and complementarity residuals that are all within the
requested tolerance, so correctness can be audited independently of the
algorithm. Infeasible problems are detected through a scaled Farkas
certificate on the diverging duals.

The solver is deterministic: identical inputs produce identical outputs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"


class QpError(ValueError):
    pass


@dataclass
class QpSolution:
    z: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    status: str
    iterations: int
    stationarity: float
    primal_residual: float
    complementarity: float

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def usable(self, loose: float = 1e-5) -> bool:
        """Optimal, or close enough for control use after an early stop."""
        return self.ok or (
            self.status == ITERATION_LIMIT
            and self.stationarity <= loose
            and self.primal_residual <= loose
        )


def kkt_residuals(qp, z, eq_duals, ineq_duals):
    """(stationarity, primal, complementarity) infinity norms."""
    r = qp.H @ z + qp.h
    if qp.E.shape[0]:
        r = r + qp.E.T @ eq_duals
    if qp.G.shape[0]:
        r = r + qp.G.T @ ineq_duals
    stat = float(np.max(np.abs(r))) if r.size else 0.0
    prim = 0.0
    if qp.E.shape[0]:
        prim = float(np.max(np.abs(qp.E @ z - qp.e)))
    comp = 0.0
    if qp.G.shape[0]:
        viol = qp.G @ z - qp.g
        prim = max(prim, float(np.max(np.maximum(viol, 0.0))))
        comp = float(np.max(np.abs(ineq_duals * viol)))
    return stat, prim, comp


def _check_psd(H: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    try:
        scipy.linalg.cholesky(H + 1e-10 * scale * np.eye(H.shape[0]), lower=True)
    except scipy.linalg.LinAlgError:
        raise QpError("cost matrix is not positive semidefinite") from None


def _refined_solve(lu_piv, m_mat, rhs):
    sol = scipy.linalg.lu_solve(lu_piv, rhs, check_finite=False)
    # one refinement pass
    sol += scipy.linalg.lu_solve(lu_piv, rhs - m_mat @ sol, check_finite=False)
    return sol


def solve(qp, tol: float = 1e-8, max_iter: int = 10000) -> QpSolution:
    """Solve the QP to the given absolute KKT tolerance."""
    # single-threaded BLAS: faster at these sizes and reduction order is fixed
    with threadpool_limits(limits=1):
        return _solve_impl(qp, tol, max_iter)


def _solve_impl(qp, tol: float, max_iter: int) -> QpSolution:
    H = np.asarray(qp.H, dtype=float)
    h = np.asarray(qp.h, dtype=float)
    E = np.asarray(qp.E, dtype=float)
    e = np.asarray(qp.e, dtype=float)
    G = np.asarray(qp.G, dtype=float)
    g = np.asarray(qp.g, dtype=float)
    n = qp.n
    if (
        H.shape != (n, n)
        or h.shape != (n,)
        or E.ndim != 2
        or E.shape[1] != n
        or G.ndim != 2
        or G.shape[1] != n
    ):
        raise QpError("inconsistent problem dimensions")
    me, mi = E.shape[0], G.shape[0]
    if e.shape != (me,) or g.shape != (mi,):
        raise QpError("inconsistent problem dimensions")
    _check_psd(H)

    if mi == 0:
        return _solve_equality(H, h, E, e, tol)

    # the iteration runs on an objective scaled to unit magnitude (argmin
    # invariant); reported residuals and duals are unscaled
    sigma_obj = max(1.0, float(np.max(np.abs(h))), float(np.max(np.abs(H))))
    Hs = H / sigma_obj
    hs = h / sigma_obj

    # infeasible start; per-row dual estimates match the cost gradient so
    # large linear terms (slack penalties) meet barrier resistance from
    # the first iteration on
    if me:
        z, *_ = np.linalg.lstsq(E, e, rcond=None)
    else:
        z = np.zeros(n)
    y = np.zeros(me)
    rd0 = Hs @ z + hs
    row_sq = np.maximum(np.einsum("ij,ij->i", G, G), 1e-12)
    mu = np.clip(-(G @ rd0) / row_sq, 1.0, 1e6)
    s = np.maximum(1.0, np.abs(g - G @ z))
    reg = 1e-11
    m_mat = np.zeros((n + me, n + me))
    if me:
        m_mat[:n, n:] = E.T
        m_mat[n:, :n] = E
        m_mat[n:, n:] = -reg * np.eye(me)
    reg_eye = reg * np.eye(n)

    best = None
    best_metric = np.inf
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        rd = Hs @ z + hs + G.T @ mu
        if me:
            rd = rd + E.T @ y
        rp = E @ z - e if me else np.zeros(0)
        gz = G @ z
        rg = gz + s - g
        comp = mu * s

        # unscaled residuals for the convergence decision
        stat = sigma_obj * float(np.max(np.abs(rd)))
        prim = float(np.max(np.maximum(gz - g, 0.0)))
        if me:
            prim = max(prim, float(np.max(np.abs(rp))))
        comp_max = sigma_obj * float(comp.max())
        if not np.isfinite(stat + prim + comp_max):
            break
        if stat <= tol and prim <= tol and comp_max <= tol:
            return QpSolution(
                z, sigma_obj * y, sigma_obj * mu, OPTIMAL, it - 1, stat, prim, comp_max
            )
        metric = max(stat, prim, comp_max)
        if metric < best_metric * (1.0 - 1e-3):
            best_metric = metric
            best = (z.copy(), y.copy(), mu.copy(), stat, prim, comp_max)
            stall = 0
        else:
            stall += 1
            if stall > 15:
                break

        dual_scale = float(np.abs(mu).sum() + np.abs(y).sum())
        if it > 5 and dual_scale > 1e7:
            ray = G.T @ mu + (E.T @ y if me else 0.0)
            value = float(g @ mu + (e @ y if me else 0.0))
            farkas = (
                float(np.max(np.abs(ray))) <= 1e-9 * dual_scale
                and value <= -1e-9 * dual_scale
            )
            blowup = dual_scale > 1e13 and prim > 100.0 * tol
            if farkas or blowup:
                return QpSolution(
                    z, sigma_obj * y, sigma_obj * mu, INFEASIBLE, it, stat, prim, comp_max
                )

        w = mu / s
        m_mat[:n, :n] = Hs + (G.T * w) @ G + reg_eye
        try:
            with warnings.catch_warnings():
                # a singular factor surfaces as non-finite steps below
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu_piv = scipy.linalg.lu_factor(m_mat, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            break

        def newton(rc):
            r1 = -rd + G.T @ (rc / s - w * rg)
            rhs = np.concatenate([r1, -rp]) if me else r1
            sol = _refined_solve(lu_piv, m_mat, rhs)
            dz = sol[:n]
            dy = sol[n:] if me else np.zeros(0)
            ds = -rg - G @ dz
            dmu = -rc / s - w * ds
            return dz, dy, ds, dmu

        dz_a, dy_a, ds_a, dmu_a = newton(comp)
        alpha_p = _step_length(s, ds_a)
        alpha_d = _step_length(mu, dmu_a)
        gap = float(comp.sum()) / mi
        gap_aff = float((mu + alpha_d * dmu_a) @ (s + alpha_p * ds_a)) / mi
        sigma = min(1.0, max(0.0, (gap_aff / gap) ** 3)) if gap > 0 else 0.0

        # clipped second-order correction; extreme affine products would
        # otherwise derail the combined direction on penalty problems
        correction = np.clip(dmu_a * ds_a, -10.0 * gap, 10.0 * gap)
        rc = comp + correction - sigma * gap
        dz, dy, ds, dmu = newton(rc)
        eta = 0.995
        alpha_p = min(1.0, eta * _step_length(s, ds))
        alpha_d = min(1.0, eta * _step_length(mu, dmu))
        if min(alpha_p, alpha_d) < 1e-4:
            dz, dy, ds, dmu = newton(comp - gap)  # pure centering step
            alpha_p = min(1.0, eta * _step_length(s, ds))
            alpha_d = min(1.0, eta * _step_length(mu, dmu))
        step = np.concatenate([dz, dy, ds, dmu])
        if not np.all(np.isfinite(step)):
            break
        z = z + alpha_p * dz
        s = s + alpha_p * ds
        mu = mu + alpha_d * dmu
        if me:
            y = y + alpha_d * dy

    if best is not None:
        z, y, mu, stat, prim, comp_max = best
        return QpSolution(
            z, sigma_obj * y, sigma_obj * mu, ITERATION_LIMIT, it, stat, prim, comp_max
        )
    stat, prim, comp_r = kkt_residuals(qp, z, sigma_obj * y, sigma_obj * mu)
    return QpSolution(
        z, sigma_obj * y, sigma_obj * mu, ITERATION_LIMIT, it, stat, prim, comp_r
    )


def _step_length(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _solve_equality(H, h, E, e, tol) -> QpSolution:
    n = H.shape[0]
    me = E.shape[0]
    if me == 0:
        try:
            z = scipy.linalg.solve(H, -h, assume_a="sym")
        except scipy.linalg.LinAlgError:
            z, *_ = np.linalg.lstsq(H, -h, rcond=None)
        if not np.all(np.isfinite(z)):
            z, *_ = np.linalg.lstsq(H, -h, rcond=None)
        y = np.zeros(0)
    else:
        kkt = np.block([[H, E.T], [E, np.zeros((me, me))]])
        rhs = np.concatenate([-h, e])
        try:
            sol = scipy.linalg.solve(kkt, rhs)
        except scipy.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        z, y = sol[:n], sol[n:]
    mu = np.zeros(0)
    rd = H @ z + h + (E.T @ y if me else 0.0)
    stat = float(np.max(np.abs(rd))) if n else 0.0
    prim = float(np.max(np.abs(E @ z - e))) if me else 0.0
    status = OPTIMAL if stat <= tol and prim <= tol else ITERATION_LIMIT
    return QpSolution(z, y, mu, status, 1, stat, prim, 0.0)
