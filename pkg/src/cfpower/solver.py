"""Max-min fair power allocation by bisection over SOCP subproblems.

For a fixed target SINR ``s`` every UE constraint SINR_k >= s is the
second-order cone

    sqrt(1/s) c_k^T gamma_k >= || B_k [gamma; sigma] ||

with c_k = (a_k1, ..., a_kL) and B_k = diag(sqrt(b_k11), ..., sqrt(b_kKL), 1).
The subproblem finds the smallest power margin ``c`` such that the cones hold
and every AP radiates at most ``c * P_max``; level ``s`` is achievable iff
``c <= 1``.  The vector gamma is stacked UE-major: gamma_k = (gamma_k1 ...
gamma_kL), gamma = (gamma_1, ..., gamma_K), so index ``k * L + l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .config import SystemConfig
from .stats import SinrCoefficients, compute_sinr


class SolverError(RuntimeError):
    """The conic solver did not reach a usable answer."""


class FeasibilityOrderError(RuntimeError):
    """A level was feasible while a lower level was infeasible."""


@dataclass
class SocSubproblem:
    s: float
    c: np.ndarray        # (K, L), |a_kl|
    b_diag: np.ndarray   # (K, K*L + 1), diagonal of B_k in gamma order, last entry 1
    sigma: float
    p_dl_max: float
    served: np.ndarray   # (K, L) bool

    @property
    def K(self) -> int:
        return self.c.shape[0]

    @property
    def L(self) -> int:
        return self.c.shape[1]

    def B(self, k: int) -> np.ndarray:
        return np.diag(self.b_diag[k])


@dataclass
class SubproblemResult:
    c_opt: float          # math.inf when the cones cannot be met at any power
    gamma: np.ndarray     # (K, L); zeros when infeasible
    status: str           # "solved" | "infeasible"
    iterations: int = 0
    residual: float = 0.0
    s: float = 0.0        # level actually solved

    @property
    def feasible(self) -> bool:
        return self.status == "solved" and self.c_opt <= 1.0


@dataclass
class MaxMinSolution:
    gamma_star: np.ndarray
    s_star: float
    iterations: int
    per_ue_sinr: np.ndarray
    status: str                       # "converged" | "infeasible" | "failed"
    trace: list = field(default_factory=list)   # (s, c_opt) per bisection step
    max_residual: float = 0.0
    solver_iterations: int = 0


def assemble_subproblem(s: float, coeffs: SinrCoefficients, config: SystemConfig,
                        served: np.ndarray | None = None) -> SocSubproblem:
    if not s > 0:
        raise ValueError("target SINR must be positive")
    K, L = coeffs.K, coeffs.L
    if served is None:
        served = coeffs.a > 0
    b_diag = np.ones((K, K * L + 1))
    # b[k, i, l] -> position i * L + l, matching gamma's UE-major stacking
    b_diag[:, :-1] = np.sqrt(coeffs.b).reshape(K, K * L)
    return SocSubproblem(float(s), np.abs(coeffs.a), b_diag, math.sqrt(coeffs.sigma2),
                         config.p_dl_max, np.asarray(served, bool))


def _settings(tol: float, **extra):
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = 200
    st.tol_gap_abs = tol
    st.tol_gap_rel = tol
    st.tol_feas = tol
    st.tol_infeas_abs = tol
    st.tol_infeas_rel = tol
    for key, value in extra.items():
        setattr(st, key, value)
    return st


def _retry_plan(tol: float):
    # the interior-point iterates occasionally stall right at the ceiling;
    # unequilibrated and slightly looser solves stay within the 1e-7 contract
    return [(tol, {}), (tol, {"equilibrate_enable": False}),
            (max(tol, 1e-8), {}), (max(tol, 1e-7), {"equilibrate_enable": False})]


def solve_subproblem(sub: SocSubproblem, tol: float = 1e-9) -> SubproblemResult:
    """Minimal power margin ``c`` for target ``sub.s``.

    The cones are homogeneous in ``(gamma, sigma)``, so scaling a solution
    (gamma, c) by 1/sqrt(c) gives an allocation within the unit budget that
    tolerates noise amplitude u = sigma / sqrt(c).  We solve that bounded
    form instead, on the unit-scaled problem (P_max = 1, sigma = 1):

        maximize u  s.t.  sqrt(1/s) c_k^T gamma_k >= ||(B'_k gamma, u)||,
                          ||gamma_{:, l}|| <= 1,  gamma >= 0,

    and return c = 1 / u**2.  Near the interference-limited ceiling c grows
    without bound while u only tends to zero, which keeps the solver well
    conditioned; u = 0 means no power level reaches ``s``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    K, L = sub.K, sub.L
    n = K * L
    u_idx = n
    scale = math.sqrt(sub.p_dl_max) / sub.sigma
    c = sub.c * scale
    sb = sub.b_diag[:, :-1] * scale
    served = sub.served.ravel()

    rows, cols, vals, rhs, cones = [], [], [], [], []
    row = 0

    def add(r, col, v):
        rows.append(r)
        cols.append(col)
        vals.append(v)

    # unserved links carry no power
    off = np.flatnonzero(~served)
    for j in off:
        add(row, j, 1.0)
        rhs.append(0.0)
        row += 1
    if off.size:
        cones.append(clarabel.ZeroConeT(int(off.size)))

    on = np.flatnonzero(served)
    for j in on:
        add(row, j, -1.0)
        rhs.append(0.0)
        row += 1
    if on.size:
        cones.append(clarabel.NonnegativeConeT(int(on.size)))

    # per-AP budget ||gamma_{:, l}|| <= 1
    for l in range(L):
        rhs.append(1.0)
        row += 1
        for k in range(K):
            add(row, k * L + l, -1.0)
            rhs.append(0.0)
            row += 1
        cones.append(clarabel.SecondOrderConeT(K + 1))

    inv_sqrt_s = 1.0 / math.sqrt(sub.s)
    for k in range(K):
        start = row
        for l in range(L):
            if c[k, l] != 0.0:
                add(row, k * L + l, -inv_sqrt_s * c[k, l])
        rhs.append(0.0)
        row += 1
        for j in np.flatnonzero(sb[k]):
            add(row, int(j), -sb[k, j])
            rhs.append(0.0)
            row += 1
        add(row, u_idx, -1.0)
        rhs.append(0.0)
        row += 1
        cones.append(clarabel.SecondOrderConeT(row - start))

    A = sp.csc_matrix((vals, (rows, cols)), shape=(row, n + 1))
    q = np.zeros(n + 1)
    q[u_idx] = -1.0
    P = sp.csc_matrix((n + 1, n + 1))
    b = np.asarray(rhs)
    for attempt_tol, extra in _retry_plan(tol):
        result = clarabel.DefaultSolver(P, q, A, b, cones, _settings(attempt_tol, **extra)).solve()
        status = str(result.status)
        if status in ("Solved", "AlmostSolved"):
            break
    else:
        raise SolverError(f"conic solver returned {status} at s={sub.s:g}")

    x = np.asarray(result.x)
    u = float(x[u_idx])
    g = (np.clip(x[:n], 0.0, None) * served).reshape(K, L)
    # violation of the SINR cones at (g, u), unit-scaled
    lhs = inv_sqrt_s * np.einsum("kl,kl->k", c, g)
    norm = np.sqrt((sb**2 @ g.ravel() ** 2) + u * u)
    residual = float(max(0.0, np.max(norm - lhs)))
    if status == "AlmostSolved" and residual > 1e-6:
        raise SolverError(f"inaccurate subproblem solution at s={sub.s:g} (residual {residual:.2e})")
    if u <= tol:
        return SubproblemResult(math.inf, np.zeros((K, L)), "infeasible", result.iterations, residual, sub.s)
    # back to the minimal-margin allocation: gamma = g / u in noise units
    gamma = g / u * math.sqrt(sub.p_dl_max)
    return SubproblemResult(1.0 / (u * u), gamma, "solved", result.iterations, residual, sub.s)


def upper_bracket(coeffs: SinrCoefficients, config: SystemConfig) -> float:
    """Interference-free, full-power SINR of the weakest UE."""
    signal = (math.sqrt(config.p_dl_max) * coeffs.a.sum(axis=1)) ** 2
    return float(np.min(signal) / coeffs.sigma2) if coeffs.K else 0.0


def _full_power(gamma: np.ndarray, p_dl_max: float) -> np.ndarray:
    peak = np.max((gamma**2).sum(axis=0))
    return gamma * math.sqrt(p_dl_max / peak) if peak > 0 else gamma


# relative nudges of the test level when the conic solver stalls; far below
# any bisection tolerance in use
_NUDGES = (0.0, -1e-6, 1e-6, -1e-5, 1e-5)
_ORDER_SLACK = 1e-6


def _solve_near(s, coeffs, config, served, tol):
    for nudge in _NUDGES:
        level = s * (1.0 + nudge)
        try:
            res = solve_subproblem(assemble_subproblem(level, coeffs, config, served), tol)
        except SolverError:
            continue
        res.s = level
        return res
    return None


def bisection_maxmin(coeffs: SinrCoefficients, config: SystemConfig, tol_s: float = 1e-3,
                     tol_solver: float = 1e-9, served: np.ndarray | None = None,
                     max_iter: int = 200) -> MaxMinSolution:
    """Maximize the common SINR level by bisection on ``s``.

    Every solved subproblem also yields an allocation which, scaled to full
    power, is feasible; its minimum SINR lifts the lower end of the bracket.
    """
    K, L = coeffs.K, coeffs.L
    s_lo, s_hi = 0.0, upper_bracket(coeffs, config)
    if s_hi <= 0.0:
        return MaxMinSolution(np.zeros((K, L)), 0.0, 0, np.zeros(K), "infeasible")
    best_gamma = None
    best_min = 0.0
    trace = []
    highest_feasible, lowest_infeasible = 0.0, math.inf
    max_residual = 0.0
    solver_iterations = 0
    iterations = 0
    while s_hi - s_lo > tol_s * max(1.0, s_lo):
        if iterations >= max_iter:
            return MaxMinSolution(best_gamma if best_gamma is not None else np.zeros((K, L)), best_min,
                                  iterations, np.zeros(K), "failed", trace, max_residual, solver_iterations)
        s = 0.5 * (s_lo + s_hi)
        iterations += 1
        res = _solve_near(s, coeffs, config, served, tol_solver)
        if res is None:
            return MaxMinSolution(best_gamma if best_gamma is not None else np.zeros((K, L)), best_min,
                                  iterations, np.zeros(K), "failed", trace, max_residual, solver_iterations)
        s = res.s
        solver_iterations += res.iterations
        trace.append((s, res.c_opt))
        if res.status == "solved":
            max_residual = max(max_residual, res.residual)
            candidate = _full_power(res.gamma, config.p_dl_max)
            achieved = float(np.min(compute_sinr(candidate, coeffs)))
            if achieved > best_min:
                best_min, best_gamma = achieved, candidate
        if res.feasible:
            highest_feasible = max(highest_feasible, s)
            s_lo = max(s, best_min)
        else:
            lowest_infeasible = min(lowest_infeasible, s)
            s_hi = s
            s_lo = max(s_lo, min(best_min, s))
        # an allocation reaching a level declared infeasible also breaks monotonicity
        top = max(highest_feasible, best_min / (1.0 + _ORDER_SLACK))
        if top > lowest_infeasible:
            raise FeasibilityOrderError(
                f"level {top:g} is achievable but s={lowest_infeasible:g} was declared infeasible")
    if best_gamma is None:
        return MaxMinSolution(np.zeros((K, L)), 0.0, iterations, np.zeros(K), "infeasible", trace,
                              max_residual, solver_iterations)
    sinr = compute_sinr(best_gamma, coeffs)
    return MaxMinSolution(best_gamma, float(sinr.min()), iterations, sinr, "converged", trace,
                          max_residual, solver_iterations)


def single_ue_optimum(coeffs: SinrCoefficients, config: SystemConfig) -> float:
    """Exact max-min SINR when K = 1.

    The optimum has gamma_l = min(sqrt(P), tau * a_l / b_l) for a common tau.
    Unsaturated links cancel out of tau * A(tau) - D(tau), so tau solves a
    linear equation once the saturated set is known.  Thresholds are scanned
    in increasing order.  With b = 0 every AP saturates and this reduces to
    (sqrt(P) sum a)^2 / (P sum b + sigma2).
    """
    if coeffs.K != 1:
        raise ValueError("closed form only holds for a single UE")
    root_p = math.sqrt(config.p_dl_max)
    a, b = coeffs.a[0], coeffs.b[0, 0]
    live = a > 0
    a, b = a[live], b[live]
    if a.size == 0:
        return 0.0
    thresholds = root_p * b / a
    order = np.argsort(thresholds, kind="stable")
    a, b, thresholds = a[order], b[order], thresholds[order]
    for m in range(1, a.size + 1):
        tau = (config.p_dl_max * b[:m].sum() + coeffs.sigma2) / (root_p * a[:m].sum())
        upper = thresholds[m] if m < a.size else math.inf
        if thresholds[m - 1] <= tau <= upper or m == a.size:
            break
    gamma = np.minimum(root_p, tau * a / np.where(b > 0, b, 1.0))
    gamma[b == 0] = root_p
    signal = (a @ gamma) ** 2
    return float(signal / (b @ gamma**2 + coeffs.sigma2))


def heuristic_allocation(realization, est_cov: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Full power per AP, split in proportion to sqrt of the estimate variance.

    ``est_cov`` holds the estimate covariances, shape ``(K, L, N, N)``; the
    variance of link (k, l) is its trace.  Returns gamma, shape ``(K, L)``.
    """
    served = realization.served
    q = np.einsum("klnn->kl", est_cov).real * served
    root = np.sqrt(np.clip(q, 0.0, None))
    total = root.sum(axis=0)
    share = np.divide(root, total, out=np.zeros_like(root), where=total > 0)
    return np.sqrt(config.p_dl_max * share)


def full_power_equal_split(served: np.ndarray, config: SystemConfig) -> np.ndarray:
    served = np.asarray(served, dtype=bool)
    count = served.sum(axis=0)
    rho = np.divide(config.p_dl_max, count, out=np.zeros(count.shape), where=count > 0)
    return np.sqrt(rho)[None, :] * served
