"""EM fitting of the constrained mixture on the extreme sub-sample.

The E-step computes posterior component responsibilities with log-sum-exp.
The M-step splits into two independent blocks:

* the noise rates have a closed-form maximizer (weighted exponential MLE
  of the mean excess over 1 on off-face coordinates);
* the weight matrix and concentrations are optimized numerically under the
  column-sum constraint.  Feasibility is kept by construction: each
  constrained column of ``rho`` is a softmax scaled to 1/d and each
  concentration is exponentiated, then L-BFGS runs on the free variables
  (warm start plus seeded random restarts).  The objective is non-concave,
  so the contract is monotone improvement, not global optimality.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp, psi

from .damex import SupportSet
from .errors import AllComponentsZero, DeadComponent, OptimizerFailure
from .mixture import ThetaParams, project_rho, rho_to_view

LOG_NU_BOUNDS = (np.log(1e-2), np.log(1e4))


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the EM loop.

    ``tol`` is the absolute stopping threshold on the objective increase;
    None means 1e-6 per extreme point.  ``restarts`` counts optimizer starts
    for the weight/concentration block (the first is the warm start).
    """

    max_iter: int = 200
    tol: float | None = None
    nu_init: float = 20.0
    lambda_init: float = 0.01
    seed: int = 0
    restarts: int = 2
    q1_maxiter: int = 200

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol is not None and self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.nu_init <= 0 or self.lambda_init <= 0:
            raise ValueError("nu_init and lambda_init must be positive")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


@dataclass
class FitResult:
    theta: ThetaParams
    gamma: np.ndarray
    q_trace: list[float]
    iterations: int
    converged: bool
    trace: list[dict] = field(default_factory=list)


def check_posterior(gamma: np.ndarray, atol: float = 1e-12) -> None:
    """Assert the defining properties of a responsibility matrix."""
    if ((gamma < 0) | (gamma > 1)).any():
        raise ValueError("responsibilities outside [0, 1]")
    if np.abs(gamma.sum(axis=1) - 1.0).max() > atol:
        raise ValueError("responsibility rows do not sum to 1")


def log_component_scores(v: np.ndarray, theta: ThetaParams) -> np.ndarray:
    """Matrix of log(pi_k) + log p(v_i | z_k) for every row and component.

    Rows with an off-face coordinate below 1 get -inf for that component
    (the translated-exponential noise has no support there).
    """
    v = np.asarray(v, dtype=float)
    n0, d = v.shape
    sup = theta.support
    if d != sup.d:
        raise ValueError(f"data dimension {d} != support dimension {sup.d}")
    view = rho_to_view(theta)
    logv = np.log(v)
    row_sum = v.sum(axis=1)
    scores = np.empty((n0, sup.n_components))

    for k, face in enumerate(sup.faces):
        idx = list(face)
        size = len(face)
        lam = theta.lam[k]
        r = v[:, idx].sum(axis=1)
        a = theta.nu[k] * view.m[k, idx]
        log_dir = (
            gammaln(theta.nu[k]) - gammaln(a).sum()
            + ((a - 1.0) * (logv[:, idx] - np.log(r)[:, None])).sum(axis=1)
        )
        noise_excess = row_sum - r - (d - size)
        log_noise = (d - size) * np.log(lam) - lam * noise_excess
        col = np.log(view.pi[k]) - (size + 1) * np.log(r) + log_dir + log_noise
        if d > size:
            comp = np.setdiff1d(np.arange(d), idx)
            col[(v[:, comp] < 1.0).any(axis=1)] = -np.inf
        scores[:, k] = col

    for s, j in enumerate(sup.singletons):
        k = sup.K + s
        lam = theta.lam[k]
        noise_excess = row_sum - v[:, j] - (d - 1)
        col = (
            np.log(view.pi[k]) - 2.0 * logv[:, j]
            + (d - 1) * np.log(lam) - lam * noise_excess
        )
        if d > 1:
            comp = np.setdiff1d(np.arange(d), [j])
            col[(v[:, comp] < 1.0).any(axis=1)] = -np.inf
        scores[:, k] = col

    return scores


def e_step(v: np.ndarray, theta: ThetaParams) -> np.ndarray:
    """Posterior responsibilities, rows normalized to 1 via log-sum-exp."""
    scores = log_component_scores(v, theta)
    row_max = scores.max(axis=1)
    dead_rows = np.nonzero(~np.isfinite(row_max))[0]
    if dead_rows.size:
        raise AllComponentsZero(
            f"every component has zero density for row(s) {dead_rows[:5].tolist()}"
        )
    gamma = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma


def q_value(v: np.ndarray, gamma: np.ndarray, theta: ThetaParams) -> float:
    """EM objective: sum_i sum_k gamma_ik (log pi_k + log p(v_i | z_k)).

    Zero-responsibility cells contribute zero even where the log score
    is -inf.
    """
    scores = log_component_scores(v, theta)
    terms = np.where(gamma > 0, gamma * scores, 0.0)
    return float(terms.sum())


def q_split(v, gamma, theta) -> tuple[float, float, float]:
    """Decompose the objective into the weight/concentration block, the
    noise block, and the parameter-free remainder; the three sum to
    :func:`q_value`."""
    v = np.asarray(v, dtype=float)
    n0, d = v.shape
    sup = theta.support
    view = rho_to_view(theta)
    row_sum = v.sum(axis=1)
    logv = np.log(v)

    q1 = 0.0
    q2 = 0.0
    const = 0.0
    for k, face in enumerate(sup.faces):
        idx = list(face)
        size = len(face)
        g = gamma[:, k]
        a = theta.nu[k] * view.m[k, idx]
        log_dir = (
            gammaln(theta.nu[k]) - gammaln(a).sum()
            + ((a - 1.0) * (logv[:, idx]
                            - np.log(v[:, idx].sum(axis=1))[:, None])).sum(axis=1)
        )
        q1 += (g * (np.log(view.pi[k]) + log_dir)).sum()
        lam = theta.lam[k]
        noise_excess = row_sum - v[:, idx].sum(axis=1) - (d - size)
        log_noise = (d - size) * np.log(lam) - lam * noise_excess
        if d > size:
            comp = np.setdiff1d(np.arange(d), idx)
            log_noise = np.where(
                (v[:, comp] < 1.0).any(axis=1), -np.inf, log_noise
            )
        q2 += np.where(g > 0, g * log_noise, 0.0).sum()
        r = v[:, idx].sum(axis=1)
        const += (g * (-(size + 1) * np.log(r))).sum()
    for s, j in enumerate(sup.singletons):
        k = sup.K + s
        g = gamma[:, k]
        lam = theta.lam[k]
        noise_excess = row_sum - v[:, j] - (d - 1)
        log_noise = (d - 1) * np.log(lam) - lam * noise_excess
        if d > 1:
            comp = np.setdiff1d(np.arange(d), [j])
            log_noise = np.where(
                (v[:, comp] < 1.0).any(axis=1), -np.inf, log_noise
            )
        q2 += np.where(g > 0, g * log_noise, 0.0).sum()
        const += (g * (np.log(view.pi[k]) - 2.0 * logv[:, j])).sum()
    return float(q1), float(q2), float(const)


def m_step_lambda(
    v: np.ndarray,
    gamma: np.ndarray,
    support: SupportSet,
    lam_prev: np.ndarray | None = None,
) -> np.ndarray:
    """Closed-form noise-rate update.

    lambda_k = |off-face| * (total responsibility) / (responsibility-weighted
    sum of off-face excesses over 1).  Starved components keep their previous
    rate when one is supplied, otherwise they are an error; full-dimensional
    faces have no noise coordinates and keep the previous rate too.
    """
    v = np.asarray(v, dtype=float)
    n0, d = v.shape
    row_sum = v.sum(axis=1)
    lam = np.empty(support.n_components)
    components = support.components()
    for k, face in enumerate(components):
        g = gamma[:, k]
        g_total = g.sum()
        size = len(face)
        if size == d:
            if lam_prev is None:
                raise DeadComponent(
                    f"component {k} covers all coordinates; its noise rate "
                    "is undefined and no previous value was given"
                )
            lam[k] = lam_prev[k]
            continue
        if g_total <= 0.0:
            if lam_prev is None:
                raise DeadComponent(f"component {k} has zero responsibility")
            lam[k] = lam_prev[k]
            continue
        excess = row_sum - v[:, list(face)].sum(axis=1) - (d - size)
        denom = (g * excess).sum()
        if denom <= 0.0:
            raise ValueError(
                f"component {k}: off-face excess is zero, noise rate diverges"
            )
        lam[k] = (d - size) * g_total / denom
    return lam


class _Q1Problem:
    """Flattened feasible parametrization of the weight/concentration block.

    Slot arrays enumerate the (face, coordinate) pairs of the support.
    Columns covered by a single face are pinned at 1/d; columns covered by
    several faces carry softmax logits scaled to 1/d.  Concentrations enter
    through their logs.
    """

    def __init__(self, support: SupportSet, g_total, s_stats):
        self.support = support
        K, d = support.K, support.d
        self.K = K
        self.d = d
        self.g = np.asarray(g_total, dtype=float)
        slot_k = []
        slot_j = []
        for k, face in enumerate(support.faces):
            for j in face:
                slot_k.append(k)
                slot_j.append(j)
        self.slot_k = np.array(slot_k, dtype=int)
        self.slot_j = np.array(slot_j, dtype=int)
        self.n_slots = self.slot_k.size
        self.s_stats = np.asarray(s_stats, dtype=float)

        cover = np.zeros(d, dtype=int)
        np.add.at(cover, self.slot_j, 1)
        free_col_ids = np.nonzero(cover >= 2)[0]
        self.col_index = -np.ones(d, dtype=int)
        self.col_index[free_col_ids] = np.arange(free_col_ids.size)
        self.n_free_cols = free_col_ids.size
        self.free_slot = self.col_index[self.slot_j] >= 0
        self.slot_col = self.col_index[self.slot_j]
        self.n_logits = int(self.free_slot.sum())
        self.logit_pos = -np.ones(self.n_slots, dtype=int)
        self.logit_pos[self.free_slot] = np.arange(self.n_logits)

    def pack(self, rho: np.ndarray, nu: np.ndarray) -> np.ndarray:
        rho_flat = rho[self.slot_k, self.slot_j]
        logits = np.log(self.d * rho_flat[self.free_slot])
        return np.concatenate([logits, np.log(nu)])

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rho_flat = self._rho_flat(x)
        rho = np.zeros((self.K, self.d))
        rho[self.slot_k, self.slot_j] = rho_flat
        return rho, np.exp(x[self.n_logits:])

    def _rho_flat(self, x: np.ndarray) -> np.ndarray:
        rho_flat = np.full(self.n_slots, 1.0 / self.d)
        if self.n_logits:
            logits = x[: self.n_logits]
            col_of_logit = self.slot_col[self.free_slot]
            col_max = np.full(self.n_free_cols, -np.inf)
            np.maximum.at(col_max, col_of_logit, logits)
            ex = np.exp(logits - col_max[col_of_logit])
            col_sum = np.zeros(self.n_free_cols)
            np.add.at(col_sum, col_of_logit, ex)
            rho_flat[self.free_slot] = ex / (self.d * col_sum[col_of_logit])
        return rho_flat

    def neg_q1_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        rho_flat = self._rho_flat(x)
        nu = np.exp(x[self.n_logits:])
        pi = np.zeros(self.K)
        np.add.at(pi, self.slot_k, rho_flat)
        m_flat = rho_flat / pi[self.slot_k]
        a_flat = nu[self.slot_k] * m_flat

        gl_nu_sum = np.zeros(self.K)
        np.add.at(gl_nu_sum, self.slot_k, gammaln(a_flat))
        s_term = ((a_flat - 1.0) * self.s_stats).sum()
        q1 = (
            (self.g * (np.log(pi) + gammaln(nu))).sum()
            - (self.g * gl_nu_sum).sum() + s_term
        )

        t_flat = self.s_stats - self.g[self.slot_k] * psi(a_flat)
        mt = np.zeros(self.K)
        np.add.at(mt, self.slot_k, m_flat * t_flat)
        g_rho = (
            self.g[self.slot_k] / pi[self.slot_k]
            + (nu / pi)[self.slot_k] * (t_flat - mt[self.slot_k])
        )
        grad_lognu = nu * (self.g * psi(nu) + mt)

        grad = np.empty_like(x)
        if self.n_logits:
            col_dot = np.zeros(self.n_free_cols)
            np.add.at(col_dot, self.slot_col[self.free_slot],
                      (rho_flat * g_rho)[self.free_slot])
            grad_logits = rho_flat[self.free_slot] * (
                g_rho[self.free_slot]
                - self.d * col_dot[self.slot_col[self.free_slot]]
            )
            grad[: self.n_logits] = grad_logits
        grad[self.n_logits:] = grad_lognu
        return -q1, -grad

    def q1(self, rho: np.ndarray, nu: np.ndarray) -> float:
        value, _ = self.neg_q1_and_grad(self.pack(rho, nu))
        return -value


def _q1_sufficient_stats(v, gamma, support):
    """Per-component responsibility totals and weighted log-angle sums."""
    g_total = gamma[:, : support.K].sum(axis=0)
    s_stats = []
    for k, face in enumerate(support.faces):
        idx = list(face)
        logw = np.log(v[:, idx]) - np.log(v[:, idx].sum(axis=1))[:, None]
        s_stats.append(gamma[:, k] @ logw)
    s_stats = np.concatenate(s_stats) if s_stats else np.zeros(0)
    return g_total, s_stats


def m_step_rho_nu(
    v: np.ndarray,
    gamma: np.ndarray,
    theta: ThetaParams,
    rng: np.random.Generator | None = None,
    restarts: int = 2,
    maxiter: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Improve the weight/concentration block of the objective.

    Returns a feasible (rho, nu) whose block objective is no worse than the
    current one (within 1e-10); raises :class:`OptimizerFailure` only if
    every optimizer run crashes and none improves.
    """
    v = np.asarray(v, dtype=float)
    support = theta.support
    if support.K == 0:
        return theta.rho.copy(), theta.nu.copy()
    if rng is None:
        rng = np.random.default_rng(0)
    g_total, s_stats = _q1_sufficient_stats(v, gamma, support)
    problem = _Q1Problem(support, g_total, s_stats)

    x0 = problem.pack(theta.rho, theta.nu)
    q1_current = -problem.neg_q1_and_grad(x0)[0]
    # Logit bounds keep every rho entry strictly positive (softmax cannot
    # underflow); the range still allows mass ratios beyond e^60.
    bounds = (
        [(-30.0, 30.0)] * problem.n_logits
        + [LOG_NU_BOUNDS] * problem.K
    )

    best_x, best_q1 = x0, q1_current
    n_failed = 0
    for attempt in range(restarts):
        start = x0 if attempt == 0 else x0 + rng.normal(0.0, 0.5, x0.size)
        try:
            res = minimize(
                problem.neg_q1_and_grad, start, jac=True,
                method="L-BFGS-B", bounds=bounds,
                options={"maxiter": maxiter},
            )
        except (ValueError, FloatingPointError):
            n_failed += 1
            continue
        if np.isfinite(res.fun) and -res.fun > best_q1:
            best_x, best_q1 = res.x, -res.fun
    if n_failed == restarts and best_q1 <= q1_current:
        raise OptimizerFailure(
            "all optimizer starts failed and none improved the objective"
        )
    rho, nu = problem.unpack(best_x)
    rho = project_rho(rho, support)
    return rho, nu


def fit(
    v: np.ndarray,
    support: SupportSet,
    config: FitConfig | None = None,
    r0: float = 1.0,
) -> FitResult:
    """Run EM until the objective stalls or ``max_iter`` is reached.

    Initialization: concentrations and noise rates at their configured
    starting values, weight matrix projected from a seeded random positive
    matrix.  The loop stops as soon as an iteration gains less than ``tol``;
    an iteration that would decrease the objective is rolled back, so the
    recorded trace is non-decreasing and pairs with the returned parameters.

    ``r0`` is the radial threshold recorded in the fitted parameters; it
    scales the density but does not influence the optimization.
    """
    config = config or FitConfig()
    v = np.asarray(v, dtype=float)
    n0 = v.shape[0]
    tol = config.tol if config.tol is not None else 1e-6 * n0
    if n0 < support.n_components:
        warnings.warn(
            f"{n0} extreme points for {support.n_components} components; "
            "the fit is under-determined",
            stacklevel=2,
        )

    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    raw = np.zeros((support.K, support.d))
    for k, face in enumerate(support.faces):
        raw[k, list(face)] = rng.uniform(1e-6, 1.0, size=len(face))
    rho = project_rho(raw, support) if support.K else raw
    theta = ThetaParams(
        support=support,
        rho=rho,
        nu=np.full(support.K, config.nu_init),
        lam=np.full(support.n_components, config.lambda_init),
        r0=r0,
    )

    q_trace: list[float] = []
    trace: list[dict] = []
    gamma = None
    converged = False
    iterations = 0
    dead_seen: set[int] = set()

    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        gamma_new = e_step(v, theta)
        t1 = time.perf_counter()

        starved = np.nonzero(gamma_new.sum(axis=0) <= 0.0)[0]
        fresh = set(starved.tolist()) - dead_seen
        if fresh:
            dead_seen |= fresh
            warnings.warn(
                f"component(s) {sorted(fresh)} received zero responsibility; "
                "their parameters are frozen",
                stacklevel=2,
            )
        lam = m_step_lambda(v, gamma_new, support, lam_prev=theta.lam)
        t2 = time.perf_counter()

        try:
            rho, nu = m_step_rho_nu(
                v, gamma_new, theta, rng=rng,
                restarts=config.restarts, maxiter=config.q1_maxiter,
            )
        except OptimizerFailure:
            rho, nu = theta.rho.copy(), theta.nu.copy()
        t3 = time.perf_counter()

        theta_new = ThetaParams(
            support=support, rho=rho, nu=nu, lam=lam, r0=theta.r0
        )
        q = q_value(v, gamma_new, theta_new)

        if q_trace and q < q_trace[-1]:
            # Objective went down: keep the previous pair and stop.
            converged = True
            break
        theta, gamma = theta_new, gamma_new
        iterations = it
        q_trace.append(q)
        trace.append({
            "iteration": it,
            "q": q,
            "t_e_step": t1 - t0,
            "t_lambda": t2 - t1,
            "t_rho_nu": t3 - t2,
        })
        if len(q_trace) >= 2 and q < q_trace[-2] + tol:
            converged = True
            break

    if gamma is None:
        gamma = e_step(v, theta)
    return FitResult(
        theta=theta, gamma=gamma, q_trace=q_trace,
        iterations=iterations, converged=converged, trace=trace,
    )
