"""Synthetic objectives, error/regret metrics, and replica campaigns.

Also houses the empirical verifiers for the spectral floor/ceiling of the
normalized design matrix and the chi-square tail bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .engine import RunTrace, TsConfig, run
from .errors import InsufficientDataError
from .kernel import Domain
from .posterior import Origin

ERROR_FLOOR = -12.0


@dataclass(frozen=True)
class Objective:
    """Deterministic test function with a known global maximizer."""

    name: str
    dim: int
    evaluate: Callable[[np.ndarray], float]
    domain: Domain
    true_argmax: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        xs = np.atleast_1d(np.asarray(self.true_argmax, dtype=float))
        object.__setattr__(self, "true_argmax", xs)
        if not self.domain.contains(xs):
            raise ValueError("true_argmax outside the objective's domain")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _refine_argmax(f, x0: np.ndarray, domain: Domain) -> np.ndarray:
    res = optimize.minimize(
        lambda x: -f(x),
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000},
    )
    return domain.clip(np.atleast_1d(res.x))


def f1_objective(noise_sigma: float = 0.0) -> Objective:
    """Bimodal 1-d Gaussian-bump mixture: local max near 2, global near 5."""
    c = 1.0 / np.sqrt(2.0 * np.pi)

    def f(x):
        x = float(np.atleast_1d(x)[0])
        return 5 * c * np.exp(-0.5 * (x - 2) ** 2) + 10 * c * np.exp(
            -0.5 * (x - 5) ** 2
        )

    domain = Domain(np.array([0.0]), np.array([10.0]))
    xstar = _refine_argmax(f, np.array([5.0]), domain)
    return Objective("f1", 1, f, domain, xstar, noise_sigma)


def f2_objective(noise_sigma: float = 0.0) -> Objective:
    """2-d analogue of f1: local max near (2,2), global near (5,5)."""
    c = 1.0 / (2.0 * np.pi)
    mu1 = np.array([2.0, 2.0])
    mu2 = np.array([5.0, 5.0])

    def f(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return 5 * c * np.exp(-0.5 * np.sum((x - mu1) ** 2)) + 10 * c * np.exp(
            -0.5 * np.sum((x - mu2) ** 2)
        )

    domain = Domain(np.zeros(2), np.full(2, 10.0))
    xstar = _refine_argmax(f, mu2.copy(), domain)
    return Objective("f2", 2, f, domain, xstar, noise_sigma)


def f_beta_objective(beta: float, noise_sigma: float = 0.0) -> Objective:
    """Unimodal 1-d bump of height beta; flattens as beta decreases."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")

    def f(x):
        x = float(np.atleast_1d(x)[0])
        return beta * np.exp(-((x - 5.0) ** 2) / 8.0)

    domain = Domain(np.array([0.0]), np.array([10.0]))
    return Objective(f"f_beta({beta})", 1, f, domain, np.array([5.0]), noise_sigma)


def noisy_oracle(obj: Objective, rng: np.random.Generator):
    """Evaluation function adding fresh N(0, noise_sigma^2) errors."""
    if obj.noise_sigma == 0:
        return lambda x: obj.evaluate(x)
    return lambda x: obj.evaluate(x) + rng.normal(0.0, obj.noise_sigma)


def error_metric(x_t, x_star) -> float:
    """Relative squared error on a log10 scale, floored at -12."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    denom = np.linalg.norm(x_star)
    if denom == 0:
        raise ValueError("error_metric undefined for x_star = 0")
    rel = np.linalg.norm(x_t - x_star) / denom
    if rel <= 0:
        return ERROR_FLOOR
    return max(float(2.0 * np.log10(rel)), ERROR_FLOOR)


def chosen_points(trace: RunTrace) -> np.ndarray:
    """All evaluated points of a trace in observation order, shape (t, d)."""
    return np.concatenate([rec.points for rec in trace.stages])


def average_regret(trace: RunTrace, obj: Objective) -> np.ndarray:
    """Average cumulative regret R_T/T for every observation prefix T."""
    if not trace.stages:
        raise ValueError("average_regret requires a nonempty trace")
    pts = chosen_points(trace)
    f_star = obj.evaluate(obj.true_argmax)
    inst = np.array([f_star - obj.evaluate(p) for p in pts])
    return np.cumsum(inst) / np.arange(1, inst.size + 1)


def delta_epsilon(obj: Objective, epsilon: float, grid_size: int = 100_000) -> float:
    """Minimum value gap f(x*) - f(x) over points at least epsilon from x*.

    Dense grid search outside the epsilon-ball followed by a local polish
    constrained to the ball's exterior.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = obj.dim
    dom = obj.domain
    n_per_axis = max(2, int(round(grid_size ** (1.0 / d))))
    axes = [np.linspace(dom.lower[i], dom.upper[i], n_per_axis) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    dist = np.linalg.norm(grid - obj.true_argmax, axis=1)
    outside = grid[dist > epsilon]
    f_star = obj.evaluate(obj.true_argmax)
    vals = np.array([obj.evaluate(p) for p in outside])
    best = outside[int(np.argmax(vals))]

    def project(x):
        v = x - obj.true_argmax
        r = np.linalg.norm(v)
        if r >= epsilon or r == 0:
            return x
        return obj.true_argmax + v * (epsilon / r)

    # compass polish of the exterior maximizer
    x = best.astype(float)
    fx = obj.evaluate(x)
    step = epsilon * 0.1
    for _ in range(200):
        improved = False
        for i in range(d):
            for s in (step, -step):
                cand = x.copy()
                cand[i] += s
                cand = dom.clip(project(cand))
                fc = obj.evaluate(cand)
                if fc > fx:
                    x, fx, improved = cand, fc, True
        if not improved:
            step *= 0.5
            if step < 1e-12:
                break
    return max(f_star - fx, 0.0)


def chi_square_tail_bound(m: int, delta: float) -> float:
    """Closed-form upper bound on P(chi^2_m > m + delta).

    Equivalent to the Laurent-Massart concentration inequality
    P(Z >= m + 2 sqrt(m x) + 2 x) <= exp(-x) with x solved from
    delta = 2 sqrt(m x) + 2 x; trivial (equal to 1) at delta = 0 and
    strictly decreasing in delta.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return float(
        np.exp(-0.5 * (delta + m - np.sqrt(2.0 * delta * m + m**2)))
    )


def decay_rate_fit(errors, burn_in_frac: float = 0.2):
    """OLS slope of an error series vs stage index, after burn-in.

    Returns (slope, intercept, r_squared); raises InsufficientDataError
    when fewer than 10 finite points remain.
    """
    e = np.asarray(errors, dtype=float)
    t = np.arange(1, e.size + 1, dtype=float)
    start = int(np.floor(burn_in_frac * e.size))
    e, t = e[start:], t[start:]
    finite = np.isfinite(e)
    e, t = e[finite], t[finite]
    if e.size < 10:
        raise InsufficientDataError(
            f"decay fit needs >= 10 finite points, got {e.size}"
        )
    slope, intercept = np.polyfit(t, e, 1)
    resid = e - (slope * t + intercept)
    ss_tot = float(np.sum((e - e.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2


@dataclass
class CampaignResult:
    objective: Objective
    config: TsConfig
    traces: list  # list[RunTrace]
    stage_grid: np.ndarray  # 1..max stage length across replicas
    error_series: np.ndarray  # (replicas, stages), carried forward after stop
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    regret_curves: list  # per-replica average-regret vectors

    def stages_to_threshold(self, threshold: float = -2.0) -> np.ndarray:
        """Per-replica first stage with error <= threshold (inf if never)."""
        out = np.full(self.error_series.shape[0], np.inf)
        for i, row in enumerate(self.error_series):
            hits = np.nonzero(row <= threshold)[0]
            if hits.size:
                out[i] = hits[0] + 1
        return out


def replica_seed(base_seed: int, index: int) -> int:
    """Schedule-independent derived seed for one replica."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_replica(cfg: TsConfig, obj: Objective, base_seed: int, index: int) -> RunTrace:
    seed = replica_seed(base_seed, index)
    engine_seed = seed & ((1 << 62) - 1)
    oracle = noisy_oracle(obj, np.random.default_rng(seed ^ 0x9E3779B97F4A7C15))
    return run(replace(cfg, seed=engine_seed), oracle, obj.domain)


def run_campaign(
    cfg: TsConfig, obj: Objective, replicas: int, base_seed: int
) -> CampaignResult:
    """Independent seeded replicas with per-stage error-quantile aggregation.

    Per-stage errors are computed on the posterior-mode estimate; replicas
    that stop early carry their final error forward so quantiles are taken
    over a rectangular array.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    traces = [run_replica(cfg, obj, base_seed, i) for i in range(replicas)]
    n_stages = max(len(tr.stages) for tr in traces)
    errors = np.empty((replicas, n_stages))
    for i, tr in enumerate(traces):
        row = [error_metric(rec.mode_estimate, obj.true_argmax) for rec in tr.stages]
        row += [row[-1]] * (n_stages - len(row))
        errors[i] = row
    q25, q50, q75 = np.percentile(errors, [25, 50, 75], axis=0)
    try:
        slope, intercept, r2 = decay_rate_fit(q50)
    except InsufficientDataError:
        slope, intercept, r2 = np.nan, np.nan, np.nan
    regrets = [average_regret(tr, obj) for tr in traces]
    return CampaignResult(
        objective=obj,
        config=cfg,
        traces=traces,
        stage_grid=np.arange(1, n_stages + 1),
        error_series=errors,
        q25=q25,
        q50=q50,
        q75=q75,
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        regret_curves=regrets,
    )


def eigen_diagnostics(trace: RunTrace) -> dict:
    """Spectral floor/ceiling checks along one trace.

    Verifies that lambda_min(A/t) stays strictly positive, holds at least
    half its value at the first stage with t >= 200, and that
    lambda_max(A/t) stays below ``xi * lam1 + (1 - xi) * zeta^2 + 1.1``
    with lam1 the per-stage top empirical kernel eigenvalue.
    """
    xi = trace.config.xi
    t_vals = np.array([rec.n_obs for rec in trace.stages])
    lam_min = np.array([rec.lambda_min_over_t for rec in trace.stages])
    lam_max = np.array([rec.lambda_max_over_t for rec in trace.stages])
    ceilings = np.array(
        [
            xi * rec.top_kernel_eigenvalue
            + (1 - xi) * rec.hyperparams.zeta**2
            + 1.1
            for rec in trace.stages
        ]
    )
    late = t_vals >= 200
    ref = lam_min[late][0] if np.any(late) else np.nan
    return {
        "t": t_vals,
        "lambda_min_over_t": lam_min,
        "lambda_max_over_t": lam_max,
        "ceiling": ceilings,
        "min_floor_ok": bool(np.all(lam_min > 0)),
        "ref_at_200": float(ref),
        "half_ref_ok": bool(np.all(lam_min[late] >= 0.5 * ref))
        if np.any(late)
        else False,
        "max_bound_ok": bool(np.all(lam_max <= ceilings)),
    }
