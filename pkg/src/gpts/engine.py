"""Exploration-greedy Thompson Sampling loop over a compact box domain.

Each stage refits hyperparameters on a schedule, rebuilds the feature map
and posterior when they change, then draws a batch of points: with
probability ``1 - xi`` the argmax of a sampled posterior function, else a
uniform point.  The loop stops when the posterior-sampled argmax points
stay inside a small window for several consecutive stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .hyperfit import PriorSpec, cold_start, map_estimate
from .kernel import Domain, FeatureMap, HyperParams, nystrom_feature_map
from .posterior import (
    Dataset,
    Origin,
    PosteriorState,
    append_observation,
    build_posterior,
    sample_theta,
)


@dataclass(frozen=True)
class TsConfig:
    """Knobs for one Thompson Sampling run."""

    xi: float = 0.1
    batch_size: int = 30
    m_star: int = 256
    stop_window: int = 10
    stop_tolerance: float = 0.01
    max_stages: int = 100
    seed: int = 0
    # engine-level extras (not part of the sampling semantics)
    anchor_cap: int = 256  # max anchors for the spectral feature map
    eig_cutoff: float = 1e-2  # relative eigenvalue cutoff for the engine's map
    m_floor: int = 4  # keep at least this many directions (interior maxima)
    est_cutoff: float = 1e-6  # finer cutoff for the mode-estimation map
    fit_subsample: int = 200  # max points used per hyperparameter refit
    fit_budget: int = 40  # gradient-ascent iterations per refit
    refit_dense_stages: int = 10  # refit every stage up to here ...
    refit_interval: int = 10  # ... then every this many stages
    grid_size: int = 2048  # quasi-random candidates for the inner argmax
    ascent_starts: int = 8  # local-ascent starts from the top candidates
    ascent_iters: int = 40
    record_surfaces: bool = False  # snapshot 1-d posterior-mean surfaces

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stop_window < 2:
            raise ValueError("stop_window must be >= 2")
        if self.stop_tolerance <= 0:
            raise ValueError("stop_tolerance must be positive")
        if self.m_star < 1 or self.max_stages < 1:
            raise ValueError("m_star and max_stages must be >= 1")


@dataclass(frozen=True)
class StageRecord:
    stage: int
    points: np.ndarray  # (batch, d) chosen this stage
    values: np.ndarray  # (batch,)
    origins: list  # list[Origin], branch taken per point
    argmax_point: np.ndarray | None  # first posterior-sampled point, if any
    mode_estimate: np.ndarray  # argmax of the posterior-mean surface
    hyperparams: HyperParams
    refit: bool
    n_obs: int  # total observations after this stage
    lambda_min_over_t: float
    lambda_max_over_t: float
    top_kernel_eigenvalue: float  # top eigenvalue of K/n on the anchors
    m_t: int
    surface: tuple | None = None  # (grid, mean values) when recorded


@dataclass
class RunTrace:
    domain: Domain
    config: TsConfig
    stages: list = field(default_factory=list)
    final_estimate: np.ndarray | None = None
    total_observations: int = 0


@dataclass
class EngineState:
    """Mutable loop state threaded through ts_stage."""

    data: Dataset
    hp: HyperParams
    fmap: FeatureMap
    posterior: PosteriorState
    prior: PriorSpec
    anchors: np.ndarray  # fixed quasi-random anchor grid for the feature map
    frozen_m: int | None = None  # truncation level locked in after burn-in
    # finer-truncation map used only to locate the posterior-mean argmax;
    # sampling keeps the coarse map whose spectrum stays well populated
    est_fmap: FeatureMap | None = None
    est_posterior: PosteriorState | None = None


def _compass_ascent(g, starts: np.ndarray, domain: Domain, iters: int) -> np.ndarray:
    """Monotone coordinate pattern search, vectorized over start points.

    `g` maps an (n, d) array to (n,) objective values.  Returns the refined
    points, clamped to the domain.
    """
    X = domain.clip(np.atleast_2d(starts).astype(float))
    k, d = X.shape
    fx = g(X)
    step = np.full(k, 0.05) * 1.0  # fraction of domain width
    width = domain.width
    for _ in range(iters):
        # proposals: x +/- step * width * e_i for every coordinate
        offsets = np.concatenate([np.eye(d), -np.eye(d)])  # (2d, d)
        cand = X[:, None, :] + step[:, None, None] * offsets[None, :, :] * width
        cand = domain.clip(cand.reshape(-1, d))
        fc = g(cand).reshape(k, 2 * d)
        best = np.argmax(fc, axis=1)
        best_val = fc[np.arange(k), best]
        improved = best_val > fx
        X[improved] = cand.reshape(k, 2 * d, d)[improved, best[improved]]
        fx[improved] = best_val[improved]
        step[~improved] *= 0.5
        step[improved] *= 1.2
        np.minimum(step, 0.25, out=step)
        if np.all(step < 1e-7):
            break
    return X


def _sobol_grid(domain: Domain, n: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=domain.dim, scramble=True, seed=seed)
    u = sampler.random(n)
    return qmc.scale(u, domain.lower, domain.upper)


def inner_argmax(
    fmap: FeatureMap,
    theta: np.ndarray,
    domain: Domain,
    rng: np.random.Generator,
    grid: np.ndarray | None = None,
    grid_phi: np.ndarray | None = None,
    n_grid: int = 2048,
    n_starts: int = 8,
    iters: int = 40,
) -> np.ndarray:
    """Maximize g(x) = phi(x)^T theta over the domain.

    Scores a quasi-random candidate grid, then runs bounded local ascent
    from the best candidates.  A precomputed grid (and its feature rows)
    may be passed in to share work across draws; ties break at the lowest
    candidate index.
    """
    if grid is None:
        grid = _sobol_grid(domain, n_grid, seed=int(rng.integers(2**63)))
        grid_phi = None
    if grid_phi is None:
        grid_phi = fmap(grid)
    scores = grid_phi @ theta

    def g(X):
        return fmap(X) @ theta

    k = min(n_starts, grid.shape[0])
    top = np.argpartition(-scores, k - 1)[:k]
    top = top[np.lexsort((top, -scores[top]))]  # score desc, lowest index first
    refined = _compass_ascent(g, grid[top], domain, iters)
    cand = np.vstack([grid[top[0]][None, :], refined])
    vals = g(cand)
    return cand[int(np.argmax(vals))].copy()


def _refit_due(stage: int, cfg: TsConfig) -> bool:
    if stage <= cfg.refit_dense_stages:
        return True
    return stage % cfg.refit_interval == 0


def _subsample(rng: np.random.Generator, n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))


def _dataset_subset(data: Dataset, idx: np.ndarray) -> Dataset:
    sub = Dataset(data.domain)
    pts, vals, origins = data.points, data.values, data.origins
    for i in idx:
        sub.append(pts[i], vals[i], origins[i])
    return sub


def _rebuild(
    state: EngineState, cfg: TsConfig, rng: np.random.Generator, stage: int
) -> None:
    """Refit hyperparameters, rebuild the feature map and the posterior."""
    data = state.data
    fit_idx = _subsample(rng, len(data), cfg.fit_subsample)
    fit_data = _dataset_subset(data, fit_idx) if fit_idx.size < len(data) else data
    init = state.hp if state.hp is not None else cold_start(fit_data)
    report = map_estimate(fit_data, state.prior, init, budget=cfg.fit_budget)
    state.hp = report.estimate
    # anchors are a fixed space-filling grid, so the eigenbasis moves only
    # with the hyperparameter estimates, not with the data distribution.
    # After the dense-refit burn-in the truncation level is frozen so the
    # feature dimension stays constant along the rest of the trace.
    if state.frozen_m is not None:
        # keep the positivity guard only; the frozen level fixes m_t
        state.fmap = nystrom_feature_map(state.anchors, state.hp, state.frozen_m)
    else:
        state.fmap = nystrom_feature_map(
            state.anchors, state.hp, cfg.m_star, rel_cutoff=cfg.eig_cutoff
        )
        if state.fmap.m_t < cfg.m_floor:
            # too few directions to place an interior maximum; fall back to
            # the numerical-positivity cutoff with a small fixed dimension
            state.fmap = nystrom_feature_map(
                state.anchors,
                state.hp,
                min(cfg.m_floor, state.anchors.shape[0]),
            )
        # once the refit data hits the subsample cap the hyperparameter
        # estimates stop refining systematically; lock the truncation there
        if len(data) >= cfg.fit_subsample:
            state.frozen_m = state.fmap.m_t
    state.posterior = build_posterior(data, state.fmap, state.hp.noise_sigma)
    state.est_fmap = nystrom_feature_map(
        state.anchors, state.hp, cfg.m_star, rel_cutoff=cfg.est_cutoff
    )
    if state.est_fmap.m_t == state.fmap.m_t:
        state.est_fmap = state.fmap
        state.est_posterior = state.posterior
    else:
        state.est_posterior = build_posterior(
            data, state.est_fmap, state.hp.noise_sigma
        )


def ts_stage(
    state: EngineState,
    cfg: TsConfig,
    objective,
    rng: np.random.Generator,
    stage: int,
) -> StageRecord:
    """One stage: optional refit, then a batch of draws from the posterior."""
    refit = _refit_due(stage, cfg)
    if refit:
        _rebuild(state, cfg, rng, stage)
    domain = state.data.domain

    grid = _sobol_grid(domain, cfg.grid_size, seed=int(rng.integers(2**63)))
    grid_phi = state.fmap(grid)
    est_grid_phi = (
        grid_phi if state.est_fmap is state.fmap else state.est_fmap(grid)
    )

    # Draws within the batch share the stage posterior (they are
    # conditionally independent given it); observations are appended after.
    chosen, origins = [], []
    for _ in range(cfg.batch_size):
        if rng.uniform() < cfg.xi:
            x = domain.sample_uniform(rng)
            origins.append(Origin.UNIFORM_EXPLORE)
        else:
            theta = sample_theta(state.posterior, rng)
            x = inner_argmax(
                state.fmap,
                theta,
                domain,
                rng,
                grid=grid,
                grid_phi=grid_phi,
                n_starts=cfg.ascent_starts,
                iters=cfg.ascent_iters,
            )
            origins.append(Origin.POSTERIOR_SAMPLE)
        chosen.append(np.atleast_1d(np.asarray(x, dtype=float)))

    values = []
    for x, origin in zip(chosen, origins):
        y = float(objective(x))
        values.append(y)
        state.data.append(x, y, origin)
        state.posterior = append_observation(state.posterior, state.fmap, x, y)
        if state.est_fmap is state.fmap:
            state.est_posterior = state.posterior
        else:
            state.est_posterior = append_observation(
                state.est_posterior, state.est_fmap, x, y
            )

    mode = inner_argmax(
        state.est_fmap,
        state.est_posterior.mean,
        domain,
        rng,
        grid=grid,
        grid_phi=est_grid_phi,
        n_starts=cfg.ascent_starts,
        iters=cfg.ascent_iters,
    )

    first_post = next(
        (x for x, o in zip(chosen, origins) if o is Origin.POSTERIOR_SAMPLE), None
    )
    t = len(state.data)
    eigs = state.posterior.eigenvalues_of_a()

    surface = None
    if cfg.record_surfaces and domain.dim == 1 and refit:
        gx = np.linspace(domain.lower[0], domain.upper[0], 256)
        surface = (gx, state.est_fmap(gx[:, None]) @ state.est_posterior.mean)

    return StageRecord(
        stage=stage,
        points=np.asarray(chosen),
        values=np.asarray(values),
        origins=origins,
        argmax_point=first_post,
        mode_estimate=mode,
        hyperparams=state.hp,
        refit=refit,
        n_obs=t,
        lambda_min_over_t=float(eigs[0] / t),
        lambda_max_over_t=float(eigs[-1] / t),
        top_kernel_eigenvalue=state.fmap.top_eigenvalue,
        m_t=state.fmap.m_t,
        surface=surface,
    )


def should_stop(trace: RunTrace, cfg: TsConfig) -> bool:
    """True when the recent posterior-sampled points have stopped moving.

    Requires the last `stop_window` stages to each contain at least one
    posterior-sampled point, and the componentwise standard deviation of
    those points to fall below ``stop_tolerance * (upper - lower)``.
    """
    W = cfg.stop_window
    if len(trace.stages) < W:
        return False
    window = trace.stages[-W:]
    pooled = []
    for rec in window:
        pts = [
            p
            for p, o in zip(rec.points, rec.origins)
            if o is Origin.POSTERIOR_SAMPLE
        ]
        if not pts:
            return False
        pooled.extend(pts)
    sd = np.std(np.asarray(pooled), axis=0)
    return bool(np.all(sd <= cfg.stop_tolerance * trace.domain.width))


def run(cfg: TsConfig, objective, domain: Domain) -> RunTrace:
    """Full Thompson Sampling run; deterministic given the config seed."""
    rng = np.random.default_rng(cfg.seed)
    data = Dataset(domain)
    x0 = domain.sample_uniform(rng)
    data.append(x0, float(objective(x0)), Origin.UNIFORM_EXPLORE)
    state = EngineState(
        data=data,
        hp=None,
        fmap=None,
        posterior=None,
        prior=PriorSpec.default(domain.dim),
        anchors=_sobol_grid(domain, cfg.anchor_cap, seed=int(rng.integers(2**63))),
    )
    trace = RunTrace(domain=domain, config=cfg)
    for stage in range(1, cfg.max_stages + 1):
        record = ts_stage(state, cfg, objective, rng, stage)
        trace.stages.append(record)
        if should_stop(trace, cfg):
            break
    trace.final_estimate = trace.stages[-1].mode_estimate
    trace.total_observations = len(state.data)
    return trace
