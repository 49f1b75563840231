"""Bayesian linear-model posterior over feature weights, and exact sampling.

With design Phi (rows phi(x_i)) and responses y, the weight posterior is
N(A^-1 Phi^T y, sigma^2 A^-1) where A = Phi^T Phi + sigma^2 I.  A is kept
as a lower Cholesky factor; appending one observation is a rank-1 update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import NumericError
from .kernel import Domain, FeatureMap


class Origin(enum.Enum):
    """How a data point was chosen."""

    UNIFORM_EXPLORE = "uniform_explore"
    POSTERIOR_SAMPLE = "posterior_sample"


class Dataset:
    """Ordered, append-only observation history with per-point provenance."""

    def __init__(self, domain: Domain):
        self.domain = domain
        self._points: list[np.ndarray] = []
        self._values: list[float] = []
        self._origins: list[Origin] = []

    def __len__(self) -> int:
        return len(self._points)

    def append(self, x, y: float, origin: Origin) -> None:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.domain.contains(x):
            raise ValueError(f"point {x} outside domain")
        self._points.append(x.copy())
        self._values.append(float(y))
        self._origins.append(origin)

    @property
    def points(self) -> np.ndarray:
        if not self._points:
            return np.empty((0, self.domain.dim))
        return np.asarray(self._points)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self._values, dtype=float)

    @property
    def origins(self) -> list[Origin]:
        return list(self._origins)


@dataclass(frozen=True)
class PosteriorState:
    """Immutable posterior snapshot; updates return new values."""

    phi_design: np.ndarray  # (t, m)
    responses: np.ndarray  # (t,)
    chol_lower: np.ndarray  # lower Cholesky factor of A
    phi_t_y: np.ndarray  # Phi^T y
    mean: np.ndarray  # A^-1 Phi^T y
    sigma: float

    @property
    def m_t(self) -> int:
        return self.mean.size

    @property
    def n_obs(self) -> int:
        return self.phi_design.shape[0]

    def eigenvalues_of_a(self) -> np.ndarray:
        """Ascending eigenvalues of A, from the factor's singular values."""
        return np.sort(np.linalg.svd(self.chol_lower, compute_uv=False)) ** 2


def build_posterior(data: Dataset, fmap: FeatureMap, sigma: float) -> PosteriorState:
    """Factorize A = Phi^T Phi + sigma^2 I and solve for the posterior mean."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    m = fmap.m_t
    if len(data) == 0:
        phi = np.empty((0, m))
        y = np.empty(0)
    else:
        phi = fmap(data.points)
        y = data.values
    A = phi.T @ phi + sigma**2 * np.eye(m)
    try:
        L = cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - A is PD by design
        raise NumericError(
            f"Cholesky failed on A ({m}x{m}, sigma={sigma}): {exc}"
        ) from exc
    b = phi.T @ y
    mean = cho_solve((L, True), b)
    return PosteriorState(
        phi_design=phi,
        responses=y,
        chol_lower=L,
        phi_t_y=b,
        mean=mean,
        sigma=float(sigma),
    )


def _chol_update(L: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of L L^T + v v^T (rank-1 update)."""
    L = L.copy()
    v = v.astype(float).copy()
    m = v.size
    for k in range(m):
        r = np.hypot(L[k, k], v[k])
        c = r / L[k, k]
        s = v[k] / L[k, k]
        L[k, k] = r
        if k + 1 < m:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * v[k + 1 :]) / c
            v[k + 1 :] = c * v[k + 1 :] - s * L[k + 1 :, k]
    return L


def append_observation(
    state: PosteriorState, fmap: FeatureMap, x, y: float
) -> PosteriorState:
    """New posterior with one extra observation, via rank-1 Cholesky update."""
    phi_x = fmap(np.atleast_1d(np.asarray(x, dtype=float)))
    L = _chol_update(state.chol_lower, phi_x)
    b = state.phi_t_y + phi_x * y
    mean = cho_solve((L, True), b)
    return PosteriorState(
        phi_design=np.vstack([state.phi_design, phi_x]),
        responses=np.append(state.responses, y),
        chol_lower=L,
        phi_t_y=b,
        mean=mean,
        sigma=state.sigma,
    )


def sample_theta(state: PosteriorState, rng: np.random.Generator) -> np.ndarray:
    """One exact draw from N(mean, sigma^2 A^-1)."""
    z = rng.standard_normal(state.m_t)
    return state.mean + state.sigma * solve_triangular(
        state.chol_lower.T, z, lower=False
    )


def posterior_predict(
    state: PosteriorState,
    fmap: FeatureMap,
    x,
    domain: Domain | None = None,
) -> tuple[float, float]:
    """Predictive mean and variance of phi(x)^T theta at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if domain is not None and not domain.contains(x):
        raise ValueError(f"point {x} outside domain")
    phi_x = fmap(x)
    w = solve_triangular(state.chol_lower, phi_x, lower=True)
    mean = float(phi_x @ state.mean)
    var = float(state.sigma**2 * (w @ w))
    return mean, max(var, 0.0)


def predict_batch(
    state: PosteriorState, phi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances for precomputed feature rows (n, m)."""
    W = solve_triangular(state.chol_lower, phi.T, lower=True)
    means = phi @ state.mean
    variances = state.sigma**2 * np.sum(W * W, axis=0)
    return means, np.maximum(variances, 0.0)
