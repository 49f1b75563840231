"""MAP estimation of kernel hyperparameters and noise level.

The objective is the Gaussian log marginal likelihood plus a weakly
informative normal prior on the log-parameters (log zeta, log l_1..d,
log sigma), maximized by gradient ascent with Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .errors import NumericError
from .kernel import HyperParams
from .posterior import Dataset

GRAD_TOL = 1e-5
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal priors on each log-hyperparameter.

    Order: (log zeta, log l_1, ..., log l_d, log sigma).
    """

    log_normal_means: np.ndarray
    log_normal_sds: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.log_normal_means, dtype=float))
        sd = np.atleast_1d(np.asarray(self.log_normal_sds, dtype=float))
        object.__setattr__(self, "log_normal_means", mu)
        object.__setattr__(self, "log_normal_sds", sd)
        if mu.shape != sd.shape or mu.ndim != 1:
            raise ValueError("prior mean and sd vectors must match in length")
        if not np.all(sd > 0):
            raise ValueError("prior sds must be positive")

    @classmethod
    def default(cls, dim: int, sd: float = 1.5) -> "PriorSpec":
        n = dim + 2
        return cls(np.zeros(n), np.full(n, sd))

    def check_dim(self, dim: int) -> None:
        if self.log_normal_means.size != dim + 2:
            raise ValueError(
                f"prior has {self.log_normal_means.size} components, "
                f"expected {dim + 2} for a {dim}-dimensional domain"
            )


@dataclass(frozen=True)
class FitReport:
    estimate: HyperParams
    final_objective: float
    gradient_norm: float
    iterations: int
    converged: bool


def _pack(hp: HyperParams) -> np.ndarray:
    return np.log(np.concatenate(([hp.zeta], hp.length_scales, [hp.noise_sigma])))


def _unpack(psi: np.ndarray) -> HyperParams:
    v = np.exp(psi)
    return HyperParams(zeta=v[0], length_scales=v[1:-1], noise_sigma=v[-1])


def _chol_with_jitter(M: np.ndarray, scale: float) -> np.ndarray:
    for j in _JITTERS:
        try:
            return cholesky(M + j * scale * np.eye(M.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericError("Cholesky failed after jitter escalation")


def _sq_diffs(X: np.ndarray) -> np.ndarray:
    # X is (n, d); returns the (d, n, n) per-coordinate squared differences
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


def _lml_terms(X: np.ndarray, y: np.ndarray, hp: HyperParams):
    n = X.shape[0]
    z = X / hp.length_scales
    sq = (
        np.sum(z**2, axis=1)[:, None]
        + np.sum(z**2, axis=1)[None, :]
        - 2.0 * z @ z.T
    )
    np.maximum(sq, 0.0, out=sq)
    K = hp.zeta**2 * np.exp(-0.5 * sq)
    M = K + hp.noise_sigma**2 * np.eye(n)
    L = _chol_with_jitter(M, hp.zeta**2)
    alpha = cho_solve((L, True), y)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    lml = -0.5 * logdet - 0.5 * float(y @ alpha)
    return K, L, alpha, lml


def log_marginal_likelihood(data: Dataset, hp: HyperParams) -> float:
    """Gaussian log marginal likelihood (additive constant dropped)."""
    if len(data) == 0:
        raise ValueError("log_marginal_likelihood requires nonempty data")
    _, _, _, lml = _lml_terms(data.points, data.values, hp)
    return lml


def lml_gradient(data: Dataset, hp: HyperParams) -> np.ndarray:
    """Gradient of the log marginal likelihood in log-parameterization.

    Component order matches PriorSpec: (log zeta, log l_1..d, log sigma).
    """
    if len(data) == 0:
        raise ValueError("lml_gradient requires nonempty data")
    X = data.points
    y = data.values
    n, d = X.shape
    K, L, alpha, _ = _lml_terms(X, y, hp)
    Minv = cho_solve((L, True), np.eye(n))

    def directional(dM: np.ndarray) -> float:
        return 0.5 * float(alpha @ dM @ alpha) - 0.5 * float(np.sum(Minv * dM))

    grad = np.empty(d + 2)
    grad[0] = directional(2.0 * K)
    diffs = _sq_diffs(X)
    for i in range(d):
        grad[1 + i] = directional(K * (diffs[i] / hp.length_scales[i] ** 2))
    # d(sigma^2 I)/d log sigma = 2 sigma^2 I
    s2 = 2.0 * hp.noise_sigma**2
    grad[d + 1] = 0.5 * s2 * float(alpha @ alpha) - 0.5 * s2 * float(
        np.trace(Minv)
    )
    return grad


def _log_prior_and_grad(psi: np.ndarray, prior: PriorSpec):
    r = (psi - prior.log_normal_means) / prior.log_normal_sds
    return -0.5 * float(r @ r), -r / prior.log_normal_sds


def map_estimate(
    data: Dataset,
    prior: PriorSpec,
    init: HyperParams,
    budget: int = 100,
) -> FitReport:
    """Gradient ascent with Armijo backtracking on lml + log prior."""
    if len(data) == 0:
        raise ValueError("map_estimate requires nonempty data")
    prior.check_dim(init.dim)

    def objective(psi):
        hp = _unpack(psi)
        lml = log_marginal_likelihood(data, hp)
        lp, _ = _log_prior_and_grad(psi, prior)
        return lml + lp

    def gradient(psi):
        hp = _unpack(psi)
        _, gp = _log_prior_and_grad(psi, prior)
        return lml_gradient(data, hp) + gp

    psi = _pack(init)
    obj = objective(psi)
    step = 1.0
    iterations = 0
    grad = gradient(psi)
    for iterations in range(1, budget + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= GRAD_TOL:
            break
        accepted = False
        alpha = min(step * 2.0, 1.0, 10.0 / gnorm)
        for _ in range(40):
            # clamp log-params to a sane range to keep exp() finite
            trial = np.clip(psi + alpha * grad, -12.0, 12.0)
            try:
                trial_obj = objective(trial)
            except (NumericError, ValueError, FloatingPointError, OverflowError):
                trial_obj = -np.inf
            if trial_obj >= obj + 1e-4 * alpha * gnorm**2:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        psi, obj, step = trial, trial_obj, alpha
        grad = gradient(psi)
    gnorm = float(np.linalg.norm(grad))
    return FitReport(
        estimate=_unpack(psi),
        final_objective=obj,
        gradient_norm=gnorm,
        iterations=iterations,
        converged=gnorm <= GRAD_TOL,
    )


def cold_start(data: Dataset) -> HyperParams:
    """Default initialization from the data scale and domain widths."""
    y = data.values
    scale = float(np.std(y))
    if not scale > 0:
        scale = max(abs(float(np.mean(y))), 1.0)
    return HyperParams(
        zeta=scale,
        length_scales=data.domain.width / 4.0,
        noise_sigma=0.1 * scale,
    )
