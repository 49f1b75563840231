"""RBF kernel evaluation, Gram matrices, and truncated feature maps.

A feature map phi sends a point x to a vector of length ``m_t`` such that
``phi(x) . phi(x')`` approximates the kernel ``k(x, x')``.  Two backends are
provided: a Nystrom map built from the spectral decomposition of an anchor
Gram matrix, and a random-Fourier map for shift-invariant kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateKernelError

# Relative eigenvalue threshold standing in for "strictly positive":
# eigensolvers never return exact zeros on rank-deficient Gram matrices.
EIG_POSITIVITY_CUTOFF = 1e-10


@dataclass(frozen=True)
class HyperParams:
    """Kernel amplitude, per-dimension length scales, and noise level.

    All entries must be strictly positive.
    """

    zeta: float
    length_scales: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if not (self.zeta > 0):
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not (self.noise_sigma > 0):
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0):
            raise ValueError("length_scales must be a vector of positive reals")

    @property
    def dim(self) -> int:
        return self.length_scales.size


@dataclass(frozen=True)
class Domain:
    """Compact box in R^d given by componentwise lower/upper bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("domain requires lower[i] < upper[i] for all i")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sample_uniform(self, rng: np.random.Generator, n: int | None = None):
        """One point (n=None) or an (n, d) array of uniform points."""
        if n is None:
            return rng.uniform(self.lower, self.upper)
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


def _as_points(x) -> np.ndarray:
    """Coerce to a 2-d (n, d) array of points."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"points must be at most 2-d, got shape {a.shape}")
    return a


def rbf_kernel(x, x_prime, hp: HyperParams) -> float:
    """Anisotropic Gaussian RBF kernel between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != xp.shape or x.size != hp.dim:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x' {xp.shape}, "
            f"length_scales {hp.dim}"
        )
    z = (x - xp) / hp.length_scales
    return float(hp.zeta**2 * np.exp(-0.5 * np.dot(z, z)))


def rbf_cross(X, Z, hp: HyperParams) -> np.ndarray:
    """Kernel matrix between two point sets, shape (len(X), len(Z))."""
    X = _as_points(X) / hp.length_scales
    Z = _as_points(Z) / hp.length_scales
    if X.shape[1] != Z.shape[1]:
        raise ValueError("point sets have inconsistent dimensions")
    sq = (
        np.sum(X**2, axis=1)[:, None]
        + np.sum(Z**2, axis=1)[None, :]
        - 2.0 * X @ Z.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.zeta**2 * np.exp(-0.5 * sq)


def gram_matrix(points, hp: HyperParams, jitter: float = 0.0) -> np.ndarray:
    """Symmetric kernel matrix of a point set, with `jitter` on the diagonal."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("gram_matrix requires a nonempty point list")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = rbf_cross(pts, pts, hp)
    K = 0.5 * (K + K.T)
    if jitter > 0:
        K[np.diag_indices_from(K)] += jitter
    return K


def truncation_level(
    eigenvalues, m_star: int, rel_cutoff: float = EIG_POSITIVITY_CUTOFF
) -> int:
    """Number of eigenpairs to keep: min(m_star, count above the cutoff).

    `eigenvalues` must be sorted non-increasing; the positivity cutoff is
    ``rel_cutoff * eigenvalues[0]``.
    """
    ev = np.atleast_1d(np.asarray(eigenvalues, dtype=float))
    if m_star < 1:
        raise ValueError("m_star must be >= 1")
    if ev.size == 0:
        raise DegenerateKernelError("empty eigenvalue sequence")
    if np.any(np.diff(ev) > 1e-12 * max(abs(ev[0]), 1.0)):
        raise ValueError("eigenvalues must be sorted non-increasing")
    if ev[0] <= 0:
        raise DegenerateKernelError("no strictly positive eigenvalues")
    n_pos = int(np.sum(ev > rel_cutoff * ev[0]))
    if n_pos == 0:
        raise DegenerateKernelError("all eigenvalues below the positivity cutoff")
    return min(int(m_star), n_pos)


@dataclass(frozen=True)
class FeatureMap:
    """Truncated feature map x -> phi(x) in R^{m_t}.

    `eigenvalues` are the kept spectral weights (strictly positive,
    non-increasing); for the random-Fourier backend they are the uniform
    weights ``2*zeta^2/m`` of the cosine features.
    """

    m_t: int
    backend: str  # "nystrom" | "random_fourier" | "analytic"
    hp: HyperParams
    eigenvalues: np.ndarray
    # nystrom: anchors (n, d) and projection (n, m_t); rff: W (m, d) and b (m,)
    _mat_a: np.ndarray = field(repr=False, default=None)
    _mat_b: np.ndarray = field(repr=False, default=None)

    def __call__(self, x) -> np.ndarray:
        """Feature vector(s): (m_t,) for a single point, (n, m_t) for a batch."""
        single = np.asarray(x).ndim <= 1
        X = _as_points(x)
        if self.backend == "nystrom":
            out = rbf_cross(X, self._mat_a, self.hp) @ self._mat_b
        elif self.backend == "random_fourier":
            proj = X @ self._mat_a.T + self._mat_b
            out = np.sqrt(2.0 * self.hp.zeta**2 / self.m_t) * np.cos(proj)
        else:
            raise NotImplementedError(f"backend {self.backend!r}")
        return out[0] if single else out

    @property
    def top_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])


def nystrom_feature_map(
    anchors,
    hp: HyperParams,
    m_star: int,
    rel_cutoff: float = EIG_POSITIVITY_CUTOFF,
    jitter: float = 0.0,
) -> FeatureMap:
    """Feature map from the spectral decomposition of the anchor Gram matrix.

    Eigendecomposes K/n over the n anchors and keeps the top
    ``truncation_level`` pairs.  The i-th feature is the Nystrom
    out-of-sample extension of the i-th empirical eigenfunction, scaled so
    that on-anchor reconstruction ``phi(x_j).phi(x_k) = K_jk`` is exact when
    every numerically positive eigenpair is kept.
    """
    pts = _as_points(anchors)
    n = pts.shape[0]
    K = gram_matrix(pts, hp, jitter=jitter)
    evals, evecs = np.linalg.eigh(K / n)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    m_t = truncation_level(evals, m_star, rel_cutoff=rel_cutoff)
    lam = evals[:m_t]  # eigenvalues of K/n
    U = evecs[:, :m_t]
    # phi(x) = diag(1/sqrt(n*lam)) U^T k(anchors, x); on anchors this gives
    # U sqrt(Lambda_K), whose Gram is exactly K at full numerical rank.
    proj = U / np.sqrt(n * lam)
    return FeatureMap(
        m_t=m_t,
        backend="nystrom",
        hp=hp,
        eigenvalues=lam.copy(),
        _mat_a=pts.copy(),
        _mat_b=proj,
    )


def rff_feature_map(hp: HyperParams, m: int, rng: np.random.Generator) -> FeatureMap:
    """Random-Fourier feature map: phi(x) = sqrt(2 zeta^2 / m) cos(W x + b).

    Rows of W are drawn from the RBF spectral density N(0, diag(1/l_i^2));
    b is uniform on [0, 2 pi).  E[phi(x).phi(x')] equals the kernel.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    W = rng.standard_normal((m, hp.dim)) / hp.length_scales
    b = rng.uniform(0.0, 2.0 * np.pi, size=m)
    weights = np.full(m, 2.0 * hp.zeta**2 / m)
    return FeatureMap(
        m_t=m,
        backend="random_fourier",
        hp=hp,
        eigenvalues=weights,
        _mat_a=W,
        _mat_b=b,
    )
