"""Scaled unscented transform and the generic UKF predict/update steps.

All functions are pure: they take immutable inputs and return fresh arrays,
so a filter loop can be replayed or parallelized without shared state.
Covariances are re-symmetrized after every operation to keep Cholesky
factorizations healthy over long runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "UtParams",
    "SigmaWeights",
    "GaussianState",
    "SigmaPointSet",
    "UpdateResult",
    "NonPositiveDefiniteError",
    "compute_weights",
    "generate_sigma_points",
    "unscented_transform",
    "predict",
    "update",
    "symmetrize",
]


class NonPositiveDefiniteError(ValueError):
    """Covariance could not be factorized even after jitter."""


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2, guarding against floating-point asymmetry drift."""
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class UtParams:
    """Scaled-UT tuning parameters for an n-dimensional state.

    ``alpha_ut`` controls the spread of the sigma points, ``beta_ut`` folds in
    prior knowledge of the distribution (2 is optimal for Gaussians), and
    ``kappa_ut`` is a secondary scaling term.  The ``_ut`` suffix keeps these
    apart from the covariance blending weights used elsewhere in the package.

    ``classic_center_weight`` selects the center covariance weight convention:
    the default uses ``wc0 = lambda/(n+lambda) + (1 + alpha^2 + beta)``; the
    classic scaled-UT convention replaces the ``+ alpha^2`` with ``- alpha^2``.
    For typical alpha ~ 1e-3 the two differ by 2e-6 and both are supported.
    """

    alpha_ut: float
    beta_ut: float
    kappa_ut: float
    n: int
    classic_center_weight: bool = False

    def __post_init__(self) -> None:
        if self.alpha_ut <= 0:
            raise ValueError(f"alpha_ut must be positive, got {self.alpha_ut}")
        if self.n < 1:
            raise ValueError(f"state dimension must be >= 1, got {self.n}")
        if self.n + self.lam <= 0:
            raise ValueError(
                f"degenerate scaling: n + lambda = {self.n + self.lam} <= 0"
            )

    @property
    def lam(self) -> float:
        """Composite scaling lambda = alpha^2 (n + kappa) - n."""
        return self.alpha_ut**2 * (self.n + self.kappa_ut) - self.n


@dataclass(frozen=True)
class SigmaWeights:
    """Mean and covariance weights for 2n+1 sigma points."""

    wm: np.ndarray
    wc: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return (len(self.wm) - 1) // 2


@dataclass
class GaussianState:
    """Gaussian belief: mean vector and symmetric PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(
                f"covariance shape {self.cov.shape} does not match mean dim {n}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SigmaPointSet:
    """2n+1 sigma points stored as rows of ``points``."""

    points: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[1]


@dataclass
class UpdateResult:
    """Posterior state plus the update internals consumed by noise adaptation."""

    state: GaussianState
    innovation: np.ndarray
    innovation_cov: np.ndarray  # S, includes the measurement noise R
    gain: np.ndarray
    degenerate: bool = False


def compute_weights(p: UtParams) -> SigmaWeights:
    """Mean/covariance weights of the scaled unscented transform.

    wm[0] = lam/(n+lam), wm[i] = wc[i] = 1/(2(n+lam)) for i >= 1, and
    wc[0] = wm[0] + (1 + alpha^2 + beta) (or 1 - alpha^2 + beta with the
    classic convention flag).
    """
    n, lam = p.n, p.lam
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wm[0] = lam / (n + lam)
    wc = wm.copy()
    a2 = -p.alpha_ut**2 if p.classic_center_weight else p.alpha_ut**2
    wc[0] = wm[0] + (1.0 + a2 + p.beta_ut)
    return SigmaWeights(wm=wm, wc=wc, lam=lam)


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with trace-scaled jitter.

    A zero matrix gets an absolute jitter floor so that degenerate (spreadless)
    beliefs still yield sigma points collapsed onto the mean.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    n = cov.shape[0]
    tr = float(np.trace(cov))
    eps = 1e-9 * tr / n if tr > 0 else 1e-12
    try:
        return np.linalg.cholesky(cov + eps * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError(
            f"covariance not positive definite (trace={tr:.3e}, jitter={eps:.3e})"
        ) from exc


def generate_sigma_points(s: GaussianState, w: SigmaWeights) -> SigmaPointSet:
    """Sigma points mean, mean +/- columns of chol((n+lam) * cov)."""
    n = s.dim
    if w.n != n:
        raise ValueError(f"weights are for dim {w.n}, state has dim {n}")
    scaled = (n + w.lam) * symmetrize(s.cov)
    L = _cholesky_with_jitter(scaled)
    pts = np.empty((2 * n + 1, n))
    pts[0] = s.mean
    pts[1 : n + 1] = s.mean + L.T
    pts[n + 1 :] = s.mean - L.T
    return SigmaPointSet(points=pts)


def unscented_transform(
    pts: SigmaPointSet,
    w: SigmaWeights,
    g: Callable[[np.ndarray], np.ndarray],
    additive_cov: np.ndarray,
) -> GaussianState:
    """Propagate sigma points through ``g`` and recover mean and covariance.

    ``additive_cov`` is the additive noise of the transformed space (m x m).
    """
    ys = np.array([np.asarray(g(x), dtype=float).reshape(-1) for x in pts.points])
    m = ys.shape[1]
    additive_cov = np.asarray(additive_cov, dtype=float)
    if additive_cov.shape != (m, m):
        raise ValueError(
            f"additive_cov shape {additive_cov.shape} does not match output dim {m}"
        )
    mean = w.wm @ ys
    dev = ys - mean
    cov = (w.wc * dev.T) @ dev + additive_cov
    return GaussianState(mean=mean, cov=symmetrize(cov))


def predict(
    s: GaussianState,
    f: Callable[[np.ndarray], np.ndarray],
    Q: np.ndarray,
    w: SigmaWeights,
) -> GaussianState:
    """Time update: sigma points of ``s`` through the process model, plus Q."""
    pts = generate_sigma_points(s, w)
    return unscented_transform(pts, w, f, Q)


def update(
    pred: GaussianState,
    h: Callable[[np.ndarray], np.ndarray],
    z: np.ndarray,
    R: np.ndarray,
    w: SigmaWeights,
) -> UpdateResult:
    """Measurement update from a fresh sigma-point set of the prediction.

    Returns the posterior together with the innovation, its covariance S and
    the Kalman gain K, which downstream covariance adaptation consumes.  A
    singular S falls back to the pseudo-inverse and flags the result.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    pts = generate_sigma_points(pred, w)
    zs = np.array([np.asarray(h(x), dtype=float).reshape(-1) for x in pts.points])
    m = zs.shape[1]
    if z.shape[0] != m:
        raise ValueError(f"measurement dim {z.shape[0]} != model output dim {m}")
    R = np.asarray(R, dtype=float)
    if R.shape != (m, m):
        raise ValueError(f"R shape {R.shape} does not match measurement dim {m}")

    z_hat = w.wm @ zs
    dz = zs - z_hat
    S = symmetrize((w.wc * dz.T) @ dz + R)
    dx = pts.points - pred.mean
    P_xz = (w.wc * dx.T) @ dz

    s_eig = np.linalg.eigvalsh(S)
    degenerate = s_eig[-1] <= 0 or s_eig[0] <= s_eig[-1] * 1e-12
    if degenerate:
        warnings.warn("singular innovation covariance; using pseudo-inverse")
        K = P_xz @ np.linalg.pinv(S)
    else:
        K = np.linalg.solve(S.T, P_xz.T).T

    nu = z - z_hat
    mean = pred.mean + K @ nu
    cov = symmetrize(pred.cov - K @ S @ K.T)
    return UpdateResult(
        state=GaussianState(mean=mean, cov=cov),
        innovation=nu,
        innovation_cov=S,
        gain=K,
        degenerate=degenerate,
    )
