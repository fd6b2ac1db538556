"""Innovation-based covariance matching and neural/constant blending.

The model-based adaptive filter estimates the innovation covariance over a
sliding window of GNSS-update innovations and maps it into updated process
and measurement noise matrices.  The neural variants instead blend
network-regressed covariances with the tuned constants using fixed weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InnovationWindow",
    "BlendConfig",
    "EmptyWindowError",
    "innovation_covariance",
    "adapt_Q",
    "adapt_R",
    "blend_Q",
    "blend_R",
]


class EmptyWindowError(RuntimeError):
    """Raised when covariance matching is attempted before any innovation."""


@dataclass
class InnovationWindow:
    """FIFO of the last ``capacity`` innovation vectors (oldest evicted)."""

    capacity: int
    entries: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {self.capacity}")
        self.entries = deque(self.entries, maxlen=self.capacity)

    def push(self, nu: np.ndarray) -> None:
        self.entries.append(np.asarray(nu, dtype=float).reshape(-1).copy())

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) == self.capacity


@dataclass(frozen=True)
class BlendConfig:
    """Blending weights and the constant covariances they fall back to.

    ``alpha_blend`` weights the network process noise against ``q_const``;
    ``beta_blend`` does the same for the measurement noise against
    ``r_const``.  Both weights live in [0, 1]: 0 keeps the constants, 1
    trusts the network outputs fully.
    """

    alpha_blend: float
    beta_blend: float
    q_const: np.ndarray
    r_const: np.ndarray

    def __post_init__(self) -> None:
        for name in ("alpha_blend", "beta_blend"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "q_const", np.asarray(self.q_const, dtype=float))
        object.__setattr__(self, "r_const", np.asarray(self.r_const, dtype=float))


def innovation_covariance(w: InnovationWindow) -> np.ndarray:
    """Average outer product of the stored innovations.

    Divides by the current count while the window is filling, then by the
    capacity once full.  An empty window signals warm-up: callers keep their
    constant covariances until innovations arrive.
    """
    if len(w) == 0:
        raise EmptyWindowError("innovation window is empty (filter still warming up)")
    nus = np.array(w.entries)
    return nus.T @ nus / len(w)


def adapt_Q(C: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Process noise from covariance matching: K C K^T (symmetric PSD)."""
    Q = K @ C @ K.T
    return 0.5 * (Q + Q.T)


def adapt_R(C: np.ndarray, S_minus: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """Measurement noise from covariance matching: C - S^-, projected to PSD.

    ``S_minus`` is the predicted measurement covariance without R.  The raw
    difference can be indefinite; eigenvalues are clipped at ``floor``
    (m^2 per axis) to keep the filter from diverging on a hollow R.
    """
    raw = 0.5 * (C + C.T) - 0.5 * (S_minus + S_minus.T)
    vals, vecs = np.linalg.eigh(raw)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _blend(net: np.ndarray, const: np.ndarray, weight: float) -> np.ndarray:
    # endpoints short-circuit so weight 0/1 is bit-exact, not just close
    if weight == 0.0:
        return np.array(const, dtype=float)
    if weight == 1.0:
        return np.array(net, dtype=float)
    return weight * net + (1.0 - weight) * const


def blend_Q(q_net: np.ndarray, cfg: BlendConfig) -> np.ndarray:
    """alpha * Q_net + (1 - alpha) * Q_const."""
    return _blend(q_net, cfg.q_const, cfg.alpha_blend)


def blend_R(r_net: np.ndarray, cfg: BlendConfig) -> np.ndarray:
    """beta * R_net + (1 - beta) * R_const."""
    return _blend(r_net, cfg.r_const, cfg.beta_blend)
