"""Per-UE physical and virtual queue dynamics.

Queues are measured in the same unit as the per-slot service (spectral
efficiency per slot), so the backlog recursion subtracts the rate
directly. Three virtual queues certify the long-term tail constraints:
U tracks exceedance frequency, Y and W the first and second moments of
the excess above the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ARRIVAL_KINDS = ("uniform", "constant", "onoff")


@dataclass(frozen=True)
class TailParams:
    """Thresholds, budgets, and weights of the tail-control layer."""

    Q0: float = 1.5  # exceedance threshold
    eps_Q: float = 0.01  # target exceedance frequency
    zeta1: float = 0.005555555555555556  # first-moment budget for the excess
    zeta2: float = 0.006944444444444445  # second-moment budget
    alpha1: float = 1.0  # virtual-queue weights in the scheduling pressure
    alpha2: float = 1.0
    alpha3: float = 1.0
    A_max: float = 2.0  # arrival bound per slot
    arrival_kind: str = "uniform"  # 'uniform' | 'constant' | 'onoff'
    onoff_p: float = 0.5  # on-probability for the 'onoff' process

    def __post_init__(self):
        if self.Q0 <= 0:
            raise ValueError("threshold must be positive")
        if not 0.0 < self.eps_Q < 1.0:
            raise ValueError("target exceedance frequency must be in (0, 1)")
        if min(self.zeta1, self.zeta2) < 0:
            raise ValueError("moment budgets must be nonnegative")
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("virtual-queue weights must be nonnegative")
        if self.A_max < 0:
            raise ValueError("arrival bound must be nonnegative")
        if self.arrival_kind not in ARRIVAL_KINDS:
            raise ValueError(f"arrival kind must be one of {ARRIVAL_KINDS}")


def default_moment_budgets(eps_Q: float, prior_xi: float = 0.1, prior_sigma: float = 0.5) -> tuple[float, float]:
    """Budgets consistent with a generalized-Pareto tail prior at eps_Q.

    zeta1 = eps_Q * sigma / (1 - xi), zeta2 = eps_Q * 2 sigma^2 / ((1 - xi)(1 - 2 xi)).
    """
    m1 = prior_sigma / (1.0 - prior_xi)
    m2 = 2.0 * prior_sigma**2 / ((1.0 - prior_xi) * (1.0 - 2.0 * prior_xi))
    return eps_Q * m1, eps_Q * m2


@dataclass(frozen=True)
class QueueState:
    """Physical backlog Q and virtual queues U, Y, W, all nonnegative."""

    Q: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    W: np.ndarray

    @classmethod
    def zeros(cls, K: int) -> "QueueState":
        return cls(Q=np.zeros(K), U=np.zeros(K), Y=np.zeros(K), W=np.zeros(K))

    def z(self, Q0: float) -> np.ndarray:
        """Current excess above the threshold."""
        return exceedance(self.Q, Q0)


def draw_arrivals(rng: np.random.Generator, K: int, A_max: float, kind: str = "uniform", onoff_p: float = 0.5):
    """Exogenous per-UE arrivals for one slot, bounded by A_max."""
    if A_max < 0:
        raise ValueError("arrival bound must be nonnegative")
    if kind == "uniform":
        return rng.uniform(0.0, A_max, size=K)
    if kind == "constant":
        return np.full(K, A_max / 2.0)
    if kind == "onoff":
        return A_max * (rng.random(K) < onoff_p).astype(float)
    raise ValueError(f"arrival kind must be one of {ARRIVAL_KINDS}")


def advance_queue(Q, R_hat, A):
    """Backlog recursion: serve first, then add arrivals."""
    return np.maximum(np.asarray(Q, dtype=float) - R_hat, 0.0) + A


def exceedance(Q, Q0: float):
    """Excess above the threshold, clamped at zero."""
    return np.maximum(np.asarray(Q, dtype=float) - Q0, 0.0)


def update_virtual_queues(state: QueueState, params: TailParams) -> QueueState:
    """One-step virtual-queue updates driven by the current backlog.

    Uses the backlog as observed this slot (before service/arrivals):
    U accumulates threshold crossings beyond the frequency target, Y and
    W the excess and squared excess beyond their budgets.
    """
    Z = state.z(params.Q0)
    U = np.maximum(state.U + (state.Q >= params.Q0) - params.eps_Q, 0.0)
    Y = np.maximum(state.Y + Z - params.zeta1, 0.0)
    W = np.maximum(state.W + Z**2 - params.zeta2, 0.0)
    return replace(state, U=U, Y=Y, W=W)


def theta_weights(state: QueueState, params: TailParams, alphas=None) -> np.ndarray:
    """Per-UE scheduling pressure: backlog plus weighted virtual queues.

    `alphas` overrides the weights from `params` (the tail-unaware
    baseline passes zeros, reducing the pressure to the backlog alone).
    """
    a1, a2, a3 = alphas if alphas is not None else (params.alpha1, params.alpha2, params.alpha3)
    if min(a1, a2, a3) < 0:
        raise ValueError("virtual-queue weights must be nonnegative")
    return state.Q + a1 * state.U + a2 * state.Y + a3 * state.W
