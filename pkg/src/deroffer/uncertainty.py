"""Budgeted DER availability uncertainty and Markov-chain price scenarios.

The uncertainty set is one-sided (downward PV deviation): realizations are
xi = xi_bar - xi_hat * z with z in [0,1]^p and sum(z) <= gamma.  The budget
is integer so the vertex list is exactly the binary z patterns.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class CapacityError(RuntimeError):
    """Vertex enumeration would exceed the configured cap.

    Callers should switch to the MILP subproblem path instead of enumerating.
    """


@dataclass(frozen=True)
class BudgetedUncertaintySet:
    xi_bar: np.ndarray  # nominal availability per hour (MW)
    xi_hat: np.ndarray  # maximal downward deviation per hour (MW), >= 0
    gamma: int

    def __post_init__(self):
        object.__setattr__(self, "xi_bar", np.asarray(self.xi_bar, dtype=float))
        object.__setattr__(self, "xi_hat", np.asarray(self.xi_hat, dtype=float))
        if self.xi_bar.shape != self.xi_hat.shape or self.xi_bar.ndim != 1:
            raise ValueError("xi_bar and xi_hat must be 1-d vectors of equal length")
        if np.any(self.xi_hat < 0):
            raise ValueError("xi_hat must be nonnegative")
        if np.any(self.xi_bar - self.xi_hat < -1e-12):
            raise ValueError("xi_bar - xi_hat must stay nonnegative componentwise")
        if not isinstance(self.gamma, (int, np.integer)) or isinstance(self.gamma, bool):
            raise ValueError("gamma must be an integer (fractional budgets unsupported)")
        if not 0 <= self.gamma <= self.dim:
            raise ValueError(f"gamma must lie in [0, {self.dim}], got {self.gamma}")

    @property
    def dim(self) -> int:
        return self.xi_bar.size

    def support(self) -> np.ndarray:
        """Hours with a nonzero deviation; only these multiply the vertex set."""
        return np.nonzero(self.xi_hat > 0)[0]

    def vertex_count(self) -> int:
        p_star = self.support().size
        return sum(math.comb(p_star, j) for j in range(min(self.gamma, p_star) + 1))

    def realization(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.xi_bar - self.xi_hat * z

    def contains(self, xi, tol: float = 1e-9) -> bool:
        """Membership via the closed-form z recovery on the support."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != self.xi_bar.shape:
            return False
        dev = self.xi_bar - xi
        z = np.zeros(self.dim)
        sup = self.xi_hat > 0
        z[sup] = dev[sup] / self.xi_hat[sup]
        if np.any(np.abs(dev[~sup]) > tol):
            return False
        if np.any(z < -tol) or np.any(z > 1 + tol):
            return False
        return float(np.sum(z)) <= self.gamma + tol

    def enumerate_extreme_points(self, cap: int = 10**6) -> list[np.ndarray]:
        """All vertices xi_bar - xi_hat*z, z binary with sum(z) <= gamma.

        Ordered by (deviation count, lexicographic support); deterministic.
        Raises CapacityError when the count exceeds ``cap``.
        """
        count = self.vertex_count()
        if count > cap:
            raise CapacityError(
                f"{count} extreme points exceed the cap of {cap}; "
                "use the dualized MILP subproblem instead"
            )
        sup = list(self.support())
        points = []
        for j in range(min(self.gamma, len(sup)) + 1):
            for combo in itertools.combinations(sup, j):
                z = np.zeros(self.dim)
                z[list(combo)] = 1.0
                points.append(self.realization(z))
        return points


@dataclass(frozen=True)
class MarkovPriceChain:
    """Homogeneous finite-state chain over ascending price levels ($/MWh)."""

    states: np.ndarray
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        k = self.states.size
        if np.any(np.diff(self.states) <= 0):
            raise ValueError("price states must be strictly ascending")
        if self.transition.shape != (k, k):
            raise ValueError("transition matrix shape mismatch")
        if np.any(self.transition < 0) or np.any(self.initial < 0):
            raise ValueError("probabilities must be nonnegative")
        if np.any(np.abs(self.transition.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")
        if abs(self.initial.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution must sum to 1")

    @property
    def num_states(self) -> int:
        return self.states.size

    def sample_states(self, horizon: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """(count, horizon) array of state indices."""
        cum_init = np.cumsum(self.initial)
        cum_tr = np.cumsum(self.transition, axis=1)
        out = np.empty((count, horizon), dtype=np.int64)
        u = rng.random((count, horizon))
        out[:, 0] = np.searchsorted(cum_init, u[:, 0], side="right")
        for t in range(1, horizon):
            rows = cum_tr[out[:, t - 1]]
            out[:, t] = (u[:, t][:, None] > rows).sum(axis=1)
        return np.clip(out, 0, self.num_states - 1)


@dataclass(frozen=True)
class PriceScenarioSet:
    """Weighted day-ahead price trajectories; weights sum to one."""

    trajectories: np.ndarray  # (count, T)
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "trajectories", np.asarray(self.trajectories, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.trajectories.ndim != 2:
            raise ValueError("trajectories must be a (count, T) array")
        if self.weights.shape != (self.trajectories.shape[0],):
            raise ValueError("one weight per trajectory required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @property
    def count(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


def sample_trajectories(
    chain: MarkovPriceChain, horizon: int, count: int, seed: int
) -> PriceScenarioSet:
    """Sample ``count`` price trajectories with uniform weights 1/count."""
    rng = np.random.default_rng(seed)
    idx = chain.sample_states(horizon, count, rng)
    return PriceScenarioSet(
        trajectories=chain.states[idx],
        weights=np.full(count, 1.0 / count),
    )


def fit_chain(prices, num_states: int = 5, smoothing: float = 1e-3) -> MarkovPriceChain:
    """Fit a price chain to an hourly series by quantile binning.

    States are the bin means; transitions are Laplace-smoothed empirical
    frequencies so every row stays strictly stochastic.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.size < num_states + 1:
        raise ValueError("price series too short to fit a chain")
    qs = np.quantile(prices, np.linspace(0, 1, num_states + 1))
    edges = np.unique(qs[1:-1])
    labels = np.searchsorted(edges, prices, side="right")
    k = edges.size + 1
    states = np.array([prices[labels == s].mean() for s in range(k)])
    counts = np.full((k, k), smoothing)
    for a, b in zip(labels[:-1], labels[1:]):
        counts[a, b] += 1.0
    transition = counts / counts.sum(axis=1, keepdims=True)
    initial = np.bincount(labels, minlength=k).astype(float)
    initial /= initial.sum()
    # strictly ascending states can collapse when bins tie; nudge apart
    for i in range(1, k):
        if states[i] <= states[i - 1]:
            states[i] = states[i - 1] + 1e-9
    return MarkovPriceChain(states=states, transition=transition, initial=initial)
