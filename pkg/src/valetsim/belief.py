"""Per-spot occupancy beliefs: 0.5 start, observation override, intention product."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BeliefMap:
    """Probability per spot that it is, or soon will be, occupied."""

    beliefs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.beliefs, dtype=float)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("beliefs must be a non-empty 1-D vector")
        if np.any((b < 0.0) | (b > 1.0)):
            raise ValueError("beliefs must lie in [0, 1]")
        object.__setattr__(self, "beliefs", b)

    def __len__(self):
        return self.beliefs.size

    def __getitem__(self, i):
        return float(self.beliefs[i])


def init_beliefs(n_spot: int) -> BeliefMap:
    """Uninformed start: every spot at 0.5."""
    if n_spot < 1:
        raise ValueError("a lot must have at least one spot")
    return BeliefMap(np.full(n_spot, 0.5), time=0.0)


def observation_update(prev: BeliefMap, vacant, occupied, time: float = None) -> BeliefMap:
    """Observed-vacant spots drop to 0, observed-occupied rise to 1, rest carry over."""
    vacant = frozenset(int(i) for i in vacant)
    occupied = frozenset(int(i) for i in occupied)
    if vacant & occupied:
        raise ValueError(f"spots reported both vacant and occupied: {sorted(vacant & occupied)}")
    n = len(prev)
    for i in vacant | occupied:
        if not 0 <= i < n:
            raise IndexError(f"spot index {i} out of range for {n} spots")
    b = prev.beliefs.copy()
    if vacant:
        b[list(vacant)] = 0.0
    if occupied:
        b[list(occupied)] = 1.0
    return BeliefMap(b, time=prev.time if time is None else time)


def intention_update(initial: BeliefMap, vacant, intents: dict, time: float = None) -> BeliefMap:
    """Fold per-vehicle parking intents into the observed-vacant spots.

    intents: {vehicle id: {spot index: probability}}. A vacant spot's belief
    becomes the probability that any intending vehicle parks there,
    1 - prod(1 - eta); vacant spots nobody intends drop to 0.
    """
    vacant = frozenset(int(i) for i in vacant)
    n = len(initial)
    b = initial.beliefs.copy()
    miss = np.ones(n)
    for k, spot_probs in intents.items():
        for i, eta in spot_probs.items():
            if not 0.0 <= eta <= 1.0:
                raise ValueError(f"intent probability {eta} for vehicle {k} outside [0, 1]")
            if 0 <= int(i) < n:
                miss[int(i)] *= 1.0 - eta
    for i in vacant:
        b[i] = 1.0 - miss[i]
    return BeliefMap(b, time=initial.time if time is None else time)
