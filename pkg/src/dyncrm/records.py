"""Policy-level data records and the padded panel used for batch filtering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

# panel cell status
OFF = 0  # before the first or after the last observed year
OBSERVED = 1
GAP = 2  # a missing year strictly inside the history: transition only


@dataclass(frozen=True)
class Period:
    year: int
    x: tuple
    y1: int
    y2: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if self.y1 < 0 or int(self.y1) != self.y1:
            raise DomainError(f"claim count must be a non-negative integer, got {self.y1!r}")
        if self.y1 == 0 and self.y2 != 0:
            raise DomainError("positive loss with zero claims")
        if self.y1 > 0 and not self.y2 > 0:
            raise DomainError("claims reported with non-positive total loss")
        object.__setattr__(self, "y1", int(self.y1))
        object.__setattr__(self, "y2", float(self.y2))


@dataclass(frozen=True)
class PolicyHistory:
    """Ordered yearly records of one policyholder."""

    policy_id: str
    periods: tuple = field(default_factory=tuple)

    def __post_init__(self):
        periods = tuple(self.periods)
        years = [p.year for p in periods]
        if any(b <= a for a, b in zip(years, years[1:])):
            raise DomainError(f"policy {self.policy_id}: years must be strictly increasing")
        object.__setattr__(self, "periods", periods)

    def __len__(self):
        return len(self.periods)

    def before(self, year) -> "PolicyHistory":
        return PolicyHistory(self.policy_id, tuple(p for p in self.periods if p.year < year))

    def at(self, year):
        for p in self.periods:
            if p.year == year:
                return p
        return None

    @property
    def years(self):
        return [p.year for p in self.periods]


@dataclass(frozen=True)
class Panel:
    """Portfolio padded to a rectangular ``(n_policies, n_years)`` grid."""

    policy_ids: tuple
    years: tuple
    x: np.ndarray  # (n, T, p)
    y1: np.ndarray  # (n, T)
    y2: np.ndarray  # (n, T)
    status: np.ndarray  # (n, T) of OFF / OBSERVED / GAP

    @property
    def n_policies(self):
        return self.x.shape[0]


def make_panel(histories: Sequence[PolicyHistory], years: Sequence[int] | None = None) -> Panel:
    """Stack histories on a common year axis; inner missing years become gaps."""
    histories = list(histories)
    if not histories:
        raise DomainError("empty portfolio")
    if years is None:
        seen = [p.year for h in histories for p in h.periods]
        years = range(min(seen), max(seen) + 1) if seen else []
    years = list(years)
    index = {y: j for j, y in enumerate(years)}
    dims = {len(p.x) for h in histories for p in h.periods}
    if len(dims) > 1:
        raise DomainError("inconsistent covariate dimension")
    p = dims.pop() if dims else 0
    n, T = len(histories), len(years)
    x = np.zeros((n, T, p))
    y1 = np.zeros((n, T))
    y2 = np.zeros((n, T))
    status = np.full((n, T), OFF, dtype=np.int8)
    for i, h in enumerate(histories):
        cols = [index[per.year] for per in h.periods if per.year in index]
        if cols:
            status[i, min(cols): max(cols) + 1] = GAP
        for per in h.periods:
            j = index.get(per.year)
            if j is None:
                continue
            x[i, j] = per.x
            y1[i, j] = per.y1
            y2[i, j] = per.y2
            status[i, j] = OBSERVED
    return Panel(tuple(h.policy_id for h in histories), tuple(years), x, y1, y2, status)
