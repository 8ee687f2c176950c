from __future__ import annotations

from dataclasses import dataclass


class BoundsError(ValueError):
    """Parameters violate the replica or timing bounds of the chosen regime."""


@dataclass(frozen=True)
class Params:
    n: int
    f: int
    k: int
    delta: int
    Delta: int
    t0: int = 0
    enforce_bounds: bool = True

    @property
    def reply_threshold(self) -> int:
        return 2 * self.k * self.f + 1

    @property
    def echo_threshold(self) -> int:
        return (self.k + 1) * self.f + 1

    @property
    def min_servers(self) -> int:
        return 2 * (self.k + 1) * self.f + 1

    def validate(self) -> None:
        if self.k not in (1, 2):
            raise BoundsError(f"k must be 1 or 2, got {self.k}")
        if self.delta < 1 or self.Delta < 1:
            raise BoundsError("delta and Delta must be positive")
        if self.f < 0 or self.n < 1 or self.t0 < 0:
            raise BoundsError("n must be positive, f and t0 non-negative")
        if self.Delta < self.delta:
            raise BoundsError(f"Delta={self.Delta} below delta={self.delta}")
        if not self.enforce_bounds:
            return
        if self.k * self.Delta < 2 * self.delta:
            raise BoundsError(f"k*Delta={self.k * self.Delta} < 2*delta={2 * self.delta}")
        if self.n < self.min_servers:
            raise BoundsError(f"n={self.n} below 2(k+1)f+1={self.min_servers}")
