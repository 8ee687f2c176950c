"""Writer and reader automata."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .messages import ALL_SERVERS, READ, READ_ACK, WRITE, Out
from .params import Params
from .server import consistent_order
from .timestamps import EMPTY, MODULUS, Pair, is_valid_pair


class OperationInFlight(RuntimeError):
    """A client was asked to start an operation before its previous one returned."""


def select_value(
    replies: Iterable[tuple], threshold: int, orderings: Iterable[tuple] = ()
) -> Pair:
    """Newest pair reported by at least ``threshold`` distinct servers, else ``EMPTY``.

    ``orderings`` holds ``(origin, older, newer)`` facts taken from replies
    listing several values.  They only matter when five consecutive writes
    qualify at once, which leaves the ring order ambiguous; an ordering
    counts once ``threshold`` servers have reported it.
    """
    backing: dict[Pair, set] = {}
    for origin, pair in replies:
        if is_valid_pair(pair):
            backing.setdefault(pair, set()).add(origin)
    qualified = {p: o for p, o in backing.items() if len(o) >= threshold}
    seen: dict[tuple, set] = {}
    for origin, older, newer in orderings:
        seen.setdefault((older, newer), set()).add(origin)
    hints = {edge: len(o) for edge, o in seen.items() if len(o) >= threshold}
    ordered = consistent_order(qualified, hints)
    return ordered[-1] if ordered else EMPTY


@dataclass
class WriterState:
    id: str
    params: Params
    csn: object = 0
    busy_until: Optional[int] = None

    def write(self, v: str, now: int) -> tuple[list[Out], int]:
        """Start a write; returns the broadcast and the confirmation tick."""
        if self.busy_until is not None:
            raise OperationInFlight(f"{self.id} is busy until {self.busy_until}")
        # a corrupted csn is pulled back into Z5 by the increment itself
        self.csn = (self.csn + 1) % MODULUS if type(self.csn) is int else 0
        self.busy_until = now + self.params.delta
        return [Out(WRITE, ALL_SERVERS, (v, self.csn))], self.busy_until

    def confirm(self) -> None:
        self.busy_until = None


@dataclass
class ReaderState:
    id: str
    params: Params
    reply_set: set = field(default_factory=set)
    orderings: set = field(default_factory=set)
    op_deadline: Optional[int] = None

    def read(self, now: int) -> tuple[list[Out], int]:
        if self.op_deadline is not None:
            raise OperationInFlight(f"{self.id} is busy until {self.op_deadline}")
        self.reply_set = set()
        self.orderings = set()
        self.op_deadline = now + 2 * self.params.delta
        return [Out(READ, ALL_SERVERS, (self.id,))], self.op_deadline

    def handle_reply(self, j: object, pairs: Iterable, now: int) -> None:
        if self.op_deadline is None or now > self.op_deadline:
            return
        listed = [Pair(*p) for p in pairs if isinstance(p, tuple) and len(p) == 2]
        for i, p in enumerate(listed):
            self.reply_set.add((j, p))
            for q in listed[i + 1 :]:
                self.orderings.add((j, p, q))

    def finish(self) -> tuple[list[Out], Pair]:
        chosen = select_value(self.reply_set, self.params.reply_threshold, self.orderings)
        self.op_deadline = None
        return [Out(READ_ACK, ALL_SERVERS, (self.id,))], chosen
