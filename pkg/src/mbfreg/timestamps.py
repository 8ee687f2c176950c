"""Bounded sequence numbers over Z5.

A timestamp is a plain ``int`` (possibly out of range once state has been
corrupted) or ``None``, which stands for the bottom value.  Values carried
around by the protocol are ``Pair(value, sn)`` tuples; ``EMPTY`` is the
``<bottom, bottom>`` placeholder.
"""

from __future__ import annotations

from itertools import permutations
from typing import Iterable, NamedTuple, Optional, Sequence

MODULUS = 5

Timestamp = Optional[int]


class DomainError(ValueError):
    """Arithmetic was asked to operate on a timestamp outside Z5."""


class NotOrderable(ValueError):
    """A collection of timestamps has no unique oldest-to-newest order."""


class Pair(NamedTuple):
    value: Optional[str]
    sn: Timestamp

    def __str__(self) -> str:
        return format_pair(self)


EMPTY = Pair(None, None)


def in_z5(ts: object) -> bool:
    return type(ts) is int and 0 <= ts < MODULUS


def _require(a: object, b: object) -> None:
    if not (in_z5(a) and in_z5(b)):
        raise DomainError(f"timestamps outside Z5: {a!r}, {b!r}")


def z5_add(a: Timestamp, b: Timestamp) -> int:
    _require(a, b)
    return (a + b) % MODULUS


def z5_sub(a: Timestamp, b: Timestamp) -> int:
    _require(a, b)
    return (a - b) % MODULUS


def newer_than(a: Timestamp, b: Timestamp) -> bool:
    """True when ``a`` is one or two steps ahead of ``b`` on the Z5 ring."""
    return z5_sub(a, b) in (1, 2)


def is_valid_pair(p: object) -> bool:
    """A pair that may take part in ordering: a real value with a Z5 stamp."""
    return isinstance(p, tuple) and len(p) == 2 and p[0] is not None and in_z5(p[1])


def is_orderable(stamps: Sequence[Timestamp]) -> bool:
    """Distinct Z5 stamps, at most three, all within two steps of one of them."""
    if len(stamps) > 3 or not all(in_z5(s) for s in stamps):
        return False
    if len(set(stamps)) != len(stamps):
        return False
    if len(stamps) <= 1:
        return True
    for base in stamps:
        if all(s == base or newer_than(s, base) for s in stamps):
            return True
    return False


def order_pairs(pairs: Iterable[Pair]) -> list[Pair]:
    """Order pairs oldest to newest, or raise ``NotOrderable``."""
    items = list(dict.fromkeys(pairs))
    if not all(is_valid_pair(p) for p in items):
        raise NotOrderable(f"pair outside Z5: {items!r}")
    if not is_orderable([p.sn for p in items]):
        raise NotOrderable(f"no unique order for {items!r}")
    out = []
    while items:
        first = oldest(items)
        out.append(first)
        items.remove(first)
    return out


def oldest(pairs: Iterable[Pair]) -> Pair:
    """Return the element that is not newer than any other element."""
    items = list(dict.fromkeys(pairs))
    if not items:
        raise NotOrderable("empty set has no oldest element")
    if not all(is_valid_pair(p) for p in items) or not is_orderable([p.sn for p in items]):
        raise NotOrderable(f"no unique order for {items!r}")
    found = [p for p in items if not any(newer_than(p.sn, q.sn) for q in items if q is not p)]
    if len(found) != 1:
        raise NotOrderable(f"no unique oldest in {items!r}")
    return found[0]


def is_legal_subsequence(stamps: Sequence[object]) -> bool:
    """Could ``stamps`` (oldest first) be consecutive entries of a legal write sequence?"""
    if not all(in_z5(s) for s in stamps):
        return False
    if len(set(stamps)) != len(stamps):
        return False
    span = 0
    for older, newer in zip(stamps, stamps[1:]):
        step = z5_sub(newer, older)
        if step not in (1, 2):
            return False
        span += step
    return span <= MODULUS - 1


def legal_orders(stamps: Iterable[int]) -> list[tuple[int, ...]]:
    """Every arrangement of ``stamps`` accepted by ``is_legal_subsequence``."""
    return [p for p in permutations(stamps) if is_legal_subsequence(p)]


def format_pair(p: Pair) -> str:
    if p == EMPTY:
        return "_"
    value = "_" if p.value is None else str(p.value)
    sn = "_" if p.sn is None else str(p.sn)
    return f"{value}@{sn}"


def parse_pair(text: str) -> Pair:
    if text == "_":
        return EMPTY
    value, _, sn = text.rpartition("@")
    return Pair(None if value == "_" else value, None if sn == "_" else int(sn))
