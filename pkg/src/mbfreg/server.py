"""Server replica: value triple, write buffers, maintenance and message handlers."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Iterable, Mapping, Optional

from .messages import ALL_SERVERS, ECHO, READ_FW, REPLY, WRITE_FW, Out
from .params import Params
from .timestamps import (
    EMPTY,
    NotOrderable,
    Pair,
    is_legal_subsequence,
    is_orderable,
    is_valid_pair,
    legal_orders,
    newer_than,
    order_pairs,
    z5_sub,
)

Triple = list  # three Pair slots, V[0] oldest

# pair -> {origin: epoch}
EpochTable = dict


def empty_triple() -> Triple:
    return [EMPTY, EMPTY, EMPTY]


def check(V: Iterable[object]) -> bool:
    """Is the triple well formed: a filled suffix with Z5 stamps in sequence?"""
    slots = list(V)
    if len(slots) != 3:
        return False
    filled = [p != EMPTY for p in slots]
    if filled not in ([True] * 3, [False, True, True], [False, False, True], [False] * 3):
        return False
    live = [p for p in slots if p != EMPTY]
    if not all(is_valid_pair(p) for p in live):
        return False
    sns = [p[1] for p in live]
    if len(set(sns)) != len(sns):
        return False
    if len(sns) == 3 and z5_sub(sns[1], sns[0]) != 1:
        return False
    if len(sns) >= 2 and z5_sub(sns[-1], sns[-2]) not in (1, 2):
        return False
    return True


def insert(V: Triple, x: Pair) -> Triple:
    """Place ``x`` in the triple, falling back to ``[_, _, x]`` if the result is malformed."""
    if not is_valid_pair(x):
        raise ValueError(f"only Z5 pairs are inserted, got {x!r}")
    if x in V:
        return list(V)
    out = list(V)
    top, mid = V[2], V[1]
    if all(p == EMPTY for p in V):
        out = [EMPTY, EMPTY, x]
    elif is_valid_pair(top):
        ahead = z5_sub(x.sn, top.sn)
        if mid == EMPTY:
            if ahead in (1, 2):
                out = [EMPTY, top, x]
            elif ahead == 4:
                out = [EMPTY, x, top]
        elif is_valid_pair(mid):
            if ahead == 1 and z5_sub(top.sn, mid.sn) == 1:
                out = [mid, top, x]
            elif ahead == 1:
                # a gap below the top leaves no legal room for the older slot
                out = [EMPTY, top, x]
            elif ahead == 4 and z5_sub(x.sn, mid.sn) == 1:
                out = [mid, x, top]
    if not check(out):
        out = [EMPTY, EMPTY, x]
    return out


def epoch_check(entries: dict) -> None:
    """Age every entry by one maintenance; entries already past epoch 0 are dropped."""
    for key, epoch in list(entries.items()):
        if type(epoch) is int and epoch in (0, 1):
            entries[key] = epoch - 1
        else:
            del entries[key]


def is_live(epoch: object) -> bool:
    """Entries at epoch -1 are expired: kept until the next check but no longer counted."""
    return type(epoch) is int and epoch in (0, 1)


def live_keys(entries: Mapping) -> list:
    return [key for key, epoch in entries.items() if is_live(epoch)]


def live_origins(table: Mapping, pair: Pair) -> set:
    return {o for o, epoch in table.get(pair, {}).items() if is_live(epoch)}


def epoch_check_table(table: EpochTable) -> None:
    for pair in list(table):
        origins = table[pair]
        epoch_check(origins)
        if not origins:
            del table[pair]


def concut(V: Iterable[Pair], W: Iterable[Pair], keep_expiring: bool = True) -> list[Pair]:
    """Last three distinct non-placeholder values of V followed by W in timestamp order.

    ``W`` may be a plain collection of pairs or the server's epoch map.  With
    the map, expiring entries are left out when ``keep_expiring`` is false,
    and are otherwise dropped only if they make W unorderable.
    """
    top = next((p for p in reversed(list(V)) if is_valid_pair(p)), None)
    # the concatenation presumes W's values follow V; one that does not is
    # overtaken or planted, and appending it would misorder the result
    pending = [p for p in W if is_valid_pair(p) and (top is None or newer_than(p.sn, top.sn))]
    attempts = [pending]
    if isinstance(W, Mapping):
        live = [p for p in pending if is_live(W[p])]
        attempts = [live] if not keep_expiring else [pending, live]
    ordered_w: list[Pair] = []
    for attempt in attempts:
        try:
            ordered_w = order_pairs(attempt)
            break
        except NotOrderable:
            continue
    seq = [p for p in list(V) + ordered_w if p != EMPTY]
    return list(dict.fromkeys(seq))[-3:]


def id_key(o: Hashable) -> tuple:
    """Sort key for process ids that tolerates corrupted, mixed-type ids."""
    return (0, o, "") if type(o) is int else (1, 0, repr(o))


def _origin_key(origins: Iterable[Hashable]) -> tuple:
    return tuple(sorted(origins, key=id_key))


def consistent_order(
    backing: Mapping[Pair, set], hints: Optional[Mapping[tuple, int]] = None
) -> list[Pair]:
    """Order a set of quorum-backed pairs oldest to newest.

    Up to five distinct stamps are placed by the tightest legal arrangement.
    When several arrangements tie, ``hints`` (``(older, newer) -> weight``)
    picks the one agreeing most with observed orderings.  Otherwise, and
    whenever no single order exists, the largest orderable subset wins, ties
    going to more support and then to the smallest supporting origin sets.
    """
    cands = sorted((p for p in backing if is_valid_pair(p)), key=lambda p: (p.sn, str(p.value)))
    if not cands:
        return []
    sns = [p.sn for p in cands]
    if is_orderable(sns):
        return order_pairs(cands)
    if len(set(sns)) == len(sns) and len(sns) <= 5:
        arrangements = legal_orders(sns)
        if arrangements:
            spans = [sum(z5_sub(b, a) for a, b in zip(o, o[1:])) for o in arrangements]
            best = min(spans)
            tight = [o for o, s in zip(arrangements, spans) if s == best]
            by_sn = {p.sn: p for p in cands}
            if len(tight) > 1 and hints:
                scores = [
                    sum(hints.get((by_sn[a], by_sn[b]), 0) for a, b in combinations(o, 2))
                    for o in tight
                ]
                top = max(scores)
                if top > 0 and scores.count(top) == 1:
                    tight = [tight[scores.index(top)]]
            if len(tight) == 1:
                return [by_sn[s] for s in tight[0]]
    best_key = None
    best_subset: tuple = ()
    for size in range(min(3, len(cands)), 0, -1):
        for subset in combinations(cands, size):
            if not is_orderable([p.sn for p in subset]):
                continue
            key = (
                -sum(len(backing[p]) for p in subset),
                sorted(_origin_key(backing[p]) for p in subset),
            )
            if best_key is None or key < best_key:
                best_key, best_subset = key, subset
        if best_subset:
            break
    return order_pairs(best_subset)


def fresh_origins(table: Mapping, pair: Pair) -> set:
    """Origins whose entry for ``pair`` arrived since the last epoch check."""
    return {o for o, epoch in table.get(pair, {}).items() if type(epoch) is int and epoch == 1}


def select_three_pairs_max_sn(echo_vals: Mapping[Pair, Mapping], threshold: int) -> list[Pair]:
    # Every echo of a round lands before the next round starts, so an older
    # echo describes a superseded state; counting it would let an overtaken
    # value regain a quorum.
    backing = {p: fresh_origins(echo_vals, p) for p in echo_vals}
    backing = {p: o for p, o in backing.items() if len(o) >= threshold}
    chosen = consistent_order(backing)
    for start in range(max(0, len(chosen) - 3), len(chosen)):
        tail = chosen[start:]
        if is_legal_subsequence([p.sn for p in tail]):
            return tail
    return []


@dataclass
class ServerState:
    id: int
    params: Params
    V: Triple = field(default_factory=empty_triple)
    W: dict = field(default_factory=dict)  # pair -> epoch
    FW: set = field(default_factory=set)
    echo_vals: EpochTable = field(default_factory=dict)
    fw_vals: EpochTable = field(default_factory=dict)
    pending_read: set = field(default_factory=set)
    echo_read: set = field(default_factory=set)

    def readers(self) -> list:
        return sorted(self.pending_read | self.echo_read, key=id_key)

    def _vw(self) -> list[Pair]:
        # With Delta >= 2*delta a genuine write is promoted and drained
        # within one period, so an entry still in W after two epoch checks
        # was planted.  With a shorter period it may be a write in flight.
        p = self.params
        return concut(self.V, self.W, keep_expiring=p.Delta < 2 * p.delta)

    def _reply_all(self, pairs: tuple) -> list[Out]:
        return [Out(REPLY, j, (self.id, pairs)) for j in self.readers()]

    def _drain_fw(self) -> None:
        fw = {p for p in self.FW if is_valid_pair(p)}
        # Late echoes can re-promote a value already overtaken, leaving four
        # stamps in FW.  Inserted alone, the overtaken one would look newer
        # than V's top across the wrap, so only the newest three of FW and V
        # together are eligible.
        known = fw | {p for p in self.V if is_valid_pair(p)}
        newest = consistent_order({p: set() for p in known})[-3:]
        for x in newest:
            if x in fw:
                self.V = insert(self.V, x)
        for x in fw:
            self.W.pop(x, None)
        self.FW = set()

    # maintenance, run at t0 + i*Delta

    def maintenance_phase1(self, now: int) -> list[Out]:
        # age first: entries about to expire must not push a fresh write
        # over the size limit and take it down with them
        epoch_check(self.W)
        if len(live_keys(self.W)) > 3:
            self.W = {}
        epoch_check_table(self.echo_vals)
        epoch_check_table(self.fw_vals)
        if not check(self.V):
            self.V = empty_triple()
        self.FW = set()
        vw = tuple(self._vw())
        return [Out(ECHO, ALL_SERVERS, (self.id, vw, frozenset(self.pending_read)))]

    def maintenance_phase2(self, now: int) -> list[Out]:
        self.V = empty_triple()
        for p in select_three_pairs_max_sn(self.echo_vals, self.params.echo_threshold):
            self.V = insert(self.V, p)
        self._drain_fw()
        return self._reply_all(tuple(self._vw()))

    def maintenance_phase3(self, now: int) -> list[Out]:
        self._drain_fw()
        return self._reply_all(tuple(self._vw()))

    # message handlers

    def handle_write(self, v: object, csn: object) -> list[Out]:
        pair = Pair(v, csn)
        out: list[Out] = []
        if pair not in self.V:
            self.W[pair] = 1
            out.extend(self._reply_all((pair,)))
        out.append(Out(WRITE_FW, ALL_SERVERS, (self.id, pair)))
        return out

    def handle_write_fw(self, j: int, pair: Pair) -> list[Out]:
        self.fw_vals.setdefault(pair, {})[j] = 1
        return self.promote_check([pair])

    def handle_echo(self, j: int, vw: Iterable[Pair], pr: Iterable) -> list[Out]:
        touched = []
        for p in vw:
            self.echo_vals.setdefault(p, {})[j] = 1
            touched.append(p)
        self.echo_read.update(pr)
        return self.promote_check(touched)

    def promote_check(self, pairs: Optional[Iterable[Pair]] = None) -> list[Out]:
        if pairs is None:
            pairs = sorted(set(self.echo_vals) | set(self.fw_vals), key=repr)
        out: list[Out] = []
        for p in dict.fromkeys(pairs):
            if not is_valid_pair(p):
                continue
            origins = fresh_origins(self.echo_vals, p) | live_origins(self.fw_vals, p)
            if len(origins) < self.params.reply_threshold:
                continue
            self.FW.add(p)
            self.echo_vals.pop(p, None)
            self.fw_vals.pop(p, None)
            out.extend(self._reply_all((p,)))
        return out

    def handle_read(self, j: str) -> list[Out]:
        self.pending_read.add(j)
        out = [Out(REPLY, j, (self.id, tuple(self._vw())))]
        # values promoted before this READ but not yet drained into V would
        # otherwise reach j only at the next phase
        out += [Out(REPLY, j, (self.id, (p,))) for p in sorted(self.FW, key=repr) if is_valid_pair(p)]
        out.append(Out(READ_FW, ALL_SERVERS, (j,)))
        return out

    def handle_read_fw(self, j: str) -> list[Out]:
        self.pending_read.add(j)
        return []

    def handle_read_ack(self, j: str) -> list[Out]:
        self.pending_read.discard(j)
        self.echo_read.discard(j)
        return []
