"""Offline oracle over simulator traces.

Everything here works from the trace text alone.  The fault ledger is
rebuilt from the ``move`` and ``maint`` lines, so the checker never needs
the live simulation objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import chain
from typing import Iterable, Optional

from .adversary import FaultLedger
from .timestamps import Pair, is_valid_pair, legal_orders, parse_pair
from .server import check


class TraceError(ValueError):
    """The trace is malformed; the message names the offending line."""


class HistoryError(ValueError):
    """The trace parses but does not describe a single-writer history."""


@dataclass(frozen=True)
class Event:
    line: int
    tick: int
    cat: str
    node: str
    detail: dict


@dataclass
class OpRecord:
    client: str
    kind: str
    value: Optional[str]
    sn: Optional[int]
    t_B: int
    t_E: Optional[int]  # None: still running when the trace ends

    def overlaps(self, a: int, b: int) -> bool:
        end = self.t_E if self.t_E is not None else float("inf")
        return self.t_B <= b and a <= end


@dataclass
class Violation:
    check: str
    tick: int
    node: str
    message: str
    warning: bool = False

    def __str__(self) -> str:
        level = "warning" if self.warning else "violation"
        return f"{level} check={self.check} tick={self.tick} node={self.node} {self.message}"


@dataclass
class StabilizationEstimate:
    tau_no_tr: Optional[int]
    tau_stab: Optional[int]  # None: fewer than five writes after the quiet period
    empirical: int  # first tick after which every read was valid


def _split_detail(text: str, lineno: int) -> dict:
    out = {}
    for token in text.split():
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise TraceError(f"line {lineno}: bad detail token {token!r}")
        out[key] = value
    return out


def parse_trace(text: str) -> list[Event]:
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split(" ", 3)
        if len(parts) != 4:
            raise TraceError(f"line {lineno}: expected four fields, got {raw!r}")
        fields_ = {}
        for want, part in zip(("tick", "cat", "node", "detail"), parts):
            key, sep, value = part.partition("=")
            if key != want or not sep:
                raise TraceError(f"line {lineno}: expected {want}=..., got {part!r}")
            fields_[key] = value
        try:
            tick = int(fields_["tick"])
        except ValueError:
            raise TraceError(f"line {lineno}: tick is not an integer") from None
        if events and tick < events[-1].tick:
            raise TraceError(f"line {lineno}: tick {tick} goes backwards")
        events.append(Event(lineno, tick, fields_["cat"], fields_["node"], _split_detail(fields_["detail"], lineno)))
    return events


def meta(events: list[Event]) -> dict:
    for e in events:
        if e.cat == "meta" and "n" in e.detail:
            d = dict(e.detail)
            for key in ("n", "f", "k", "delta", "Delta", "t0", "seed", "duration", "readers"):
                d[key] = int(d[key])
            d["tau_no_tr"] = None if d.get("tau_no_tr", "-") == "-" else int(d["tau_no_tr"])
            return d
    raise TraceError("trace has no meta header")


def _opt(text: str) -> Optional[str]:
    return None if text == "_" else text


def build_history(events: list[Event]) -> list[OpRecord]:
    open_ops: dict[str, OpRecord] = {}
    history: list[OpRecord] = []
    writers = set()
    for e in events:
        if e.cat == "op":
            if e.node in open_ops:
                raise HistoryError(f"line {e.line}: {e.node} starts an operation while another is running")
            kind = e.detail.get("kind")
            if kind == "write":
                writers.add(e.node)
                if len(writers) > 1:
                    raise HistoryError(f"line {e.line}: second writer {e.node} in a single-writer history")
                sn = e.detail.get("sn", "_")
                rec = OpRecord(e.node, "write", _opt(e.detail.get("value", "_")),
                               None if sn == "_" else int(sn), e.tick, None)
            elif kind == "read":
                rec = OpRecord(e.node, "read", None, None, e.tick, None)
            else:
                raise TraceError(f"line {e.line}: unknown operation kind {kind!r}")
            open_ops[e.node] = rec
            history.append(rec)
        elif e.cat == "timer":
            rec = open_ops.pop(e.node, None)
            if rec is None:
                raise HistoryError(f"line {e.line}: {e.node} completes an operation it never started")
            rec.t_E = e.tick
            if rec.kind == "read":
                rec.value = _opt(e.detail.get("value", "_"))
                sn = e.detail.get("sn", "_")
                rec.sn = None if sn == "_" else int(sn)
    history.sort(key=lambda r: (r.t_B, r.client))
    return history


# ---------------------------------------------------------------- validity


def valid_values(read: OpRecord, writes: list[OpRecord]) -> set:
    """Last value written before the read started, plus every value written concurrently."""
    before = [w for w in writes if w.t_E is not None and w.t_E <= read.t_B]
    last = max(before, key=lambda w: w.t_E).value if before else None
    out = {last}
    out.update(w.value for w in writes if w.overlaps(read.t_B, read.t_E))
    return out


def valid_values_brute(read: OpRecord, writes: list[OpRecord]) -> set:
    """The same set, re-derived by walking the clock one tick at a time."""
    current = None  # the fictional initial write of bottom
    for t in range(0, read.t_B + 1):
        for w in writes:
            if w.t_E == t:
                current = w.value
    out = {current}
    for t in range(read.t_B, read.t_E + 1):
        for w in writes:
            end = w.t_E if w.t_E is not None else t
            if w.t_B <= t <= end:
                out.add(w.value)
    return out


def check_validity(history: list[OpRecord], tau_stab: Optional[int]) -> list[Violation]:
    if tau_stab is None:
        return []
    writes = [r for r in history if r.kind == "write"]
    out = []
    for r in history:
        if r.kind != "read" or r.t_E is None or r.t_B <= tau_stab:
            continue
        allowed = valid_values(r, writes)
        if r.value not in allowed:
            shown = ",".join(sorted("_" if v is None else v for v in allowed))
            out.append(Violation("validity", r.t_B, r.client,
                                 f"returned={r.value or '_'} allowed={shown} end={r.t_E}"))
    return out


def check_termination(history: list[OpRecord], delta: int) -> list[Violation]:
    out = []
    for r in history:
        if r.t_E is None:
            continue
        want = delta if r.kind == "write" else 2 * delta
        if r.t_E - r.t_B != want:
            out.append(Violation("termination", r.t_B, r.client,
                                 f"kind={r.kind} duration={r.t_E - r.t_B} expected={want}"))
    return out


def stabilization_time(history: list[OpRecord], tau_no_tr: Optional[int], Delta: int) -> Optional[int]:
    """``tau_no_tr + 3*Delta`` plus the time five writes invoked after it take to complete."""
    if tau_no_tr is None:
        return 0
    start = tau_no_tr + 3 * Delta
    after = [w for w in history if w.kind == "write" and w.t_B >= start and w.t_E is not None]
    if len(after) < 5:
        return None
    return after[4].t_E


def empirical_stabilization(history: list[OpRecord]) -> int:
    writes = [r for r in history if r.kind == "write"]
    bad = [r.t_B for r in history
           if r.kind == "read" and r.t_E is not None and r.value not in valid_values(r, writes)]
    return max(bad) if bad else 0


def measure_convergence(events: list[Event]) -> StabilizationEstimate:
    m = meta(events)
    history = build_history(events)
    return StabilizationEstimate(m["tau_no_tr"], stabilization_time(history, m["tau_no_tr"], m["Delta"]),
                                 empirical_stabilization(history))


# ---------------------------------------------------------------- structure


def _pairs(text: str) -> list[Pair]:
    if text in ("", "-"):
        return []
    return [parse_pair(p) if p != "?" else Pair("?", None) for p in text.split(",")]


def _epoch_keys(text: str) -> list[Pair]:
    if text in ("", "-"):
        return []
    return [parse_pair(item.rpartition(":")[0]) for item in text.split(",")]


@dataclass
class Snapshot:
    tick: int
    server: int
    phase: int
    round: int
    V: list
    W: list
    FW_in: list


def rebuild_ledger(events: list[Event], n: int) -> FaultLedger:
    ledger = FaultLedger(n)
    last = 0
    for e in events:
        last = e.tick
        if e.cat == "move":
            occ = e.detail.get("occupied", "-")
            ledger.record_move(e.tick, [] if occ == "-" else [int(s[1:]) for s in occ.split(",")])
        elif e.cat == "maint" and e.detail.get("phase") == "2" and e.detail.get("byz") == "0" \
                and "skipped" not in e.detail:
            ledger.record_recovery(e.tick, int(e.node[1:]))
    ledger.close(last)
    return ledger


def snapshots(events: Iterable[Event]) -> list[Snapshot]:
    out = []
    for e in events:
        d = e.detail
        if e.cat == "maint" and d.get("byz") == "0" and "V" in d:
            out.append(Snapshot(e.tick, int(e.node[1:]), int(d["phase"]), int(d["i"]), _pairs(d["V"]),
                                _epoch_keys(d["W"]), _pairs(d["FWin"])))
    return out


def _legal_set(pairs: list[Pair]) -> bool:
    if not all(is_valid_pair(p) for p in pairs):
        return False
    sns = [p.sn for p in pairs]
    return len(sns) <= 1 or bool(legal_orders(sns))


def audit_structure(events: list[Event], tau_stab: Optional[int], ledger: Optional[FaultLedger] = None
                    ) -> list[Violation]:
    """Buffer sizes, FW legality, post-rebuild check(V) and write persistence on correct servers.

    A server is audited at tick t only if it was neither occupied nor cured
    anywhere in ``[t - 3*Delta, t]``; a cured server keeps whatever the agent
    left in its buffers until the epochs run out.
    """
    if tau_stab is None:
        return []
    m = meta(events)
    n, Delta = m["n"], m["Delta"]
    threshold = 2 * m["k"] * m["f"] + 1
    ledger = ledger or rebuild_ledger(events, n)
    out: list[Violation] = []
    every = snapshots(events)
    snaps = [s for s in every if s.tick > tau_stab]

    def clean(s: Snapshot) -> bool:
        return ledger.correct_throughout(s.server, max(0, s.tick - 3 * Delta), s.tick)

    # V as each server entered a round; FW entries already there are
    # re-confirmations from the echo, not values pending insertion.  Phase 1
    # of the first audited round may fall before tau_stab.
    entering = {(s.server, s.round): set(s.V) for s in every if s.phase == 1}
    for s in snaps:
        if not clean(s):
            continue
        node = f"s{s.server}"
        if len(s.W) > 3:
            out.append(Violation("W-size", s.tick, node, f"phase={s.phase} size={len(s.W)}"))
        pending = [p for p in s.FW_in if p not in entering.get((s.server, s.round), ())]
        if len(pending) > 3 or not _legal_set(s.FW_in):
            out.append(Violation("FW-legal", s.tick, node, f"phase={s.phase} FW={','.join(map(str, s.FW_in))}"))
        if s.phase == 2 and not check(s.V):
            out.append(Violation("V-check", s.tick, node, f"V={','.join(map(str, s.V))}"))

    # a value is confirmed everywhere once the forwards of the write have
    # landed, one delay after the write returns
    delta = m["delta"]
    history = build_history(events)
    writes = [w for w in history if w.kind == "write"]
    for idx, w in enumerate(writes):
        if w.t_E is None or w.t_B <= tau_stab:
            continue
        pair = Pair(w.value, w.sn)
        for horizon, warning in ((2, False), (3, True)):
            if idx + horizon >= len(writes):
                continue
            stop = writes[idx + horizon].t_B
            window = [s for s in snaps if w.t_E + delta <= s.tick <= stop and s.phase in (1, 2)]
            for tick in sorted({s.tick for s in window}):
                here = [s for s in window if s.tick == tick]
                holders = {s.server for s in here
                           if ledger.is_correct(s.server, tick) and (pair in s.V or pair in s.W)}
                if len(holders) < threshold:
                    out.append(Violation(f"persistence-k+{horizon}", tick, "w",
                                         f"value={w.value} sn={w.sn} holders={len(holders)} need={threshold}",
                                         warning=warning))
                    break
    return out


def audit_envelopes(events: list[Event], delta: int) -> list[Violation]:
    out = []
    for e in events:
        if e.cat == "msg":
            lag = e.tick - int(e.detail["sent"])
            if not 1 <= lag <= delta:
                out.append(Violation("delivery", e.tick, e.node, f"lag={lag}"))
    return out


def audit_agents(events: list[Event], f: int) -> list[Violation]:
    out = []
    for e in events:
        if e.cat == "move":
            occ = e.detail.get("occupied", "-")
            size = 0 if occ == "-" else len(occ.split(","))
            if size > f:
                out.append(Violation("agents", e.tick, "adv", f"occupied={size} f={f}"))
    return out


# ---------------------------------------------------------------- report


@dataclass
class Verdict:
    meta: dict
    ops: int
    reads_checked: int
    estimate: StabilizationEstimate
    violations: list = field(default_factory=list)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if not v.warning]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.warning]

    @property
    def ok(self) -> bool:
        return not self.errors

    def count(self, check_name: str) -> int:
        return sum(1 for v in self.errors if v.check == check_name)

    def report(self) -> str:
        est = self.estimate
        lines = [
            f"seed={self.meta['seed']}",
            f"ops={self.ops}",
            f"reads_checked={self.reads_checked}",
            f"tau_no_tr={'-' if est.tau_no_tr is None else est.tau_no_tr}",
            f"tau_stab={'-' if est.tau_stab is None else est.tau_stab}",
            f"empirical_stab={est.empirical}",
            f"validity={self.count('validity')}",
            f"termination={self.count('termination')}",
            f"structure={len(self.errors) - self.count('validity') - self.count('termination')}",
            f"warnings={len(self.warnings)}",
            f"violations={len(self.errors)}",
        ]
        if self.meta.get("enforce_bounds") == "false":
            lines.insert(0, "WARNING=replica-or-period-bounds-not-enforced")
        if est.tau_stab is None:
            lines.append("note=fewer-than-5-writes-after-quiet-period-validity-not-checked")
        lines += [str(v) for v in self.violations]
        return "\n".join(lines) + "\n"


def check_events(events: list[Event], ledger: Optional[FaultLedger] = None) -> Verdict:
    m = meta(events)
    history = build_history(events)
    tau_stab = stabilization_time(history, m["tau_no_tr"], m["Delta"])
    est = StabilizationEstimate(m["tau_no_tr"], tau_stab, empirical_stabilization(history))
    violations = list(chain(
        check_termination(history, m["delta"]),
        check_validity(history, tau_stab),
        audit_structure(events, tau_stab, ledger),
        audit_envelopes(events, m["delta"]),
        audit_agents(events, m["f"]),
    ))
    checked = 0 if tau_stab is None else sum(
        1 for r in history if r.kind == "read" and r.t_E is not None and r.t_B > tau_stab)
    return Verdict(m, len(history), checked, est, violations)


def check_trace(text: str) -> Verdict:
    return check_events(parse_trace(text))
