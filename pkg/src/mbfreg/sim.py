"""Deterministic discrete-event kernel.

Time is an integer tick.  Events sharing a tick run in a fixed category
order so that a replay with the same scenario and seed is byte-identical:

    fault < move < msg < maint (phase 2/3 of the previous maintenance)
          < maint (phase 1) < byzantine script < op < timer

Phase 2 and 3 run after message delivery so that anything sent exactly
``delta`` earlier is in hand; phase 3 and, when ``Delta == delta``, phase 2
of the previous maintenance must run before the next phase 1 empties FW.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Optional

from .adversary import (
    FaultLedger,
    Movement,
    consistent_garbage,
    corrupt_reader,
    corrupt_server,
    corrupt_writer,
    make_strategy,
)
from .client import ReaderState, WriterState
from .messages import (
    ALL_SERVERS,
    ECHO,
    READ,
    READ_ACK,
    READ_FW,
    REPLY,
    WRITE,
    WRITE_FW,
    Out,
)
from .scenario import Scenario
from .server import ServerState, id_key
from .timestamps import EMPTY, Pair, format_pair

# event categories, in tie-break order
C_FAULT, C_MOVE, C_MSG, C_TAIL, C_HEAD, C_SCRIPT, C_OP, C_TIMER = range(8)

E_FAULT, E_MOVE, E_MSG, E_PHASE1, E_PHASE2, E_PHASE3, E_SCRIPT, E_OP, E_OPDONE = range(9)

TRACE_LEVELS = ("full", "audit", "ops")

_NO_KEY = (0, 0, "")


class SchedulingError(RuntimeError):
    """The kernel was asked to do something inconsistent; always a harness bug."""


class Envelope(NamedTuple):
    kind: str
    sender: Any
    receiver: Any
    payload: tuple
    send_tick: int
    deliver_tick: int


def node_name(x: Any) -> str:
    return f"s{x}" if type(x) is int else str(x)


def fmt_pairs(pairs) -> str:
    items = [format_pair(p) if isinstance(p, tuple) and len(p) == 2 else "?" for p in pairs]
    return ",".join(items) or "-"


def fmt_ids(ids) -> str:
    return ",".join(node_name(i) for i in sorted(ids, key=id_key)) or "-"


def fmt_epochs(entries: dict) -> str:
    items = [f"{format_pair(p) if isinstance(p, tuple) else '?'}:{e}" for p, e in entries.items()]
    return ",".join(sorted(items)) or "-"


class DelayPolicy:
    """Per-envelope delay in ``[1, delta]``."""

    def __init__(self, kind: str, delta: int, rng: random.Random, is_faulty: Callable[[Any], bool]):
        self.kind = kind
        self.delta = delta
        self.rng = rng
        self.is_faulty = is_faulty

    def __call__(self, sender: Any, receiver: Any) -> int:
        if self.kind == "fixed-max":
            return self.delta
        if self.kind == "uniform":
            return self.rng.randint(1, self.delta)
        if self.kind == "byzantine-fast":
            return 1 if self.is_faulty(sender) or self.is_faulty(receiver) else self.delta
        raise SchedulingError(f"unknown delay policy {self.kind!r}")


@dataclass
class OpResult:
    client: str
    kind: str
    value: Optional[str]
    sn: Any
    t_begin: int
    t_end: int


@dataclass
class SimResult:
    scenario: Scenario
    trace: list
    ops: list = field(default_factory=list)
    ledger: Optional[FaultLedger] = None
    envelopes: int = 0

    def text(self) -> str:
        return "".join(line + "\n" for line in self.trace)


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None, maintenance: Optional[bool] = None,
                 trace_level: str = "full"):
        scenario.validate()
        if trace_level not in TRACE_LEVELS:
            raise ValueError(f"trace level must be one of {TRACE_LEVELS}")
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.maintenance = scenario.maintenance if maintenance is None else maintenance
        self.level = trace_level
        self.params = p = scenario.params
        self.servers = [ServerState(i, p) for i in range(p.n)]
        self.writer = WriterState("w", p)
        self.readers = {r: ReaderState(r, p) for r in scenario.reader_ids}
        self.clients = ["w", *scenario.reader_ids]

        rng = lambda tag: random.Random(f"{self.seed}:{tag}")  # noqa: E731
        self.fault_rng = rng("transient")
        self.movement = Movement(scenario.movement, p.n, p.f, rng("movement"), scenario.moves)
        self.strategy = make_strategy(scenario.strategy, p, rng("strategy"), self.clients, scenario.script)
        self.agent_at: dict[int, int] = {}  # server -> agent index
        self.ledger = FaultLedger(p.n)
        self.delay = DelayPolicy(scenario.delay, p.delta, rng("delay"), self._is_faulty)
        self.ran_phase1: dict[int, int] = {}  # server -> index of the last phase 1 it ran

        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.trace: list[str] = []
        self.ops: list[OpResult] = []
        self.open_ops: dict[str, OpResult] = {}
        self.envelopes = 0

    # ------------------------------------------------------------ plumbing

    def _is_faulty(self, x: Any) -> bool:
        return type(x) is int and x in self.agent_at

    def _push(self, tick: int, cat: int, code: int, data: Any, k1=_NO_KEY, k2=_NO_KEY) -> None:
        if tick < self.now:
            raise SchedulingError(f"event at {tick} scheduled from {self.now}")
        self.seq += 1
        heapq.heappush(self.queue, (tick, cat, k1, k2, self.seq, code, data))

    def _log(self, cat: str, node: Any, detail: str) -> None:
        self.trace.append(f"tick={self.now} cat={cat} node={node_name(node)} detail={detail}")

    def _send(self, sender: Any, outs: list[Out]) -> None:
        for out in outs:
            dests = range(self.params.n) if out.dest == ALL_SERVERS else (out.dest,)
            for r in dests:
                if not (type(r) is int and 0 <= r < self.params.n) and r not in self.clients:
                    continue  # no such process
                d = self.delay(sender, r)
                if not 1 <= d <= self.params.delta:
                    raise SchedulingError(f"delay {d} outside [1, {self.params.delta}]")
                env = Envelope(out.kind, sender, r, out.payload, self.now, self.now + d)
                self.envelopes += 1
                self._push(env.deliver_tick, C_MSG, E_MSG, env, id_key(sender), id_key(r))

    # ------------------------------------------------------------ run

    def _schedule(self) -> None:
        sc = self.sc
        self._log("meta", "sim", (
            f"n={sc.n} f={sc.f} k={sc.k} delta={sc.delta} Delta={sc.Delta} t0={sc.t0} "
            f"seed={self.seed} duration={sc.duration} delay={sc.delay} movement={sc.movement} "
            f"strategy={sc.strategy} enforce_bounds={str(sc.enforce_bounds).lower()} "
            f"maintenance={str(self.maintenance).lower()} "
            f"tau_no_tr={'-' if sc.tau_no_tr is None else sc.tau_no_tr} readers={sc.readers}"
        ))
        if not sc.enforce_bounds:
            self._log("meta", "sim", "warning=bounds-not-enforced")
        for c in sc.transients:
            self._push(c.tick, C_FAULT, E_FAULT, c)
        self._push(sc.t0, C_MOVE, E_MOVE, 0)
        if hasattr(self.strategy, "script_ticks"):
            for t in self.strategy.script_ticks():
                self._push(t, C_SCRIPT, E_SCRIPT, t)
        for op in sc.workload():
            self._push(op.tick, C_OP, E_OP, op, _NO_KEY, id_key(op.client))

    def run(self, until: Optional[int] = None) -> SimResult:
        until = self.sc.duration if until is None else until
        self._schedule()
        handlers = {
            E_FAULT: self._on_fault, E_MOVE: self._on_move, E_MSG: self._on_msg,
            E_PHASE1: self._on_phase1, E_PHASE2: self._on_phase2, E_PHASE3: self._on_phase3,
            E_SCRIPT: self._on_script, E_OP: self._on_op, E_OPDONE: self._on_opdone,
        }
        queue = self.queue
        while queue and queue[0][0] <= until:
            tick, _, _, _, _, code, data = heapq.heappop(queue)
            if tick < self.now:
                raise SchedulingError("time went backwards")
            self.now = tick
            handlers[code](data)
        self.ledger.close(until)
        return SimResult(self.sc, self.trace, self.ops, self.ledger, self.envelopes)

    # ------------------------------------------------------------ events

    def _on_fault(self, c) -> None:
        if c.tick > (self.sc.tau_no_tr if self.sc.tau_no_tr is not None else -1):
            raise SchedulingError("transient fault after tau_no_tr")
        if c.target in ("*", "all"):
            targets = list(range(self.params.n)) + (self.clients if c.target == "all" else [])
        else:
            targets = [int(c.target[1:]) if c.target.startswith("s") else c.target]
        shared_v = consistent_garbage(self.fault_rng) if c.content == "consistent" else None
        for t in targets:
            if type(t) is int:
                if shared_v is not None:
                    self.servers[t].V = list(shared_v)
                else:
                    corrupt_server(self.servers[t], c.field, c.content, self.fault_rng, self.clients)
            elif t == "w":
                corrupt_writer(self.writer, "csn" if c.field == "all" else c.field, c.content, self.fault_rng)
            elif t in self.readers:
                corrupt_reader(self.readers[t], "reply_set" if c.field == "all" else c.field, c.content,
                               self.fault_rng, self.params.n)
            else:
                raise SchedulingError(f"unknown transient target {t!r}")
            if self.level != "ops":
                self._log("fault", t, f"field={c.field} content={c.content}")

    def _on_move(self, i: int) -> None:
        placement = self.movement.placement(i)
        old = dict(self.agent_at)
        left, arrived = self.ledger.record_move(self.now, placement)
        for s in left:
            self.strategy.on_depart(old[s], self.servers[s], self.now)
        self.agent_at = {s: a for a, s in enumerate(placement)}
        for s in placement:
            if s in arrived:
                self.strategy.on_arrive(self.agent_at[s], self.servers[s], self.now)
        self._log("move", "adv", f"i={i} occupied={fmt_ids(placement)} left={fmt_ids(left)} arrived={fmt_ids(arrived)}")
        p = self.params
        nxt = self.now + p.Delta
        if nxt <= self.sc.duration:
            self._push(nxt, C_MOVE, E_MOVE, i + 1)
        if self.maintenance:
            self._push(self.now, C_HEAD, E_PHASE1, i)
            self._push(self.now + p.delta, C_TAIL, E_PHASE2, i)
            if p.Delta > p.delta:
                self._push(self.now + p.Delta, C_TAIL, E_PHASE3, i)

    def _snapshot(self, s: ServerState, phase: int, i: int, fw_in) -> None:
        if self.level == "ops":
            return
        self._log("maint", s.id, (
            f"phase={phase} i={i} byz=0 V={fmt_pairs(s.V)} W={fmt_epochs(s.W)} "
            f"FWin={fmt_pairs(sorted(fw_in, key=repr))} FW={fmt_pairs(sorted(s.FW, key=repr))}"
        ))

    def _on_phase1(self, i: int) -> None:
        for s in self.servers:
            if s.id in self.agent_at:
                if self.level != "ops":
                    self._log("maint", s.id, f"phase=1 i={i} byz=1")
                self._send(s.id, self.strategy.on_maintenance(self.agent_at[s.id], s, self.now))
                continue
            fw_in = set(s.FW)
            outs = s.maintenance_phase1(self.now)
            self.ran_phase1[s.id] = i
            self._snapshot(s, 1, i, fw_in)
            self._send(s.id, outs)

    def _tail(self, i: int, phase: int) -> None:
        for s in self.servers:
            if s.id in self.agent_at or self.ran_phase1.get(s.id) != i:
                if self.level != "ops":
                    self._log("maint", s.id, f"phase={phase} i={i} byz={int(s.id in self.agent_at)} skipped=1")
                continue
            fw_in = set(s.FW)
            outs = s.maintenance_phase2(self.now) if phase == 2 else s.maintenance_phase3(self.now)
            if phase == 2:
                self.ledger.record_recovery(self.now, s.id)
            self._snapshot(s, phase, i, fw_in)
            self._send(s.id, outs)

    def _on_phase2(self, i: int) -> None:
        self._tail(i, 2)

    def _on_phase3(self, i: int) -> None:
        self._tail(i, 3)

    def _on_script(self, t: int) -> None:
        for s, a in sorted(self.agent_at.items()):
            self._send(s, self.strategy.on_tick(a, self.servers[s], self.now))

    def _on_msg(self, env: Envelope) -> None:
        if self.level == "full":
            self._log("msg", env.receiver, f"kind={env.kind} from={node_name(env.sender)} sent={env.send_tick} {self._fmt_payload(env)}")
        r = env.receiver
        if type(r) is int:
            state = self.servers[r]
            if r in self.agent_at:
                self._send(r, self.strategy.on_message(self.agent_at[r], state, env, self.now))
            else:
                self._send(r, self._dispatch(state, env))
        elif r in self.readers and env.kind == REPLY and type(env.sender) is int:
            self.readers[r].handle_reply(env.sender, env.payload[1], self.now)

    @staticmethod
    def _fmt_payload(env: Envelope) -> str:
        k, pl = env.kind, env.payload
        if k == WRITE:
            return f"pair={format_pair(Pair(*pl))}"
        if k == WRITE_FW:
            return f"pair={format_pair(pl[1])}"
        if k == ECHO:
            return f"vw={fmt_pairs(pl[1])} pr={fmt_ids(pl[2])}"
        if k == REPLY:
            return f"vw={fmt_pairs(pl[1])}"
        return f"client={node_name(pl[0])}"

    def _dispatch(self, s: ServerState, env: Envelope) -> list[Out]:
        k, pl, sender = env.kind, env.payload, env.sender
        from_server = type(sender) is int
        # channels are authenticated: the origin is the envelope sender, never the payload
        if k == WRITE and sender == self.writer.id:
            return s.handle_write(*pl)
        if k == WRITE_FW and from_server:
            return s.handle_write_fw(sender, _as_pair(pl[1]))
        if k == ECHO and from_server:
            return s.handle_echo(sender, [_as_pair(p) for p in pl[1]], pl[2])
        if k == READ and sender in self.readers:
            return s.handle_read(sender)
        if k == READ_FW and from_server:
            return s.handle_read_fw(pl[0])
        if k == READ_ACK and sender in self.readers:
            return s.handle_read_ack(sender)
        return []

    def _on_op(self, op) -> None:
        if op.kind == "write":
            outs, end = self.writer.write(op.payload, self.now)
            rec = OpResult("w", "write", op.payload, self.writer.csn, self.now, end)
            self._log("op", "w", f"kind=write value={op.payload} sn={self.writer.csn} end={end}")
            self._send("w", outs)
        else:
            reader = self.readers[op.client]
            outs, end = reader.read(self.now)
            rec = OpResult(op.client, "read", None, None, self.now, end)
            self._log("op", op.client, f"kind=read end={end}")
            self._send(op.client, outs)
        self.open_ops[op.client] = rec
        self._push(end, C_TIMER, E_OPDONE, op.client, _NO_KEY, id_key(op.client))

    def _on_opdone(self, client: str) -> None:
        rec = self.open_ops.pop(client)
        rec.t_end = self.now
        if client == "w":
            self.writer.confirm()
            self._log("timer", "w", f"kind=write value={rec.value} sn={rec.sn} start={rec.t_begin}")
        else:
            outs, chosen = self.readers[client].finish()
            rec.value, rec.sn = chosen.value, chosen.sn
            self._log("timer", client, f"kind=read value={'_' if chosen.value is None else chosen.value} "
                                       f"sn={'_' if chosen.sn is None else chosen.sn} start={rec.t_begin}")
            self._send(client, outs)
        self.ops.append(rec)


def _as_pair(p: Any) -> Pair:
    if isinstance(p, Pair):
        return p
    if isinstance(p, tuple) and len(p) == 2:
        return Pair(*p)
    return EMPTY


def simulate(scenario: Scenario, seed: Optional[int] = None, maintenance: Optional[bool] = None,
             trace_level: str = "full") -> SimResult:
    return Simulation(scenario, seed, maintenance, trace_level).run()
