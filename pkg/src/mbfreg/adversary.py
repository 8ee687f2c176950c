"""Mobile Byzantine agents under synchronized movement, and transient faults.

Agents move all together at ``t0 + i*Delta``.  A vacated server is cured: it
runs the correct code again on whatever state the agent left behind, and is
never told it was occupied.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Optional

from .messages import ALL_SERVERS, ECHO, READ, READ_FW, REPLY, WRITE, WRITE_FW, Out
from .params import Params
from .timestamps import EMPTY, Pair, is_valid_pair, parse_pair

MOVEMENTS = ("round-robin", "random", "script")
STRATEGIES = ("silent", "random-garbage", "stale-replay", "equivocate-scripted")


def max_faulty_in_window(T: int, Delta: int, f: int, delta: Optional[int] = None) -> int:
    """Most servers touched by ``f`` agents during any window of length ``T``."""
    if T < 0 or Delta < 1 or f < 0:
        raise ValueError("need T >= 0, Delta >= 1, f >= 0")
    if delta is not None and not (delta <= Delta and T >= delta):
        raise ValueError(f"needs delta <= Delta and T >= delta (T={T}, Delta={Delta}, delta={delta})")
    return (math.ceil(T / Delta) + 1) * f


# ---------------------------------------------------------------- movement


class Movement:
    """Yields the occupied server set for the i-th movement instant."""

    def __init__(self, kind: str, n: int, f: int, rng: random.Random, script: Iterable = ()):
        if kind not in MOVEMENTS:
            raise ValueError(f"unknown movement {kind!r}")
        self.kind = kind
        self.n = n
        self.f = f
        self.rng = rng
        self.script = [tuple(p) for p in script]
        self.current: tuple = ()

    def placement(self, i: int) -> tuple:
        if self.f == 0:
            nxt: tuple = ()
        elif self.kind == "round-robin":
            nxt = tuple((i * self.f + a) % self.n for a in range(self.f))
        elif self.kind == "random":
            free = [s for s in range(self.n) if s not in self.current]
            pool = free if len(free) >= self.f else list(range(self.n))
            nxt = tuple(self.rng.sample(pool, self.f))
        else:
            # exhausted script: hold the last placement
            nxt = self.script[i] if i < len(self.script) else self.current
            nxt = tuple(nxt)[: self.f]
        self.current = nxt
        return nxt


# ---------------------------------------------------------------- state corruption


def random_pair(rng: random.Random, tag: str = "g") -> Pair:
    return Pair(f"{tag}{rng.randrange(10**6)}", rng.choice([None, -1, 0, 1, 2, 3, 4, 5, 7, 9, 42]))


def random_z5_pair(rng: random.Random, tag: str = "g") -> Pair:
    return Pair(f"{tag}{rng.randrange(10**6)}", rng.randrange(5))


def scramble_server(state, rng: random.Random, clients: Iterable[str] = ()) -> None:
    """Overwrite every protocol variable of a server with arbitrary content."""
    clients = list(clients)
    origins = list(range(state.params.n)) + [-1, 99]
    state.V = [rng.choice([EMPTY, random_pair(rng), random_z5_pair(rng)]) for _ in range(3)]
    state.W = {random_pair(rng): rng.choice([-3, -1, 0, 1, 2, 7]) for _ in range(rng.randrange(7))}
    state.FW = {rng.choice([random_pair(rng), random_z5_pair(rng)]) for _ in range(rng.randrange(6))}
    for name in ("echo_vals", "fw_vals"):
        table: dict = {}
        for _ in range(rng.randrange(8)):
            table.setdefault(random_z5_pair(rng), {})[rng.choice(origins)] = rng.choice([-2, -1, 0, 1, 5])
        setattr(state, name, table)
    pool = clients + ["ghost", 17]
    state.pending_read = set(rng.sample(pool, rng.randrange(len(pool) + 1)))
    state.echo_read = set(rng.sample(pool, rng.randrange(len(pool) + 1)))


# ---------------------------------------------------------------- strategies


@dataclass
class ScriptAction:
    """One scripted Byzantine step: at ``tick``, if ``server`` is occupied, send."""

    tick: int
    server: int
    kind: str
    dest: str
    pairs: tuple
    readers: tuple = ()

    @classmethod
    def parse(cls, text: str) -> "ScriptAction":
        # tick:server:KIND:dest:pairs[:readers]
        parts = text.split(":")
        if len(parts) not in (5, 6):
            raise ValueError(f"bad script action {text!r}")
        pairs = tuple(parse_pair(p) for p in parts[4].split(",") if p and p != "-")
        readers = tuple(r for r in parts[5].split(",") if r) if len(parts) == 6 else ()
        return cls(int(parts[0]), int(parts[1]), parts[2], parts[3], pairs, readers)

    def __str__(self) -> str:
        pairs = ",".join(str(p) for p in self.pairs) or "-"
        base = f"{self.tick}:{self.server}:{self.kind}:{self.dest}:{pairs}"
        return base + (":" + ",".join(self.readers) if self.readers else "")


class Strategy:
    """Behaviour of an occupied server.  One instance drives all ``f`` agents."""

    name = "abstract"

    def __init__(self, params: Params, rng: random.Random, clients: Iterable[str]):
        self.params = params
        self.rng = rng
        self.clients = list(clients)
        self.readers_seen: dict[int, set] = {}

    def observe_readers(self, agent: int, env) -> None:
        seen = self.readers_seen.setdefault(agent, set())
        if env.kind in (READ, READ_FW):
            seen.add(env.payload[0])
        elif env.kind == ECHO:
            seen.update(r for r in env.payload[2] if r in self.clients)

    def on_arrive(self, agent: int, state, now: int) -> None:
        pass

    def on_message(self, agent: int, state, env, now: int) -> list[Out]:
        return []

    def on_maintenance(self, agent: int, state, now: int) -> list[Out]:
        return []

    def on_tick(self, agent: int, state, now: int) -> list[Out]:
        return []

    def on_depart(self, agent: int, state, now: int) -> None:
        pass


class Silent(Strategy):
    name = "silent"

    def on_depart(self, agent, state, now):
        scramble_server(state, self.rng, self.clients)


class RandomGarbage(Strategy):
    name = "random-garbage"

    def _pairs(self) -> tuple:
        return tuple(random_pair(self.rng) for _ in range(self.rng.randrange(1, 4)))

    def on_message(self, agent, state, env, now):
        self.observe_readers(agent, env)
        out: list[Out] = []
        if env.kind == READ:
            out.append(Out(REPLY, env.payload[0], (state.id, self._pairs())))
        elif env.kind == WRITE:
            for s in range(self.params.n):
                out.append(Out(WRITE_FW, s, (state.id, self._pairs()[0])))
        return out

    def on_maintenance(self, agent, state, now):
        out = [Out(ECHO, s, (state.id, self._pairs(), frozenset())) for s in range(self.params.n)]
        out += [Out(REPLY, r, (state.id, self._pairs())) for r in sorted(self.readers_seen.get(agent, ()))]
        return out

    def on_depart(self, agent, state, now):
        scramble_server(state, self.rng, self.clients)


class StaleReplay(Strategy):
    """Answer with the oldest values this agent has ever seen."""

    name = "stale-replay"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.memory: dict[int, list] = {}

    def _remember(self, agent: int, pairs: Iterable) -> None:
        mem = self.memory.setdefault(agent, [])
        for p in pairs:
            if len(mem) >= 3:
                return
            if is_valid_pair(p) and p not in mem:
                mem.append(p)

    def on_arrive(self, agent, state, now):
        self._remember(agent, state.V)

    def on_message(self, agent, state, env, now):
        self.observe_readers(agent, env)
        if env.kind == WRITE:
            self._remember(agent, [Pair(*env.payload)])
        elif env.kind == WRITE_FW:
            self._remember(agent, [env.payload[1]])
        elif env.kind in (ECHO, REPLY):
            self._remember(agent, env.payload[1])
        if env.kind == READ:
            stale = tuple(self.memory.get(agent, ()))
            return [Out(REPLY, env.payload[0], (state.id, stale))]
        return []

    def on_maintenance(self, agent, state, now):
        stale = tuple(self.memory.get(agent, ()))
        out = [Out(ECHO, ALL_SERVERS, (state.id, stale, frozenset()))]
        out += [Out(REPLY, r, (state.id, stale)) for r in sorted(self.readers_seen.get(agent, ()))]
        return out


class Equivocate(Strategy):
    """Tell different destinations different things.

    Without a script, every occupation forges its own value one step ahead of
    the newest stamp seen and sends it to odd-numbered destinations while even
    ones get the genuine newest value.  Scripted actions are sent verbatim.
    """

    name = "equivocate-scripted"

    def __init__(self, params, rng, clients, script: Iterable[ScriptAction] = ()):
        super().__init__(params, rng, clients)
        self.script: dict[int, list[ScriptAction]] = {}
        for action in script:
            self.script.setdefault(action.tick, []).append(action)
        self.scripted = bool(self.script)
        self.newest: dict[int, Pair] = {}
        self.occupation: dict[int, int] = {}

    def on_arrive(self, agent, state, now):
        self.occupation[agent] = now
        live = [p for p in state.V if is_valid_pair(p)]
        if live:
            self.newest[agent] = live[-1]

    def _see(self, agent: int, p) -> None:
        if is_valid_pair(p):
            cur = self.newest.get(agent)
            if cur is None or (p.sn - cur.sn) % 5 in (1, 2):
                self.newest[agent] = p

    def _views(self, agent: int, state) -> tuple[tuple, tuple]:
        real = self.newest.get(agent)
        if real is None:
            return (), ()
        forged = Pair(f"forged{agent}t{self.occupation.get(agent, 0)}", (real.sn + 1) % 5)
        return (real,), (forged,)

    def on_message(self, agent, state, env, now):
        self.observe_readers(agent, env)
        if env.kind == WRITE:
            self._see(agent, Pair(*env.payload))
        elif env.kind == WRITE_FW:
            self._see(agent, env.payload[1])
        if self.scripted:
            return []
        real, forged = self._views(agent, state)
        if env.kind == READ:
            reader = env.payload[0]
            view = forged if self.clients.index(reader) % 2 else real
            return [Out(REPLY, reader, (state.id, view))]
        if env.kind == WRITE and forged:
            return [Out(WRITE_FW, s, (state.id, (forged if s % 2 else real)[0])) for s in range(self.params.n)]
        return []

    def on_maintenance(self, agent, state, now):
        if self.scripted:
            return []
        real, forged = self._views(agent, state)
        out = [Out(ECHO, s, (state.id, forged if s % 2 else real, frozenset())) for s in range(self.params.n)]
        for r in sorted(self.readers_seen.get(agent, ())):
            out.append(Out(REPLY, r, (state.id, forged if self.clients.index(r) % 2 else real)))
        return out

    def on_tick(self, agent, state, now):
        out = []
        for action in self.script.get(now, ()):
            if action.server != state.id:
                continue
            dest = ALL_SERVERS if action.dest == "*" else (int(action.dest[1:]) if action.dest.startswith("s") else action.dest)
            if action.kind == ECHO:
                payload = (state.id, action.pairs, frozenset(action.readers))
            elif action.kind == WRITE_FW:
                payload = (state.id, action.pairs[0])
            else:
                payload = (state.id, action.pairs)
            out.append(Out(action.kind, dest, payload))
        return out

    def script_ticks(self) -> list[int]:
        return sorted(self.script)


def make_strategy(kind: str, params: Params, rng: random.Random, clients: Iterable[str], script=()) -> Strategy:
    if kind == "silent":
        return Silent(params, rng, clients)
    if kind == "random-garbage":
        return RandomGarbage(params, rng, clients)
    if kind == "stale-replay":
        return StaleReplay(params, rng, clients)
    if kind == "equivocate-scripted":
        return Equivocate(params, rng, clients, script)
    raise ValueError(f"unknown strategy {kind!r}")


# ---------------------------------------------------------------- transient faults


@dataclass
class Corruption:
    tick: int
    target: str  # "s3", "w", "r0", "*" (every server) or "all" (every process)
    field: str  # variable name, or "all"
    content: str  # literal encoding, or "random"

    @classmethod
    def parse(cls, text: str) -> "Corruption":
        tick, target, fld, content = text.split(":", 3)
        return cls(int(tick), target, fld, content)

    def __str__(self) -> str:
        return f"{self.tick}:{self.target}:{self.field}:{self.content}"


SERVER_FIELDS = ("V", "W", "FW", "echo_vals", "fw_vals", "pending_read", "echo_read")


def _parse_pairs(text: str) -> list[Pair]:
    return [parse_pair(p) for p in text.split(",") if p and p != "-"]


def _parse_epoch_pairs(text: str) -> dict:
    out = {}
    for item in text.split(","):
        if item and item != "-":
            pair, _, epoch = item.rpartition(":")
            out[parse_pair(pair)] = int(epoch)
    return out


def _parse_table(text: str) -> dict:
    # origin/value@sn:epoch,...
    table: dict = {}
    for item in text.split(","):
        if item and item != "-":
            origin, _, rest = item.partition("/")
            pair, _, epoch = rest.rpartition(":")
            table.setdefault(parse_pair(pair), {})[int(origin)] = int(epoch)
    return table


def corrupt_server(state, fld: str, content: str, rng: random.Random, clients: Iterable[str]) -> None:
    if content == "random":
        if fld == "all":
            scramble_server(state, rng, clients)
            return
        scratch = type(state)(state.id, state.params)
        scramble_server(scratch, rng, clients)
        setattr(state, fld, getattr(scratch, fld))
        return
    if fld == "V":
        slots = _parse_pairs(content)
        state.V = (slots + [EMPTY] * 3)[:3]
    elif fld == "W":
        state.W = _parse_epoch_pairs(content)
    elif fld == "FW":
        state.FW = set(_parse_pairs(content))
    elif fld in ("echo_vals", "fw_vals"):
        setattr(state, fld, _parse_table(content))
    elif fld in ("pending_read", "echo_read"):
        setattr(state, fld, {c for c in content.split(",") if c and c != "-"})
    else:
        raise ValueError(f"unknown server field {fld!r}")


def corrupt_writer(writer, fld: str, content: str, rng: random.Random) -> None:
    if fld not in ("csn", "all"):
        raise ValueError(f"unknown writer field {fld!r}")
    if content == "random":
        writer.csn = rng.choice([None, -7, 5, 17, 42, rng.randrange(5)])
    else:
        writer.csn = None if content == "_" else int(content)


def corrupt_reader(reader, fld: str, content: str, rng: random.Random, n: int) -> None:
    if fld not in ("reply_set", "all"):
        raise ValueError(f"unknown reader field {fld!r}")
    if content == "random":
        reader.reply_set = {(rng.randrange(n), random_pair(rng)) for _ in range(rng.randrange(6))}
    else:
        reader.reply_set = set()
        for item in content.split(","):
            if item and item != "-":
                origin, _, pair = item.partition("/")
                reader.reply_set.add((int(origin), parse_pair(pair)))


def consistent_garbage(rng: random.Random) -> list[Pair]:
    """A well formed triple of never-written values, for identical corruption everywhere."""
    base = rng.randrange(5)
    return [Pair(f"fake{i}", (base + i) % 5) for i in range(3)]


class FaultLedger:
    """Who is Byzantine, cured or correct at each tick.  Never shown to protocol code."""

    def __init__(self, n: int):
        self.n = n
        self.occupied: dict[int, list] = {s: [] for s in range(n)}  # [start, end)
        self.cured: dict[int, list] = {s: [] for s in range(n)}  # [departure, recovery)
        self._open_occ: dict[int, int] = {}
        self._open_cure: dict[int, int] = {}

    def record_move(self, tick: int, placement: Iterable[int]) -> tuple[list, list]:
        placement = set(placement)
        left = sorted(s for s in self._open_occ if s not in placement)
        arrived = sorted(s for s in placement if s not in self._open_occ)
        for s in left:
            self.occupied[s].append((self._open_occ.pop(s), tick))
            self._open_cure[s] = tick
        for s in arrived:
            if s in self._open_cure:
                self.cured[s].append((self._open_cure.pop(s), tick))
            self._open_occ[s] = tick
        return left, arrived

    def record_recovery(self, tick: int, server: int) -> None:
        """The first maintenance phase 2 after departure ends the cured interval."""
        start = self._open_cure.pop(server, None)
        if start is not None:
            self.cured[server].append((start, tick))

    def close(self, tick: int) -> None:
        for s, start in list(self._open_occ.items()):
            self.occupied[s].append((start, tick + 1))
        for s, start in list(self._open_cure.items()):
            self.cured[s].append((start, tick + 1))
        self._open_occ.clear()
        self._open_cure.clear()

    @staticmethod
    def _hits(intervals: list, a: int, b: int) -> bool:
        return any(start <= b and a < end for start, end in intervals)

    def is_byzantine(self, s: int, t: int) -> bool:
        return self._hits(self.occupied[s], t, t) or (s in self._open_occ and self._open_occ[s] <= t)

    def is_cured(self, s: int, t: int) -> bool:
        return self._hits(self.cured[s], t, t) or (s in self._open_cure and self._open_cure[s] <= t)

    def is_correct(self, s: int, t: int) -> bool:
        return not self.is_byzantine(s, t) and not self.is_cured(s, t)

    def correct_throughout(self, s: int, a: int, b: int) -> bool:
        """Neither occupied nor cured at any tick of ``[a, b]``."""
        for table, live in ((self.occupied, self._open_occ), (self.cured, self._open_cure)):
            if self._hits(table[s], a, b) or (s in live and live[s] <= b):
                return False
        return True

    def byzantine_at(self, t: int) -> set:
        return {s for s in range(self.n) if self.is_byzantine(s, t)}

    def cured_at(self, t: int) -> set:
        return {s for s in range(self.n) if self.is_cured(s, t)}
