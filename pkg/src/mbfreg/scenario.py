"""Scenario files: flat ``key=value`` lines, list entries as repeated keys.

Example::

    n=5
    f=1
    k=1
    delta=4
    Delta=8
    duration=400
    strategy=random-garbage
    movement=random
    auto_writes=20
    auto_reads=20
    op=10:r0:read
    transient=30:*:V:random
    tau_no_tr=30
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .adversary import MOVEMENTS, STRATEGIES, Corruption, ScriptAction
from .params import BoundsError, Params

DELAYS = ("fixed-max", "uniform", "byzantine-fast")


class ScenarioError(ValueError):
    """The scenario file is malformed or inconsistent."""


@dataclass(frozen=True)
class Op:
    tick: int
    client: str
    kind: str
    payload: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "Op":
        parts = text.split(":")
        if len(parts) not in (3, 4) or parts[2] not in ("read", "write"):
            raise ScenarioError(f"bad op {text!r}")
        payload = parts[3] if len(parts) == 4 else None
        return cls(int(parts[0]), parts[1], parts[2], payload)

    def __str__(self) -> str:
        base = f"{self.tick}:{self.client}:{self.kind}"
        return base + (f":{self.payload}" if self.payload is not None else "")


@dataclass
class Scenario:
    n: int
    f: int
    k: int
    delta: int
    Delta: int
    duration: int
    t0: int = 0
    seed: int = 0
    delay: str = "uniform"
    movement: str = "round-robin"
    moves: list = field(default_factory=list)
    strategy: str = "silent"
    script: list = field(default_factory=list)
    tau_no_tr: Optional[int] = None
    transients: list = field(default_factory=list)
    readers: int = 1
    ops: list = field(default_factory=list)
    auto_writes: int = 0
    auto_reads: int = 0
    op_start: int = 1
    write_gap_min: int = 1
    write_gap_max: int = 8
    read_gap_min: int = 1
    read_gap_max: int = 8
    enforce_bounds: bool = True
    maintenance: bool = True

    @property
    def params(self) -> Params:
        return Params(self.n, self.f, self.k, self.delta, self.Delta, self.t0, self.enforce_bounds)

    @property
    def reader_ids(self) -> list[str]:
        return [f"r{i}" for i in range(self.readers)]

    def validate(self) -> None:
        try:
            self.params.validate()
        except BoundsError as exc:
            raise ScenarioError(str(exc)) from exc
        if self.delay not in DELAYS:
            raise ScenarioError(f"unknown delay policy {self.delay!r}")
        if self.movement not in MOVEMENTS:
            raise ScenarioError(f"unknown movement {self.movement!r}")
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown strategy {self.strategy!r}")
        if self.f > self.n:
            raise ScenarioError("more agents than servers")
        for placement in self.moves:
            if len(placement) > self.f or any(not 0 <= s < self.n for s in placement):
                raise ScenarioError(f"bad placement {placement!r}")
        for c in self.transients:
            if self.tau_no_tr is None or c.tick > self.tau_no_tr:
                raise ScenarioError(f"transient at {c.tick} after tau_no_tr={self.tau_no_tr}")
        clients = {"w", *self.reader_ids}
        for op in self.ops:
            if op.client not in clients:
                raise ScenarioError(f"unknown client {op.client!r}")
            if (op.kind == "write") != (op.client == "w"):
                raise ScenarioError(f"only the writer w writes, only readers read: {op}")

    def workload(self) -> list[Op]:
        """Explicit ops plus the seeded automatic ones, sorted by tick."""
        rng = random.Random(f"{self.seed}:workload")
        ops = list(self.ops)
        t = self.op_start
        for i in range(self.auto_writes):
            t += rng.randint(self.write_gap_min, self.write_gap_max)
            ops.append(Op(t, "w", "write", f"w{i + 1}"))
            t += self.delta
        for r in self.reader_ids:
            t = self.op_start
            for _ in range(self.auto_reads):
                t += rng.randint(self.read_gap_min, self.read_gap_max)
                ops.append(Op(t, r, "read"))
                t += 2 * self.delta
        ops.sort(key=lambda o: (o.tick, o.client))
        busy: dict[str, int] = {}
        for op in ops:
            span = self.delta if op.kind == "write" else 2 * self.delta
            if op.tick <= busy.get(op.client, -1):
                raise ScenarioError(f"{op.client} starts {op} before its previous operation returned")
            busy[op.client] = op.tick + span
        return ops

    # serialization

    def dumps(self) -> str:
        lines = []
        for fd in fields(self):
            value = getattr(self, fd.name)
            if fd.name == "moves":
                lines += [f"move={','.join(map(str, p))}" for p in value]
            elif fd.name == "script":
                lines += [f"script={a}" for a in value]
            elif fd.name == "transients":
                lines += [f"transient={c}" for c in value]
            elif fd.name == "ops":
                lines += [f"op={o}" for o in value]
            elif value is None:
                continue
            elif isinstance(value, bool):
                lines.append(f"{fd.name}={'true' if value else 'false'}")
            else:
                lines.append(f"{fd.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        kw: dict = {"moves": [], "script": [], "transients": [], "ops": []}
        types = {fd.name: fd.type for fd in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ScenarioError(f"line {lineno}: expected key=value, got {raw!r}")
            try:
                if key == "move":
                    kw["moves"].append(tuple(int(s) for s in value.split(",") if s))
                elif key == "script":
                    kw["script"].append(ScriptAction.parse(value))
                elif key == "transient":
                    kw["transients"].append(Corruption.parse(value))
                elif key == "op":
                    kw["ops"].append(Op.parse(value))
                elif key not in types or key in ("moves", "script", "transients", "ops"):
                    raise ScenarioError(f"unknown key {key!r}")
                elif types[key] in ("bool",):
                    if value not in ("true", "false"):
                        raise ScenarioError(f"{key} must be true or false")
                    kw[key] = value == "true"
                elif types[key] in ("str",):
                    kw[key] = value
                else:
                    kw[key] = int(value)
            except ScenarioError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
            except ValueError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
        missing = [k for k in ("n", "f", "k", "delta", "Delta", "duration") if k not in kw]
        if missing:
            raise ScenarioError(f"missing keys: {', '.join(missing)}")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
