"""Message kinds and the outbound-message tuple shared by every automaton."""

from __future__ import annotations

from typing import Any, NamedTuple

WRITE = "WRITE"
WRITE_FW = "WRITE_FW"
ECHO = "ECHO"
READ = "READ"
READ_FW = "READ_FW"
READ_ACK = "READ_ACK"
REPLY = "REPLY"

KINDS = (WRITE, WRITE_FW, ECHO, READ, READ_FW, READ_ACK, REPLY)

# destination meaning "every server"
ALL_SERVERS = "*"


class Out(NamedTuple):
    kind: str
    dest: Any
    payload: tuple
