"""Monitored connections as two reassembled, in-order byte streams.

Everything above this layer (signatures, analyzers, engines) consumes
directional byte streams; packet capture and TCP reassembly are assumed
to have happened already.
"""

from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Protocol


class ScriptingError(RuntimeError):
    """The harness drove a connection in a way the stream contract forbids."""


class Direction(enum.Enum):
    ORIG = "orig"
    RESP = "resp"

    @property
    def other(self) -> "Direction":
        return Direction.RESP if self is Direction.ORIG else Direction.ORIG


ORIG = Direction.ORIG
RESP = Direction.RESP


@dataclass(frozen=True)
class FiveTuple:
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    proto: str = "tcp"

    def __post_init__(self) -> None:
        for name in ("src_port", "dst_port"):
            port = getattr(self, name)
            if not isinstance(port, int) or not 0 <= port <= 65535:
                raise ValueError(f"{name} out of range 0-65535: {port!r}")
        if self.proto != "tcp":
            raise ValueError(f"only tcp connections are modelled, got {self.proto!r}")


@dataclass(frozen=True)
class Chunk:
    direction: Direction
    payload: bytes

    def __post_init__(self) -> None:
        if not self.payload:
            raise ValueError("chunk payload must be non-empty")


class StreamConsumer(Protocol):
    def on_data(self, direction: Direction, payload: bytes): ...

    def on_end(self, direction: Direction): ...


@dataclass
class Connection:
    id: FiveTuple
    orig_bytes_delivered: int = 0
    resp_bytes_delivered: int = 0
    closed: dict = field(default_factory=lambda: {ORIG: False, RESP: False})

    def delivered(self, direction: Direction) -> int:
        if direction is ORIG:
            return self.orig_bytes_delivered
        return self.resp_bytes_delivered

    @property
    def fully_closed(self) -> bool:
        return self.closed[ORIG] and self.closed[RESP]

    def deliver(self, chunk: Chunk, consumer: StreamConsumer | None = None):
        """Hand ``chunk`` to ``consumer`` and account for it.

        Returns whatever the consumer returns (engines return analyzer events).
        """
        if self.closed[chunk.direction]:
            raise ScriptingError(f"delivery on closed {chunk.direction.value} direction")
        result = consumer.on_data(chunk.direction, chunk.payload) if consumer else None
        if chunk.direction is ORIG:
            self.orig_bytes_delivered += len(chunk.payload)
        else:
            self.resp_bytes_delivered += len(chunk.payload)
        return result

    def close(self, direction: Direction, consumer: StreamConsumer | None = None):
        if self.closed[direction]:
            return None
        self.closed[direction] = True
        return consumer.on_end(direction) if consumer else None


def new_connection(tuple_: FiveTuple) -> Connection:
    return Connection(id=tuple_)


def make_tuple(dst_port: int, src_port: int = 49152) -> FiveTuple:
    """Convenience tuple for lab conversations (client 10.0.0.1, server 10.0.0.2)."""
    return FiveTuple("10.0.0.1", "10.0.0.2", src_port, dst_port)


# -- conversation traces ---------------------------------------------------

@dataclass(frozen=True)
class CloseEvent:
    direction: Direction


def dump_trace(records: Iterable[Chunk | CloseEvent], fh: IO[str]) -> None:
    """Write records as JSON lines: ``{"dir", "data_b64"}`` or ``{"event": "close", "dir"}``."""
    for rec in records:
        if isinstance(rec, CloseEvent):
            obj = {"event": "close", "dir": rec.direction.value}
        else:
            obj = {"dir": rec.direction.value,
                   "data_b64": base64.b64encode(rec.payload).decode("ascii")}
        fh.write(json.dumps(obj) + "\n")


def load_trace(fh: IO[str]) -> Iterator[Chunk | CloseEvent]:
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            direction = Direction(obj["dir"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"trace line {lineno}: {exc}") from exc
        if obj.get("event") == "close":
            yield CloseEvent(direction)
        elif "event" in obj:
            raise ValueError(f"trace line {lineno}: unknown event {obj['event']!r}")
        else:
            payload = base64.b64decode(obj["data_b64"], validate=True)
            if payload:
                yield Chunk(direction, payload)
