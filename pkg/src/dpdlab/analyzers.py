"""Streaming application-layer analyzers.

Analyzers are fed one direction at a time and return the events the new
bytes produced. Parsing is line oriented; every analyzer gives the same
event sequence for any chunking of the same streams.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field

from .stream import Direction, ORIG, RESP


class EventKind(enum.Enum):
    HTTP_REQUEST = "HttpRequest"
    HTTP_RESPONSE = "HttpResponse"
    SMTP_COMMAND = "SmtpCommand"
    SMTP_REPLY = "SmtpReply"
    WEIRD = "Weird"
    VIOLATION = "Violation"


@dataclass(frozen=True)
class AnalyzerEvent:
    kind: EventKind
    detail: dict
    at_byte: int
    direction: Direction = ORIG
    analyzer: str = ""

    def __post_init__(self) -> None:
        if self.kind is EventKind.VIOLATION and "reason" not in self.detail:
            raise ValueError("Violation events carry a reason")
        if self.kind is EventKind.WEIRD and "weird_name" not in self.detail:
            raise ValueError("Weird events carry a weird_name")

    def key(self) -> tuple:
        """Chunking-independent identity, used by invariance checks."""
        return (self.kind, tuple(sorted(self.detail.items())), self.at_byte, self.direction)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail, "at_byte": self.at_byte,
                "dir": self.direction.value, "analyzer": self.analyzer}


def dump_events(events, fh) -> None:
    """Event log: one JSON object per line, mirroring the event fields."""
    for e in events:
        fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


@dataclass
class WeirdSampler:
    """Rate limiter for repeated weird events of the same name.

    The first ``emit_first`` occurrences pass; after that one occurrence
    in every ``sample_every`` passes, starting with the next one.
    """

    emit_first: float = 5
    sample_every: int = 1000
    seen: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    @classmethod
    def disabled(cls) -> "WeirdSampler":
        return cls(emit_first=math.inf, sample_every=1)

    @property
    def enabled(self) -> bool:
        return not (math.isinf(self.emit_first) or self.sample_every == 1)

    def fresh(self) -> "WeirdSampler":
        return WeirdSampler(self.emit_first, self.sample_every)

    def report(self, name: str) -> bool:
        n = self.seen.get(name, 0) + 1
        self.seen[name] = n
        if n <= self.emit_first:
            return True
        return (n - self.emit_first - 1) % self.sample_every == 0


def report_weird(sampler: WeirdSampler, name: str) -> bool:
    return sampler.report(name)


# RFC 7230 tchar
_TCHAR = rb"!#$%&'*+\-.^_`|~0-9A-Za-z"
_TOKEN_PREFIX = re.compile(rb"[" + _TCHAR + rb"]*")
_REQUEST_LINE = re.compile(
    rb"([" + _TCHAR + rb"]+) ([\x21-\x7e\x80-\xff]+) HTTP/([0-9])\.([0-9])\Z")
_STATUS_LINE = re.compile(rb"HTTP/([0-9])\.([0-9]) ([0-9]{3})(?: [^\x00-\x08\x0a-\x1f\x7f]*)?\Z")
_HEADER_LINE = re.compile(rb"([" + _TCHAR + rb"]+):[ \t]*(.*?)[ \t]*\Z", re.S)
_HTTP_VERSION_PREFIX = b"HTTP/"


class Analyzer:
    """Base class: per-direction line splitting, offsets and violation absorption."""

    name = "analyzer"

    def __init__(self, sampler: WeirdSampler | None = None, base_offsets=(0, 0)):
        self.sampler = sampler.fresh() if sampler is not None else WeirdSampler()
        self.violated = False
        self._buf = {ORIG: bytearray(), RESP: bytearray()}
        self._offset = {ORIG: base_offsets[0], RESP: base_offsets[1]}
        self._line_start = dict(self._offset)
        self._desynced = {ORIG: False, RESP: False}
        self.bytes_fed = {ORIG: 0, RESP: 0}

    # subclass hooks
    def _line(self, direction: Direction, line: bytes, at: int) -> list[AnalyzerEvent]:
        raise NotImplementedError

    def _partial_error(self, direction: Direction, partial: bytes) -> int | None:
        """Index of a byte that makes the unterminated ``partial`` line unparseable."""
        return None

    def _body_remaining(self, direction: Direction) -> int:
        return 0

    def _consume_body(self, direction: Direction, n: int) -> None:
        pass

    def _event(self, kind, detail, at, direction) -> AnalyzerEvent:
        return AnalyzerEvent(kind, detail, at, direction, self.name)

    def _violation(self, reason: str, at: int, direction: Direction) -> list[AnalyzerEvent]:
        self.violated = True
        return [self._event(EventKind.VIOLATION, {"reason": reason}, at, direction)]

    def _weird(self, name: str, at: int, direction: Direction) -> list[AnalyzerEvent]:
        if self.sampler.report(name):
            return [self._event(EventKind.WEIRD, {"weird_name": name}, at, direction)]
        return []

    def gap(self, direction: Direction, length: int) -> list[AnalyzerEvent]:
        """Bytes were lost before reaching this analyzer; stop parsing ``direction``."""
        if length > 0:
            self._desynced[direction] = True
            self._offset[direction] += length
        return []

    def feed(self, direction: Direction, data: bytes) -> list[AnalyzerEvent]:
        self.bytes_fed[direction] += len(data)
        if self.violated or self._desynced[direction] or not data:
            self._offset[direction] += len(data)
            return []
        events: list[AnalyzerEvent] = []
        buf = self._buf[direction]
        pos = 0
        n = len(data)
        while pos < n and not self.violated:
            remaining = self._body_remaining(direction)
            if remaining:
                take = min(remaining, n - pos)
                self._consume_body(direction, take)
                pos += take
                self._offset[direction] += take
                self._line_start[direction] = self._offset[direction]
                continue
            nl = data.find(b"\n", pos)
            if nl < 0:
                buf += data[pos:]
                self._offset[direction] += n - pos
                pos = n
                bad = self._partial_error(direction, bytes(buf))
                if bad is not None:
                    events += self._violation("malformed line", self._line_start[direction] + bad,
                                              direction)
                break
            buf += data[pos:nl]
            self._offset[direction] += nl + 1 - pos
            pos = nl + 1
            raw = bytes(buf)
            buf.clear()
            at = self._line_start[direction]
            self._line_start[direction] = self._offset[direction]
            # same check as for unterminated lines, so chunking cannot move the report
            bad = self._partial_error(direction, raw)
            if bad is not None:
                events += self._violation("malformed line", at + bad, direction)
                break
            events += self._line(direction, raw[:-1] if raw.endswith(b"\r") else raw, at)
        if pos < n:
            self._offset[direction] += n - pos
        return events

    def end(self, direction: Direction) -> list[AnalyzerEvent]:
        return []


class HttpAnalyzer(Analyzer):
    """HTTP/1.x request and response heads, Content-Length bodies only."""

    name = "http"

    def __init__(self, sampler: WeirdSampler | None = None, base_offsets=(0, 0)):
        super().__init__(sampler, base_offsets)
        self.phase = {ORIG: "request-line", RESP: "status-line"}
        self._body = {ORIG: 0, RESP: 0}
        self._headers = {ORIG: {}, RESP: {}}
        self.keep_alive = False
        self.requests_seen = 0
        self.responses_seen = 0

    def _body_remaining(self, direction):
        return self._body[direction]

    def _consume_body(self, direction, n):
        self._body[direction] -= n
        if self._body[direction] == 0:
            self.phase[direction] = "request-line" if direction is ORIG else "status-line"

    def _partial_error(self, direction, partial):
        phase = self.phase[direction]
        if phase == "request-line":
            if partial == b"\r":
                return None
            end = _TOKEN_PREFIX.match(partial).end()
            if end == len(partial) or (partial[end] == 0x20 and end > 0):
                return None
            return end
        if phase == "status-line":
            head = partial[:len(_HTTP_VERSION_PREFIX)]
            if partial == b"\r" or _HTTP_VERSION_PREFIX.startswith(head):
                return None
            return next(i for i, (a, b) in enumerate(zip(head, _HTTP_VERSION_PREFIX)) if a != b)
        return None

    def _line(self, direction, line, at):
        phase = self.phase[direction]
        if phase == "request-line":
            if not line:
                return self._weird("empty_request_line", at, direction)
            m = _REQUEST_LINE.match(line)
            if not m:
                return self._violation("malformed request line", at, direction)
            self.phase[direction] = "headers"
            self._headers[direction] = {}
            self.requests_seen += 1
            method, uri = m.group(1).decode("latin-1"), m.group(2).decode("latin-1")
            version = f"{m.group(3).decode()}.{m.group(4).decode()}"
            return [self._event(EventKind.HTTP_REQUEST,
                                {"method": method, "uri": uri, "version": version}, at, direction)]
        if phase == "status-line":
            if not line:
                return []
            m = _STATUS_LINE.match(line)
            if not m:
                return self._violation("malformed status line", at, direction)
            self.phase[direction] = "headers"
            self._headers[direction] = {}
            self.responses_seen += 1
            version = f"{m.group(1).decode()}.{m.group(2).decode()}"
            detail = {"status_code": int(m.group(3)), "version": version}
            return [self._event(EventKind.HTTP_RESPONSE, detail, at, direction)]
        # headers
        if line:
            m = _HEADER_LINE.match(line)
            if not m:
                return self._violation("malformed header line", at, direction)
            self._headers[direction][m.group(1).decode("latin-1").lower()] = m.group(2)
            return []
        headers = self._headers[direction]
        if direction is ORIG:
            self.keep_alive = headers.get("connection", b"").lower() == b"keep-alive"
        length = headers.get("content-length", b"0")
        if not length.isdigit():
            return self._violation("bad content-length", at, direction)
        self._body[direction] = int(length)
        self.phase[direction] = ("body" if self._body[direction]
                                 else "request-line" if direction is ORIG else "status-line")
        return []


class SmtpAnalyzer(Analyzer):
    """Minimal SMTP line grammar: ``<verb> [args]`` commands, ``<3 digits>`` replies."""

    name = "smtp"

    _CONTROL = re.compile(rb"[\x00-\x08\x0a-\x1f\x7f]")
    _REPLY = re.compile(rb"([0-9]{3})(?:[ -](.*))?\Z", re.S)

    def _partial_error(self, direction, partial):
        if direction is ORIG:
            m = self._CONTROL.search(partial.rstrip(b"\r"))
            return m.start() if m else None
        for i, b in enumerate(partial[:3]):
            if not 0x30 <= b <= 0x39:
                return None if (i == 0 and partial == b"\r") else i
        return None

    def _line(self, direction, line, at):
        if not line:
            return []
        if direction is ORIG:
            if self._CONTROL.search(line):
                return self._violation("control byte in command", at, direction)
            verb, _, args = line.partition(b" ")
            return [self._event(EventKind.SMTP_COMMAND,
                                {"verb": verb.decode("latin-1").upper(),
                                 "args": args.decode("latin-1")}, at, direction)]
        m = self._REPLY.match(line)
        if not m:
            return self._violation("reply must start with a 3-digit code", at, direction)
        return [self._event(EventKind.SMTP_REPLY, {"code": int(m.group(1))}, at, direction)]


class ConnSizeAnalyzer:
    """Byte and chunk counters; never reports violations."""

    name = "conn_size"

    def __init__(self) -> None:
        self.bytes = {ORIG: 0, RESP: 0}
        self.chunks = {ORIG: 0, RESP: 0}
        self.violated = False

    def feed(self, direction: Direction, data: bytes) -> list[AnalyzerEvent]:
        if data:
            self.bytes[direction] += len(data)
            self.chunks[direction] += 1
        return []

    def gap(self, direction: Direction, length: int) -> list[AnalyzerEvent]:
        return []

    def end(self, direction: Direction) -> list[AnalyzerEvent]:
        return []


class OpaqueAnalyzer(Analyzer):
    """Stand-in for a protocol without a parser: accepts every line silently."""

    def _line(self, direction, line, at):
        return []


ANALYZERS: dict[str, type[Analyzer]] = {
    "http": HttpAnalyzer,
    "smtp": SmtpAnalyzer,
}


def make_analyzer(protocol: str, sampler: WeirdSampler | None = None,
                  base_offsets=(0, 0)) -> Analyzer:
    cls = ANALYZERS.get(protocol)
    if cls is None:
        analyzer = OpaqueAnalyzer(sampler, base_offsets)
        analyzer.name = protocol
        return analyzer
    return cls(sampler, base_offsets)
