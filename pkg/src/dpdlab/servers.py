"""Table-driven web server endpoints.

Each profile encodes two tolerance behaviors: which leading bytes the
server discards before a request line (and how many), and how it reacts
to a request method it does not implement.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field

from .stream import ScriptingError

NGINX_REPETITION_CAP = 2 ** 31
PROBE_REQUEST = b"GET / HTTP/1.1\r\nHost: target\r\n\r\n"

_REASONS = {
    200: "OK",
    400: "Bad Request",
    403: "Forbidden",
    405: "Method Not Allowed",
    501: "Not Implemented",
}
_TCHAR = rb"!#$%&'*+\-.^_`|~0-9A-Za-z"
_REQUEST_LINE = re.compile(rb"([" + _TCHAR + rb"]+) (\S+) HTTP/([0-9])\.([0-9])\r?\Z")
_HEAD_END = re.compile(rb"\r?\n\r?\n")


class PrefixKind(enum.Enum):
    NONE = "none"
    CHARS = "chars"        # any mix of the listed bytes
    SEQUENCE = "sequence"  # whole repetitions of one byte sequence


class ConnectionAfter(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class IgnoredPrefix:
    kind: PrefixKind = PrefixKind.NONE
    unit: bytes = b""
    max_repetitions: int = 0

    def __post_init__(self) -> None:
        if self.kind is not PrefixKind.NONE and not self.unit:
            raise ValueError("ignored prefix needs a unit")
        self._pattern  # validate eagerly

    @property
    def _pattern(self):
        if self.kind is PrefixKind.CHARS:
            return re.compile(b"[" + b"".join(re.escape(bytes([c])) for c in self.unit) + b"]*")
        if self.kind is PrefixKind.SEQUENCE:
            return re.compile(b"(?:" + re.escape(self.unit) + b")*")
        return None

    def strip(self, data: bytes) -> tuple[int, bool]:
        """Length of the ignorable prefix of ``data`` and whether it is within limits."""
        if self.kind is PrefixKind.NONE:
            return 0, True
        if self.kind is PrefixKind.CHARS:
            n = len(data) - len(data.lstrip(self.unit))
            return n, n <= self.max_repetitions
        n = self._pattern.match(data).end()
        return n, n // len(self.unit) <= self.max_repetitions


@dataclass(frozen=True)
class UnknownMethodReaction:
    status: int | None  # None: connection closed without a response
    connection_after: ConnectionAfter


@dataclass(frozen=True)
class ServerProfile:
    name: str
    ignored_prefix: IgnoredPrefix
    unknown_method_reaction: UnknownMethodReaction
    known_methods: frozenset = frozenset({"GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS"})

    def to_dict(self) -> dict:
        ip, um = self.ignored_prefix, self.unknown_method_reaction
        return {
            "name": self.name,
            "ignored_prefix": {"kind": ip.kind.value, "unit": ip.unit.decode("latin-1"),
                               "max_repetitions": ip.max_repetitions},
            "unknown_method_reaction": {"status": um.status,
                                        "connection_after": um.connection_after.value},
            "known_methods": sorted(self.known_methods),
        }

    @classmethod
    def from_dict(cls, d: dict, base: "ServerProfile | None" = None) -> "ServerProfile":
        ip = d.get("ignored_prefix")
        um = d.get("unknown_method_reaction")
        return cls(
            name=d.get("name", base.name if base else ""),
            ignored_prefix=(IgnoredPrefix(PrefixKind(ip["kind"]),
                                          ip.get("unit", "").encode("latin-1"),
                                          int(ip.get("max_repetitions", 0)))
                            if ip is not None else base.ignored_prefix),
            unknown_method_reaction=(UnknownMethodReaction(um["status"],
                                                           ConnectionAfter(um["connection_after"]))
                                     if um is not None else base.unknown_method_reaction),
            known_methods=(frozenset(d["known_methods"]) if "known_methods" in d
                           else base.known_methods if base else cls.known_methods),
        )


_CRLF_SEQ = IgnoredPrefix(PrefixKind.SEQUENCE, b"\r\n", 20)

PROFILES: dict[str, ServerProfile] = {
    "apache": ServerProfile(
        "apache", _CRLF_SEQ, UnknownMethodReaction(501, ConnectionAfter.CLOSED)),
    "apache_hardened": ServerProfile(
        "apache_hardened", _CRLF_SEQ, UnknownMethodReaction(403, ConnectionAfter.OPEN),
        frozenset({"GET", "HEAD", "POST"})),
    "nginx": ServerProfile(
        "nginx", IgnoredPrefix(PrefixKind.CHARS, b"\r\n", NGINX_REPETITION_CAP),
        UnknownMethodReaction(405, ConnectionAfter.OPEN)),
    "iis": ServerProfile(
        "iis", IgnoredPrefix(PrefixKind.CHARS, b"\t \r\n", 16271),
        UnknownMethodReaction(405, ConnectionAfter.OPEN)),
    "lighttpd": ServerProfile(
        "lighttpd", IgnoredPrefix(), UnknownMethodReaction(501, ConnectionAfter.CLOSED)),
    "nodejs": ServerProfile(
        "nodejs", IgnoredPrefix(PrefixKind.CHARS, b"\r\n", 81797),
        UnknownMethodReaction(None, ConnectionAfter.CLOSED)),
}


def get_profile(name: str) -> ServerProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown server profile {name!r}; known: {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class LogEntry:
    method: str | None
    uri: str | None
    status: int | None


@dataclass
class ServerRunState:
    open: bool = True
    requests_handled: int = 0
    access_log: list = field(default_factory=list)
    pending: bytearray = field(default_factory=bytearray)

    def served(self, uri: str) -> bool:
        return any(e.uri == uri and e.status == 200 for e in self.access_log)


@dataclass(frozen=True)
class ServerReply:
    response: bytes
    connection_action: ConnectionAfter


def _response(profile: ServerProfile, status: int, keep_open: bool) -> bytes:
    reason = _REASONS.get(status, "Unknown")
    body = f"{status} {reason}\n".encode()
    head = (f"HTTP/1.1 {status} {reason}\r\n"
            f"Server: {profile.name}\r\n"
            f"Content-Type: text/plain\r\n"
            f"Content-Length: {len(body)}\r\n"
            f"Connection: {'keep-alive' if keep_open else 'close'}\r\n\r\n")
    return head.encode() + body


def server_respond(profile: ServerProfile, state: ServerRunState,
                   request_bytes: bytes) -> ServerReply:
    """Feed client bytes to the simulated server and collect its answer.

    Incomplete requests are buffered; pipelined requests are answered in order.
    """
    if not state.open:
        raise ScriptingError("request sent on a connection the server closed")
    state.pending += request_bytes
    out = bytearray()
    while state.open and state.pending:
        status, consumed, method, uri, keep_open = _handle_one(profile, bytes(state.pending))
        if consumed == 0:
            break
        del state.pending[:consumed]
        state.requests_handled += 1
        state.access_log.append(LogEntry(method, uri, status))
        if status is not None:
            out += _response(profile, status, keep_open)
        if not keep_open:
            state.open = False
            state.pending.clear()
    return ServerReply(bytes(out), ConnectionAfter.OPEN if state.open else ConnectionAfter.CLOSED)


def _handle_one(profile: ServerProfile, data: bytes):
    """Return (status, bytes consumed, method, uri, keep_open); consumed 0 means incomplete."""
    skipped, within = profile.ignored_prefix.strip(data)
    if not within:
        return 400, len(data), None, None, False
    rest = data[skipped:]
    if not rest:
        return None, 0, None, None, True
    first_nl = rest.find(b"\n")
    if first_nl < 0:
        token_ok = re.match(rb"[" + _TCHAR + rb"]*", rest).end()
        if token_ok < len(rest) and rest[token_ok:token_ok + 1] != b" ":
            return 400, len(data), None, None, False
        return None, 0, None, None, True
    m = _REQUEST_LINE.match(rest[:first_nl])
    if not m:
        return 400, len(data), None, None, False
    end = _HEAD_END.search(rest, first_nl - 1 if first_nl else 0)
    if end is None:
        return None, 0, None, None, True
    headers = {}
    for line in rest[first_nl + 1:end.start()].split(b"\n"):
        name, sep, value = line.rstrip(b"\r").partition(b":")
        if not sep:
            return 400, len(data), None, None, False
        headers[name.strip().lower()] = value.strip()
    length = headers.get(b"content-length", b"0")
    if not length.isdigit():
        return 400, len(data), None, None, False
    total = skipped + end.end() + int(length)
    if len(data) < total:
        return None, 0, None, None, True
    method, uri = m.group(1).decode("latin-1"), m.group(2).decode("latin-1")
    http10 = m.group(3) == b"1" and m.group(4) == b"0"
    conn_hdr = headers.get(b"connection", b"").lower()
    keep_alive = conn_hdr == b"keep-alive" if http10 else conn_hdr != b"close"
    if method in profile.known_methods:
        return 200, total, method, uri, keep_alive
    reaction = profile.unknown_method_reaction
    keep_open = keep_alive and reaction.connection_after is ConnectionAfter.OPEN
    return reaction.status, total, method, uri, keep_open


# -- prefix probing --------------------------------------------------------

@dataclass(frozen=True)
class ProbeResult:
    kind: PrefixKind
    ignored: frozenset          # ignored units: single bytes (CHARS) or sequences
    max_repetitions: dict       # unit -> largest accepted repetition count
    saturated: frozenset        # units still accepted at the probe limit

    @property
    def ignored_characters(self) -> frozenset:
        return frozenset(b for unit in self.ignored for b in unit)


def _accepted(profile: ServerProfile, prefix: bytes, request: bytes = PROBE_REQUEST) -> bool:
    reply = server_respond(profile, ServerRunState(), prefix + request)
    return reply.response.startswith(b"HTTP/1.1 200 ")


def probe_prefixes(profile: ServerProfile, repetition_limit: int = 10 ** 7) -> ProbeResult:
    """Recover a profile's prefix tolerance by black-box probing.

    Every two-byte prefix is tried once; units that survive are then
    searched for their maximum tolerated repetition count, up to
    ``repetition_limit``.
    """
    accepted = {bytes(p) for p in itertools.product(range(256), repeat=2)
                if _accepted(profile, bytes(p))}
    chars = frozenset(a for a in range(256) if bytes([a, a]) in accepted)
    if not accepted:
        return ProbeResult(PrefixKind.NONE, frozenset(), {}, frozenset())
    if chars and accepted == {bytes([a, b]) for a in chars for b in chars}:
        kind, units = PrefixKind.CHARS, frozenset(bytes([c]) for c in chars)
    else:
        kind, units = PrefixKind.SEQUENCE, frozenset(accepted)
    maxima, saturated = {}, set()
    for unit in sorted(units):
        best = _max_repetitions(profile, unit, repetition_limit)
        maxima[unit] = best
        if best >= repetition_limit:
            saturated.add(unit)
    return ProbeResult(kind, units, maxima, frozenset(saturated))


def _max_repetitions(profile: ServerProfile, unit: bytes, limit: int) -> int:
    lo, hi = 1, 2  # lo accepted (the two-byte probe already showed it), hi untested
    while hi <= limit and _accepted(profile, unit * hi):
        lo, hi = hi, hi * 2
    if hi > limit:
        if _accepted(profile, unit * limit):
            return limit
        hi = limit
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _accepted(profile, unit * mid):
            lo = mid
        else:
            hi = mid
    return lo
