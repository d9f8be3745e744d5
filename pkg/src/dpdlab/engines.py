"""Dynamic protocol detection engines.

Three engines share one interface (``open`` / ``on_data`` / ``close`` /
``verdict``):

``TreeEngine``
    analyzer tree with a fixed-size PIA buffer per direction, port-based
    initial analyzers, signature-triggered attachment with buffer replay
    and removal of violating analyzers.
``WizardEngine``
    spell-based classification; the first matching spell binds the
    connection for good.
``RingEngine``
    sliding-window detection restarted at every line start, with a
    detection timeout independent of the window size and optional
    re-detection after an analyzer violation.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field

from .analyzers import (AnalyzerEvent, ConnSizeAnalyzer, EventKind, WeirdSampler,
                        make_analyzer)
from .signatures import (CompiledPattern, MatchStatus, SignatureSet, evaluate_bidirectional)
from .stream import ORIG, RESP, Connection, Chunk, Direction

WIZARD_REPLAY_CAP = 1 << 20


class Basis(enum.Enum):
    PORT = "Port"
    SIGNATURE = "Signature"
    NONE = "None"


class SignatureMode(enum.Enum):
    BIDIRECTIONAL = "bidirectional"
    UNIDIRECTIONAL = "unidirectional"


@dataclass(frozen=True)
class DpdVerdict:
    protocol: str | None = None
    decided_at: int = 0
    basis: Basis = Basis.NONE
    misbound: bool = False

    def __post_init__(self) -> None:
        if (self.protocol is None) != (self.basis is Basis.NONE):
            raise ValueError("protocol is None exactly when basis is None")

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "decided_at": self.decided_at,
                "basis": self.basis.value, "misbound": self.misbound}

    @classmethod
    def from_dict(cls, d: dict) -> "DpdVerdict":
        return cls(d["protocol"], d["decided_at"], Basis(d["basis"]), d["misbound"])


def _default_signatures() -> SignatureSet:
    from .config import default_config
    return default_config().signatures


@dataclass(frozen=True)
class TreeEngineConfig:
    pia_buffer_size: int = 1024
    port_map: dict = field(default_factory=lambda: {80: "http", 25: "smtp"})
    signatures: SignatureSet = field(default_factory=_default_signatures)
    signature_mode: SignatureMode = SignatureMode.BIDIRECTIONAL
    sampler: WeirdSampler = field(default_factory=WeirdSampler)

    def __post_init__(self) -> None:
        if self.pia_buffer_size < 1:
            raise ValueError("pia_buffer_size must be >= 1")
        for port in self.port_map:
            if not isinstance(port, int) or not 0 <= port <= 65535:
                raise ValueError(f"invalid port in port_map: {port!r}")


@dataclass(frozen=True)
class WizardEngineConfig:
    signatures: SignatureSet = field(default_factory=_default_signatures)
    spell_order: tuple = ()
    replay_cap: int = WIZARD_REPLAY_CAP
    sampler: WeirdSampler = field(default_factory=WeirdSampler)


@dataclass(frozen=True)
class RingEngineConfig:
    window_size: int = 4096
    detection_timeout: float = math.inf
    restart_on_violation: bool = True
    signatures: SignatureSet = field(default_factory=_default_signatures)
    signature_mode: SignatureMode = SignatureMode.BIDIRECTIONAL
    sampler: WeirdSampler = field(default_factory=WeirdSampler)

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.detection_timeout < self.window_size:
            raise ValueError("detection_timeout must be >= window_size (or infinite)")


@dataclass
class AnalyzerNode:
    protocol: str
    analyzer: object
    attached_at: int
    basis: Basis
    removed: bool = False


def _signatures_for(signatures: SignatureSet, mode: SignatureMode) -> SignatureSet:
    return signatures.unidirectional() if mode is SignatureMode.UNIDIRECTIONAL else signatures


class _Session:
    """Per-connection engine state; the stream consumer handed to ``Connection.deliver``."""

    def __init__(self, sampler: WeirdSampler):
        self.sampler = sampler
        self.seen = {ORIG: 0, RESP: 0}
        self.events: list[AnalyzerEvent] = []
        self.conn_size = ConnSizeAnalyzer()

    @property
    def total(self) -> int:
        return self.seen[ORIG] + self.seen[RESP]

    def _feed_node(self, node: AnalyzerNode, direction: Direction, data: bytes) -> list:
        if not data:
            return []
        return node.analyzer.feed(direction, data)

    def on_end(self, direction: Direction) -> list:
        return []

    def verdict(self) -> DpdVerdict:
        raise NotImplementedError


class _Engine:
    name = "engine"

    def __init__(self, config):
        self.config = config
        self._sessions: dict[int, _Session] = {}

    def _new_session(self, conn: Connection) -> _Session:
        raise NotImplementedError

    def open(self, conn: Connection) -> _Session:
        if id(conn) in self._sessions:
            raise ValueError("connection already registered with this engine")
        session = self._new_session(conn)
        self._sessions[id(conn)] = session
        return session

    def session(self, conn: Connection) -> _Session:
        try:
            return self._sessions[id(conn)]
        except KeyError:
            raise KeyError("connection not registered; call open() first") from None

    def on_data(self, conn: Connection, chunk: Chunk) -> list[AnalyzerEvent]:
        return conn.deliver(chunk, self.session(conn))

    def close(self, conn: Connection, direction: Direction) -> list[AnalyzerEvent]:
        return conn.close(direction, self.session(conn)) or []

    def verdict(self, conn: Connection) -> DpdVerdict:
        return self.session(conn).verdict()

    def forget(self, conn: Connection) -> None:
        self._sessions.pop(id(conn), None)


# -- analyzer tree ---------------------------------------------------------

class TreeSession(_Session):
    def __init__(self, config: TreeEngineConfig, conn: Connection):
        super().__init__(config.sampler)
        self.config = config
        sigs = _signatures_for(config.signatures, config.signature_mode)
        self.specs = {p.name: p for p in sigs.patterns}
        self.compiled = sigs.compiled_patterns()
        self.acceptors = {cp.spec.name: cp.acceptor() for cp in self.compiled}
        self.match_at: dict[str, int] = {}
        self.fired: set[str] = set()
        self.buffer = {ORIG: bytearray(), RESP: bytearray()}
        self.nodes: list[AnalyzerNode] = []
        self.removed: set[str] = set()
        protocol = config.port_map.get(conn.id.dst_port)
        if protocol is not None:
            self._attach(protocol, 0, Basis.PORT)

    @property
    def buffer_full(self) -> dict:
        cap = self.config.pia_buffer_size
        return {d: len(self.buffer[d]) >= cap for d in (ORIG, RESP)}

    def live_nodes(self) -> list[AnalyzerNode]:
        return [n for n in self.nodes if not n.removed]

    def _attach(self, protocol: str, at: int, basis: Basis) -> list:
        if protocol in self.removed or any(n.protocol == protocol for n in self.live_nodes()):
            return []
        node = AnalyzerNode(protocol, make_analyzer(protocol, self.sampler), at, basis)
        self.nodes.append(node)
        events: list[AnalyzerEvent] = []
        for d in (ORIG, RESP):
            prior = self.seen[d]
            replay = bytes(self.buffer[d][:prior])
            events += self._feed_node(node, d, replay)
            if prior > len(replay):
                events += node.analyzer.gap(d, prior - len(replay))
        self._check_removal(node)
        return events

    def _check_removal(self, node: AnalyzerNode) -> None:
        if node.analyzer.violated and not node.removed:
            node.removed = True
            self.removed.add(node.protocol)

    def _enables(self) -> list[tuple[str, str]]:
        """Enabling patterns whose condition newly holds: [(pattern name, protocol)]."""
        out = []
        for name, spec in self.specs.items():
            if spec.enable_target is None or name in self.fired:
                continue
            own = self.acceptors[name].status
            reverse = (self.acceptors[spec.requires_reverse].status
                       if spec.requires_reverse else None)
            if evaluate_bidirectional(spec, own, reverse):
                self.fired.add(name)
                out.append((name, spec.enable_target))
        return out

    def on_data(self, direction: Direction, payload: bytes) -> list[AnalyzerEvent]:
        total_before = self.total
        buf = self.buffer[direction]
        room = self.config.pia_buffer_size - len(buf)
        events: list[AnalyzerEvent] = []
        if room > 0:
            piece = payload[:room]
            buf += piece
            matches = []
            for cp in self.compiled:
                if cp.spec.direction is not direction:
                    continue
                acc = self.acceptors[cp.spec.name]
                if acc.status is not MatchStatus.PENDING:
                    continue
                before = acc.bytes_consumed
                if acc.feed(piece) is MatchStatus.MATCHED:
                    matches.append((total_before + acc.bytes_consumed - before, cp.spec.name))
            for at, name in sorted(matches):
                self.match_at[name] = at
                for _, protocol in self._enables():
                    events += self._attach(protocol, at, Basis.SIGNATURE)
        self.conn_size.feed(direction, payload)
        for node in self.live_nodes():
            new = self._feed_node(node, direction, payload)
            self._check_removal(node)
            events += new
        self.seen[direction] += len(payload)
        self.events += events
        return events

    def verdict(self) -> DpdVerdict:
        for node in self.live_nodes():
            return DpdVerdict(node.protocol, node.attached_at, node.basis)
        return DpdVerdict()


class TreeEngine(_Engine):
    name = "tree"

    def __init__(self, config: TreeEngineConfig | None = None):
        super().__init__(config or TreeEngineConfig())

    def _new_session(self, conn):
        return TreeSession(self.config, conn)


# -- wizard ----------------------------------------------------------------

class WizardSession(_Session):
    def __init__(self, config: WizardEngineConfig, conn: Connection):
        super().__init__(config.sampler)
        self.config = config
        self.spells = config.signatures.compiled_spells(config.spell_order or None)
        self.acceptors = {(i, d): s.acceptor(d)
                          for i, s in enumerate(self.spells) for d in (ORIG, RESP)}
        self.retained = {ORIG: bytearray(), RESP: bytearray()}
        self.bound_service: str | None = None
        self.bound_at = 0
        self.node: AnalyzerNode | None = None
        self.gave_up = False

    @property
    def misbound(self) -> bool:
        return self.node is not None and self.node.analyzer.violated

    def _bind(self, service: str, at: int) -> list:
        self.bound_service = service
        self.bound_at = at
        self.node = AnalyzerNode(service, make_analyzer(service, self.sampler), at, Basis.SIGNATURE)
        events = []
        for d in (ORIG, RESP):
            events += self._feed_node(self.node, d, bytes(self.retained[d][:self.seen[d]]))
        self.retained = {ORIG: bytearray(), RESP: bytearray()}
        return events

    def on_data(self, direction: Direction, payload: bytes) -> list[AnalyzerEvent]:
        events: list[AnalyzerEvent] = []
        if self.bound_service is None and not self.gave_up:
            retained = self.retained[direction]
            room = self.config.replay_cap - len(retained)
            piece = payload[:room]
            retained += piece
            matches = []
            for (i, d), acc in self.acceptors.items():
                if d is not direction or acc.status is not MatchStatus.PENDING:
                    continue
                before = acc.bytes_consumed
                if acc.feed(piece) is MatchStatus.MATCHED:
                    matches.append((acc.bytes_consumed - before, i))
            if matches:
                offset, i = min(matches)
                events += self._bind(self.spells[i].spec.service, self.total + offset)
            elif len(payload) > room:
                self.gave_up = True
                self.retained = {ORIG: bytearray(), RESP: bytearray()}
        self.conn_size.feed(direction, payload)
        if self.node is not None:
            events += self._feed_node(self.node, direction, payload)
        self.seen[direction] += len(payload)
        self.events += events
        return events

    def verdict(self) -> DpdVerdict:
        if self.bound_service is None:
            return DpdVerdict()
        return DpdVerdict(self.bound_service, self.bound_at, Basis.SIGNATURE, self.misbound)


class WizardEngine(_Engine):
    name = "wizard"

    def __init__(self, config: WizardEngineConfig | None = None):
        super().__init__(config or WizardEngineConfig())

    def _new_session(self, conn):
        return WizardSession(self.config, conn)


# -- ring buffer -----------------------------------------------------------

class _RingScanner:
    """Restartable matcher for one pattern: an automaton run begins at every line start.

    Runs that reach the same automaton state are merged, keeping the most
    recent start, so at most one run per state is alive.
    """

    __slots__ = ("cp", "runs", "matched", "match_start", "match_end", "match_pos")

    def __init__(self, cp: CompiledPattern):
        self.cp = cp
        self.runs: dict[int, int] = {}
        self.matched = False
        self.match_start = -1
        self.match_end = -1
        self.match_pos = -1

    @property
    def status(self) -> MatchStatus:
        return MatchStatus.MATCHED if self.matched else MatchStatus.PENDING

    def scan(self, data: bytes, offset: int, line_start: bool, window: int) -> bool:
        """Scan ``data`` starting at stream offset ``offset``; True once matched."""
        auto = self.cp.automaton
        trans, accepting, start = auto.trans, auto.accepting, auto.start
        runs = self.runs
        for i, b in enumerate(data):
            pos = offset + i
            if line_start:
                runs[start] = pos
            floor = pos + 1 - window
            new: dict[int, int] = {}
            for st, s0 in runs.items():
                nx = trans[st][b]
                if nx >= 0 and s0 >= floor and new.get(nx, -1) < s0:
                    new[nx] = s0
            runs = new
            line_start = b == 0x0A
            for st, s0 in runs.items():
                if st in accepting:
                    self.runs = {}
                    self.matched = True
                    self.match_start = s0
                    self.match_end = pos + 1
                    return True
        self.runs = runs
        return False


class RingSession(_Session):
    def __init__(self, config: RingEngineConfig, conn: Connection):
        super().__init__(config.sampler)
        self.config = config
        sigs = _signatures_for(config.signatures, config.signature_mode)
        self.specs = {p.name: p for p in sigs.patterns}
        self.compiled = sigs.compiled_patterns()
        self.ring = {ORIG: bytearray(), RESP: bytearray()}
        self.ring_base = {ORIG: 0, RESP: 0}
        # (stream offset, connection position) at each chunk start, for offset mapping
        self.segments: dict[Direction, list[tuple[int, int]]] = {ORIG: [], RESP: []}
        self.violated_protocols: set[str] = set()
        self.node: AnalyzerNode | None = None
        self.node_start = {ORIG: 0, RESP: 0}
        self.detection_stopped_at: int | None = None
        self.restarts = 0
        self._replay_end = {ORIG: 0, RESP: 0}
        self._new_epoch()

    def _new_epoch(self) -> None:
        self.scanners = {cp.spec.name: _RingScanner(cp) for cp in self.compiled}
        self.scan_pos = dict(self.ring_base)

    @property
    def detecting(self) -> bool:
        return self.node is None and self.detection_stopped_at is None

    def _conn_pos(self, direction: Direction, offset: int) -> int:
        segs = self.segments[direction]
        i = bisect.bisect_right(segs, (offset, math.inf)) - 1
        dir_off, conn_off = segs[i]
        return conn_off + offset - dir_off

    def _timeout_offset(self, direction: Direction, start: int, end: int) -> int:
        """First stream offset in [start, end) at or past the detection timeout, else ``end``."""
        timeout = self.config.detection_timeout
        segs = self.segments[direction]
        i = max(bisect.bisect_right(segs, (start, math.inf)) - 1, 0)
        for j in range(i, len(segs)):
            dir_off, conn_off = segs[j]
            seg_end = segs[j + 1][0] if j + 1 < len(segs) else end
            crossing = max(dir_off + (timeout - conn_off), start, dir_off)
            if crossing < min(seg_end, end):
                return int(crossing)
        return end

    def _is_line_start(self, direction: Direction, offset: int) -> bool:
        if offset == 0:
            return True
        idx = offset - 1 - self.ring_base[direction]
        return 0 <= idx < len(self.ring[direction]) and self.ring[direction][idx] == 0x0A

    def _scan(self, direction: Direction, end: int) -> list[AnalyzerEvent]:
        """Advance detection over ring bytes of ``direction`` up to stream offset ``end``."""
        start = self.scan_pos[direction]
        if start >= end or not self.detecting:
            return []
        stop = False
        if not math.isinf(self.config.detection_timeout):
            limit = self._timeout_offset(direction, start, end)
            stop, end = limit < end, limit
        base = self.ring_base[direction]
        data = bytes(self.ring[direction][start - base:end - base])
        line_start = self._is_line_start(direction, start)
        matched_any = False
        for sc in self.scanners.values():
            if sc.matched or sc.cp.spec.direction is not direction:
                continue
            if sc.scan(data, start, line_start, self.config.window_size):
                sc.match_pos = self._conn_pos(direction, sc.match_end - 1) + 1
                matched_any = True
        self.scan_pos[direction] = end
        events: list[AnalyzerEvent] = []
        if matched_any:
            enabled = self._enables()
            if enabled:
                events += self._attach(*enabled[0])
        if stop and self.node is None:
            self.detection_stopped_at = int(self.config.detection_timeout)
        return events

    def _enables(self) -> list[tuple[str, str, int]]:
        out = []
        for name, spec in self.specs.items():
            if spec.enable_target is None or spec.enable_target in self.violated_protocols:
                continue
            own = self.scanners[name]
            rev = self.scanners[spec.requires_reverse] if spec.requires_reverse else None
            if evaluate_bidirectional(spec, own.status, rev.status if rev else None):
                at = max(own.match_pos, rev.match_pos if rev else 0)
                out.append((at, spec.enable_target, name))
        out.sort()
        return [(protocol, name, at) for at, protocol, name in out]

    def _replay_start(self, direction: Direction, scanners: list) -> int | None:
        base = self.ring_base[direction]
        for sc in scanners:
            if sc.cp.spec.direction is direction and sc.match_start >= base:
                return sc.match_start
        if base == 0:
            return 0
        nl = self.ring[direction].find(b"\n")
        return base + nl + 1 if nl >= 0 else None

    def _attach(self, protocol: str, name: str, at: int) -> list[AnalyzerEvent]:
        spec = self.specs[name]
        scanners = [self.scanners[name]]
        if spec.requires_reverse:
            scanners.append(self.scanners[spec.requires_reverse])
        starts = {d: self._replay_start(d, scanners) for d in (ORIG, RESP)}
        self.node_start = {d: self.seen[d] if s is None else s for d, s in starts.items()}
        node = AnalyzerNode(protocol, make_analyzer(protocol, self.sampler,
                                                    (self.node_start[ORIG], self.node_start[RESP])),
                            at, Basis.SIGNATURE)
        self.node = node
        events: list[AnalyzerEvent] = []
        for d in (ORIG, RESP):
            if starts[d] is None:
                events += node.analyzer.gap(d, 1)
                continue
            base = self.ring_base[d]
            lo, hi = starts[d] - base, self._replay_end[d] - base
            if hi > lo:
                events += self._feed_node(node, d, bytes(self.ring[d][lo:hi]))
        return events

    def on_data(self, direction: Direction, payload: bytes) -> list[AnalyzerEvent]:
        events: list[AnalyzerEvent] = []
        chunk_start = self.seen[direction]
        self.segments[direction].append((chunk_start, self.total))
        self.ring[direction] += payload
        self.seen[direction] += len(payload)
        # analyzers attached while scanning this chunk are replayed up to its start
        self._replay_end = dict(self.seen)
        self._replay_end[direction] = chunk_start
        if self.detecting:
            events += self._scan(direction, self.seen[direction])
        self._trim(direction)
        self.conn_size.feed(direction, payload)
        if self.node is not None:
            skip = max(0, self.node_start[direction] - chunk_start)
            events += self._feed_node(self.node, direction, payload[skip:])
            if self.node.analyzer.violated and self.config.restart_on_violation:
                events += self._restart()
        self.events += events
        return events

    def _trim(self, direction: Direction) -> None:
        ring = self.ring[direction]
        overflow = len(ring) - self.config.window_size
        if overflow <= 0:
            return
        del ring[:overflow]
        self.ring_base[direction] += overflow
        segs = self.segments[direction]
        while len(segs) > 1 and segs[1][0] <= self.ring_base[direction]:
            segs.pop(0)
        self.scan_pos[direction] = max(self.scan_pos[direction], self.ring_base[direction])

    def _restart(self) -> list[AnalyzerEvent]:
        self.violated_protocols.add(self.node.protocol)
        self.node = None
        self.restarts += 1
        self._new_epoch()
        # a node found while rescanning has already seen everything in the ring
        self._replay_end = dict(self.seen)
        self.node_start = dict(self.seen)
        events: list[AnalyzerEvent] = []
        for d in (ORIG, RESP):
            events += self._scan(d, self.seen[d])
        return events

    def verdict(self) -> DpdVerdict:
        if self.node is None:
            return DpdVerdict()
        return DpdVerdict(self.node.protocol, self.node.attached_at, Basis.SIGNATURE,
                          self.node.analyzer.violated)


class RingEngine(_Engine):
    name = "ring"

    def __init__(self, config: RingEngineConfig | None = None):
        super().__init__(config or RingEngineConfig())

    def _new_session(self, conn):
        return RingSession(self.config, conn)


def tree_on_data(engine: TreeEngine, conn: Connection, chunk: Chunk) -> list[AnalyzerEvent]:
    return engine.on_data(conn, chunk)


wizard_on_data = ring_on_data = tree_on_data


def weird_count(events) -> int:
    return sum(1 for e in events if e.kind is EventKind.WEIRD)
