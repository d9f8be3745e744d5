"""Drive attack scripts through an engine and a server profile, classify the result."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable

from .analyzers import AnalyzerEvent, EventKind
from .attacks import AttackScript, build_attack
from .config import Config, ConfigError, default_config
from .engines import (DpdVerdict, RingEngine, RingEngineConfig, TreeEngine, TreeEngineConfig,
                      WizardEngine, WizardEngineConfig, weird_count)
from .servers import ConnectionAfter, ServerProfile, ServerRunState, server_respond
from .stream import (Chunk, CloseEvent, ORIG, RESP, Direction, make_tuple,
                     new_connection)

Chunker = Callable[[bytes], Iterable[bytes]]


class OutcomeClass(enum.Enum):
    DETECTED = "Detected"
    EVADED = "Evaded"
    MISCLASSIFIED = "Misclassified"
    # the target request was neither served nor seen (e.g. the server dropped it)
    BLOCKED = "Blocked"


@dataclass(frozen=True)
class Outcome:
    cls: OutcomeClass
    dos_indicator: int
    follow_up_seen_by_engine: bool
    follow_up_served: bool
    verdict: DpdVerdict
    misclassified_as: str | None = None
    dos_alarm: bool = False

    def __post_init__(self) -> None:
        if self.cls is OutcomeClass.EVADED:
            assert self.follow_up_served and not self.follow_up_seen_by_engine
        if (self.cls is OutcomeClass.MISCLASSIFIED) != (self.misclassified_as is not None):
            raise ValueError("misclassified_as is set exactly for Misclassified outcomes")

    @property
    def evaded(self) -> bool:
        """The target request reached the server without the engine seeing it."""
        return self.follow_up_served and not self.follow_up_seen_by_engine

    @property
    def label(self) -> str:
        if self.cls is OutcomeClass.MISCLASSIFIED:
            text = f"Misclassified({self.misclassified_as})"
            return text + "+Evaded" if self.evaded else text
        return self.cls.value

    def to_dict(self) -> dict:
        return {
            "class": self.cls.value,
            "label": self.label,
            "misclassified_as": self.misclassified_as,
            "dos_indicator": self.dos_indicator,
            "dos_alarm": self.dos_alarm,
            "follow_up_seen_by_engine": self.follow_up_seen_by_engine,
            "follow_up_served": self.follow_up_served,
            "verdict": self.verdict.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(OutcomeClass(d["class"]), d["dos_indicator"], d["follow_up_seen_by_engine"],
                   d["follow_up_served"], DpdVerdict.from_dict(d["verdict"]),
                   d["misclassified_as"], d["dos_alarm"])


def classify(events: Iterable[AnalyzerEvent], verdict: DpdVerdict, server_log,
             script: AttackScript, alarm_threshold: int = 100) -> Outcome:
    """Pure classification of one finished conversation.

    ``server_log`` is a ``ServerRunState`` or its access-log list.
    """
    events = list(events)
    log = server_log.access_log if isinstance(server_log, ServerRunState) else list(server_log)
    target = script.target_uri
    http = verdict.protocol == "http"
    seen = target is not None and http and any(
        e.kind is EventKind.HTTP_REQUEST and e.detail.get("uri") == target for e in events)
    served = target is not None and any(e.uri == target and e.status == 200 for e in log)
    dos = weird_count(events)
    if verdict.protocol not in (None, "http"):
        cls, mis = OutcomeClass.MISCLASSIFIED, verdict.protocol
    elif seen or (target is None and http):
        cls, mis = OutcomeClass.DETECTED, None
    elif served:
        cls, mis = OutcomeClass.EVADED, None
    else:
        cls, mis = OutcomeClass.BLOCKED, None
    return Outcome(cls, dos, seen, served, verdict, mis, dos >= alarm_threshold)


# -- running cells ---------------------------------------------------------

def make_engine(engine_config):
    if isinstance(engine_config, TreeEngineConfig):
        return TreeEngine(engine_config)
    if isinstance(engine_config, WizardEngineConfig):
        return WizardEngine(engine_config)
    if isinstance(engine_config, RingEngineConfig):
        return RingEngine(engine_config)
    raise ConfigError(f"not an engine config: {engine_config!r}")


@dataclass(frozen=True)
class CellSpec:
    engine: object          # engine name from the config, or an engine config object
    attack: dict            # build_attack keyword arguments, including "name"
    dst_port: int
    profile: str | ServerProfile = "nginx"

    def script(self) -> AttackScript:
        params = dict(self.attack)
        return build_attack(params.pop("name"), **params)


@dataclass
class CellRun:
    outcome: Outcome
    events: list
    server: ServerRunState
    trace: list = field(default_factory=list)


def _whole(data: bytes):
    return (data,)


def run_cell(spec: CellSpec, config: Config | None = None,
             chunker: Chunker | None = None) -> Outcome:
    return execute_cell(spec, config, chunker).outcome


def execute_cell(spec: CellSpec, config: Config | None = None,
                 chunker: Chunker | None = None) -> CellRun:
    """Run one conversation and keep the full record (events, server state, trace)."""
    config = config or default_config()
    engine_cfg = config.engine(spec.engine) if isinstance(spec.engine, str) else spec.engine
    profile = config.profile(spec.profile) if isinstance(spec.profile, str) else spec.profile
    script = spec.script()
    chunker = chunker or _whole
    engine = make_engine(engine_cfg)
    conn = new_connection(make_tuple(spec.dst_port))
    engine.open(conn)
    server = ServerRunState()
    events: list[AnalyzerEvent] = []
    trace: list = []

    def send(direction: Direction, data: bytes) -> None:
        for piece in chunker(data):
            if piece:
                chunk = Chunk(direction, bytes(piece))
                trace.append(chunk)
                events.extend(engine.on_data(conn, chunk))

    held = bytearray()  # responses the client has not waited for yet
    for step in script.steps:
        if not server.open:
            break
        send(ORIG, step.payload)
        reply = server_respond(profile, server, step.payload)
        held += reply.response
        if step.await_response or reply.connection_action is ConnectionAfter.CLOSED:
            if held:
                send(RESP, bytes(held))
                held.clear()
    if held:
        send(RESP, bytes(held))
    for d in (RESP, ORIG) if not server.open else (ORIG, RESP):
        events.extend(engine.close(conn, d))
        trace.append(CloseEvent(d))
    outcome = classify(events, engine.verdict(conn), server, script, config.alarm_threshold)
    engine.forget(conn)
    return CellRun(outcome, events, server, trace)


def replay_trace(records, engine_config, dst_port: int = 4242):
    """Feed recorded directional chunks into a fresh engine; return (verdict, events)."""
    engine = make_engine(engine_config)
    conn = new_connection(make_tuple(dst_port))
    engine.open(conn)
    events: list[AnalyzerEvent] = []
    for rec in records:
        if isinstance(rec, CloseEvent):
            events += engine.close(conn, rec.direction)
        else:
            events += engine.on_data(conn, rec)
    return engine.verdict(conn), events


# -- the matrix ------------------------------------------------------------

@dataclass
class MatrixReport:
    rows: list
    columns: list           # [(attack, port)]
    cells: dict             # (engine, attack, port) -> Outcome
    metadata: dict

    def cell(self, engine: str, attack: str, port: int) -> Outcome:
        return self.cells[(engine, attack, port)]

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": list(self.rows),
            "columns": [[a, p] for a, p in self.columns],
            "cells": [{"engine": e, "attack": a, "port": p, **o.to_dict()}
                      for (e, a, p), o in self.cells.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixReport":
        cells = {(c["engine"], c["attack"], c["port"]): Outcome.from_dict(c) for c in d["cells"]}
        return cls(list(d["rows"]), [(a, p) for a, p in d["columns"]], cells, dict(d["metadata"]))


def _attack_params(axes, attack: str) -> dict:
    params = {"name": attack}
    if attack == "crlf":
        params.update(repetitions=axes.repetitions, prefix_unit=axes.prefix_unit)
    elif attack in ("unknown", "helo"):
        params["follow_up"] = axes.follow_up
    return params


def run_matrix(config: Config | None = None, timestamp: str | None = None) -> MatrixReport:
    config = config or default_config()
    axes = config.matrix
    columns = [(a, p) for a in axes.attacks for p in axes.ports]
    cells = {}
    for engine in axes.engines:
        for attack, port in columns:
            spec = CellSpec(engine, _attack_params(axes, attack), port, axes.profile)
            try:
                cells[(engine, attack, port)] = run_cell(spec, config)
            except Exception as exc:
                raise RuntimeError(f"matrix cell {engine}/{attack}/{port} failed: {exc}") from exc
    metadata = {
        "config_digest": config.digest(),
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "profile": axes.profile,
        "alarm_threshold": config.alarm_threshold,
    }
    return MatrixReport(list(axes.engines), columns, cells, metadata)


FORMATS = ("text", "json", "csv")
DOS_MARK = "*"


def export(report: MatrixReport, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["engine", "attack", "port", "class", "label", "dos_indicator", "dos_alarm",
                    "follow_up_seen_by_engine", "follow_up_served", "verdict_protocol",
                    "verdict_basis", "decided_at", "misbound"])
        for (e, a, p), o in report.cells.items():
            v = o.verdict
            w.writerow([e, a, p, o.cls.value, o.label, o.dos_indicator, o.dos_alarm,
                        o.follow_up_seen_by_engine, o.follow_up_served, v.protocol or "",
                        v.basis.value, v.decided_at, v.misbound])
        return out.getvalue().encode()
    if fmt == "text":
        return _text_table(report).encode()
    raise ValueError(f"unknown export format {fmt!r}; use one of {FORMATS}")


def _text_table(report: MatrixReport) -> str:
    header = ["engine"] + [f"{a}/{p}" for a, p in report.columns]
    body = []
    for e in report.rows:
        row = [e]
        for a, p in report.columns:
            o = report.cells[(e, a, p)]
            row.append(o.label + (f" {DOS_MARK}{o.dos_indicator}" if o.dos_alarm else ""))
        body.append(row)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    threshold = report.metadata.get("alarm_threshold")
    lines.append("")
    lines.append(f"{DOS_MARK}N: N weird events in the connection (alarm threshold {threshold})")
    return "\n".join(lines) + "\n"
