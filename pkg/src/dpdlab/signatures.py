"""Streaming protocol-detection patterns.

Two pattern families share one automaton core:

* anchored payload patterns (restricted regex) with optional
  bidirectional linkage, as used by analyzer-tree engines;
* spells: literal patterns with ``*`` globs, matched after discarding a
  leading skip-set, as used by the wizard.

All matching is prefix matching anchored at stream start: an acceptor
reports ``MATCHED`` as soon as some prefix of what it has been fed is in
the pattern language, and ``FAILED`` once no continuation can match.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .stream import Direction

DEFAULT_SKIP_SET = frozenset(b" \t\r\n")

_POSIX_CLASSES = {
    "space": frozenset(b" \t\n\r\x0b\x0c"),
    "digit": frozenset(b"0123456789"),
    "alpha": frozenset(range(ord("a"), ord("z") + 1)) | frozenset(range(ord("A"), ord("Z") + 1)),
    "upper": frozenset(range(ord("A"), ord("Z") + 1)),
    "lower": frozenset(range(ord("a"), ord("z") + 1)),
    "blank": frozenset(b" \t"),
}
_POSIX_CLASSES["alnum"] = _POSIX_CLASSES["alpha"] | _POSIX_CLASSES["digit"]
_ALL_BYTES = frozenset(range(256))
_ESCAPES = {"r": 0x0D, "n": 0x0A, "t": 0x09}


class CompileError(ValueError):
    """Pattern uses a construct outside the supported subset."""


class MatchStatus(enum.Enum):
    PENDING = "pending"
    MATCHED = "matched"
    FAILED = "failed"


# -- parsing ---------------------------------------------------------------
# AST: ("set", frozenset[int]) | ("cat", [..]) | ("alt", [..]) | ("star", node)

def _parse_regex(text: str):
    pos = 0
    n = len(text)

    def peek():
        return text[pos] if pos < n else None

    def parse_alt():
        nonlocal pos
        branches = [parse_cat()]
        while peek() == "|":
            pos += 1
            branches.append(parse_cat())
        return branches[0] if len(branches) == 1 else ("alt", branches)

    def parse_cat():
        nonlocal pos
        items = []
        while (c := peek()) is not None and c not in "|)":
            atom = parse_atom()
            while peek() == "*":
                pos += 1
                atom = ("star", atom)
            items.append(atom)
        return ("cat", items)

    def parse_atom():
        nonlocal pos
        c = text[pos]
        if c == "(":
            if text.startswith("(?", pos):
                raise CompileError(f"unsupported construct '(?' at offset {pos}")
            pos += 1
            inner = parse_alt()
            if peek() != ")":
                raise CompileError(f"unbalanced '(' in pattern {text!r}")
            pos += 1
            return inner
        if c == "[":
            return ("set", parse_class())
        if c == "\\":
            pos += 1
            return ("set", frozenset([parse_escape()]))
        if c in ".+?{}$^":
            what = {"{": "'{' repetition", "}": "'}'"}.get(c, f"'{c}'")
            raise CompileError(f"unsupported construct {what} at offset {pos}")
        pos += 1
        return ("set", frozenset([_byte(c)]))

    def parse_escape():
        nonlocal pos
        if pos >= n:
            raise CompileError("dangling '\\' at end of pattern")
        c = text[pos]
        pos += 1
        if c in _ESCAPES:
            return _ESCAPES[c]
        if c == "x":
            digits = text[pos:pos + 2]
            if len(digits) != 2 or any(d not in "0123456789abcdefABCDEF" for d in digits):
                raise CompileError(f"bad \\x escape at offset {pos - 2}")
            pos += 2
            return int(digits, 16)
        if c.isalnum():
            raise CompileError(f"unsupported construct '\\{c}' at offset {pos - 2}")
        return _byte(c)

    def parse_class():
        nonlocal pos
        start = pos
        pos += 1
        negate = peek() == "^"
        if negate:
            pos += 1
        members: set[int] = set()
        first = True
        while True:
            c = peek()
            if c is None:
                raise CompileError(f"unterminated character class at offset {start}")
            if c == "]" and not first:
                pos += 1
                break
            first = False
            if text.startswith("[:", pos):
                end = text.find(":]", pos + 2)
                name = text[pos + 2:end] if end >= 0 else ""
                if name not in _POSIX_CLASSES:
                    raise CompileError(f"unsupported construct '[:{name}:]' at offset {pos}")
                members |= _POSIX_CLASSES[name]
                pos = end + 2
                continue
            if c == "\\":
                pos += 1
                lo = parse_escape()
            else:
                lo = _byte(c)
                pos += 1
            if peek() == "-" and pos + 1 < n and text[pos + 1] != "]":
                pos += 1
                hi_c = text[pos]
                if hi_c == "\\":
                    pos += 1
                    hi = parse_escape()
                else:
                    hi = _byte(hi_c)
                    pos += 1
                if hi < lo:
                    raise CompileError(f"reversed range in class at offset {start}")
                members |= set(range(lo, hi + 1))
            else:
                members.add(lo)
        result = frozenset(members)
        return _ALL_BYTES - result if negate else result

    if text.startswith("^"):
        pos = 1
    tree = parse_alt()
    if pos != n:
        raise CompileError(f"unbalanced ')' at offset {pos}")
    return tree


def _byte(c: str) -> int:
    code = ord(c)
    if code > 0xFF:
        raise CompileError(f"non-byte character {c!r} in pattern")
    return code


def _parse_glob(pattern: bytes):
    """Spell notation: literal bytes, ``*`` matches any run of bytes."""
    items = []
    for b in pattern:
        items.append(("star", ("set", _ALL_BYTES)) if b == 0x2A else ("set", frozenset([b])))
    return ("cat", items)


# -- automaton construction ------------------------------------------------

class Automaton:
    """Immutable DFA over bytes; ``-1`` is the dead state."""

    __slots__ = ("trans", "accepting", "start")

    def __init__(self, trans: tuple, accepting: frozenset, start: int):
        self.trans = trans
        self.accepting = accepting
        self.start = start

    @classmethod
    def from_ast(cls, tree) -> "Automaton":
        edges: list[list] = []
        eps: list[list[int]] = []

        def new_state():
            edges.append([])
            eps.append([])
            return len(edges) - 1

        def build(node):
            kind = node[0]
            if kind == "set":
                s, t = new_state(), new_state()
                edges[s].append((node[1], t))
                return s, t
            if kind == "cat":
                s = t = new_state()
                for item in node[1]:
                    a, b = build(item)
                    eps[t].append(a)
                    t = b
                return s, t
            if kind == "alt":
                s, t = new_state(), new_state()
                for branch in node[1]:
                    a, b = build(branch)
                    eps[s].append(a)
                    eps[b].append(t)
                return s, t
            if kind == "star":
                s, t = new_state(), new_state()
                a, b = build(node[1])
                eps[s] += [a, t]
                eps[b] += [a, t]
                return s, t
            raise AssertionError(kind)

        nfa_start, nfa_accept = build(tree)

        def closure(states):
            stack = list(states)
            seen = set(states)
            while stack:
                for nxt in eps[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            return frozenset(seen)

        start_set = closure([nfa_start])
        ids = {start_set: 0}
        order = [start_set]
        trans: list[tuple] = []
        i = 0
        while i < len(order):
            current = order[i]
            targets: list[set] = [set() for _ in range(256)]
            for st in current:
                for members, t in edges[st]:
                    for b in members:
                        targets[b].add(t)
            row = []
            cache: dict[frozenset, int] = {}
            for b in range(256):
                if not targets[b]:
                    row.append(-1)
                    continue
                key = frozenset(targets[b])
                if key not in cache:
                    nxt = closure(key)
                    if nxt not in ids:
                        ids[nxt] = len(order)
                        order.append(nxt)
                    cache[key] = ids[nxt]
                row.append(cache[key])
            trans.append(tuple(row))
            i += 1
        accepting = frozenset(ids[s] for s in order if nfa_accept in s)
        return cls(tuple(trans), accepting, 0)

    @classmethod
    def union(cls, trees: Iterable) -> "Automaton":
        return cls.from_ast(("alt", list(trees)))

    def acceptor(self) -> "Acceptor":
        return Acceptor(self)


class Acceptor:
    """Mutable matching state of one automaton over one stream."""

    __slots__ = ("automaton", "state", "bytes_consumed", "status")

    def __init__(self, automaton: Automaton):
        self.automaton = automaton
        self.state = automaton.start
        self.bytes_consumed = 0
        self.status = (MatchStatus.MATCHED if automaton.start in automaton.accepting
                       else MatchStatus.PENDING)

    def feed(self, data: bytes) -> MatchStatus:
        if self.status is not MatchStatus.PENDING or not data:
            return self.status
        trans = self.automaton.trans
        accepting = self.automaton.accepting
        s = self.state
        for i, b in enumerate(data):
            s = trans[s][b]
            if s < 0:
                self.bytes_consumed += i + 1
                self.status = MatchStatus.FAILED
                return self.status
            if s in accepting:
                self.state = s
                self.bytes_consumed += i + 1
                self.status = MatchStatus.MATCHED
                return self.status
        self.state = s
        self.bytes_consumed += len(data)
        return self.status


class SpellAcceptor(Acceptor):
    """Acceptor that first discards leading bytes from a skip-set."""

    __slots__ = ("skip_set", "skipping")

    def __init__(self, automaton: Automaton, skip_set: frozenset):
        super().__init__(automaton)
        self.skip_set = skip_set
        self.skipping = bool(skip_set)

    def feed(self, data: bytes) -> MatchStatus:
        if self.status is not MatchStatus.PENDING or not data:
            return self.status
        if self.skipping:
            rest = data.lstrip(bytes(sorted(self.skip_set)))
            self.bytes_consumed += len(data) - len(rest)
            if not rest:
                return self.status
            self.skipping = False
            data = rest
        return super().feed(data)


def feed(state: Acceptor, data: bytes) -> MatchStatus:
    return state.feed(data)


spell_feed = feed


# -- specs -----------------------------------------------------------------

@dataclass(frozen=True)
class PatternSpec:
    name: str
    pattern_text: str
    direction: Direction
    requires_reverse: str | None = None
    enable_target: str | None = None


@dataclass(frozen=True)
class CompiledPattern:
    spec: PatternSpec
    automaton: Automaton

    def acceptor(self) -> Acceptor:
        return Acceptor(self.automaton)


def compile_pattern(spec: PatternSpec | str) -> CompiledPattern:
    """Compile a restricted regex (literals, ``|``, groups, classes, ``*``)."""
    if isinstance(spec, str):
        spec = PatternSpec(name=spec, pattern_text=spec, direction=Direction.ORIG)
    return CompiledPattern(spec, Automaton.from_ast(_parse_regex(spec.pattern_text)))


@dataclass(frozen=True)
class SpellSpec:
    service: str
    to_server: tuple[bytes, ...]
    to_client: tuple[bytes, ...]
    skip_set: frozenset = DEFAULT_SKIP_SET

    def __post_init__(self) -> None:
        if not self.to_server or not self.to_client:
            raise ValueError(f"spell {self.service!r} needs both pattern sets")
        object.__setattr__(self, "to_server", tuple(_as_bytes(p) for p in self.to_server))
        object.__setattr__(self, "to_client", tuple(_as_bytes(p) for p in self.to_client))
        object.__setattr__(self, "skip_set", frozenset(self.skip_set))

    def patterns(self, direction: Direction) -> tuple[bytes, ...]:
        return self.to_server if direction is Direction.ORIG else self.to_client


def _as_bytes(p) -> bytes:
    return p.encode("latin-1") if isinstance(p, str) else bytes(p)


@dataclass(frozen=True)
class CompiledSpell:
    spec: SpellSpec
    to_server: Automaton
    to_client: Automaton

    def acceptor(self, direction: Direction) -> SpellAcceptor:
        auto = self.to_server if direction is Direction.ORIG else self.to_client
        return SpellAcceptor(auto, self.spec.skip_set)


def compile_spell(spec: SpellSpec) -> CompiledSpell:
    return CompiledSpell(
        spec,
        Automaton.union(_parse_glob(p) for p in spec.to_server),
        Automaton.union(_parse_glob(p) for p in spec.to_client),
    )


def evaluate_bidirectional(spec: PatternSpec, own: MatchStatus,
                           reverse: MatchStatus | None) -> bool:
    """Whether a matched pattern may enable its analyzer."""
    if spec.enable_target is None:
        raise ValueError(f"pattern {spec.name!r} cannot enable an analyzer")
    if own is not MatchStatus.MATCHED:
        return False
    return spec.requires_reverse is None or reverse is MatchStatus.MATCHED


# -- signature sets --------------------------------------------------------

@dataclass(frozen=True)
class SignatureSet:
    patterns: tuple[PatternSpec, ...] = ()
    spells: tuple[SpellSpec, ...] = ()
    _compiled: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        names = [p.name for p in self.patterns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate pattern names in signature set")
        for p in self.patterns:
            if p.requires_reverse is not None:
                partner = self.pattern(p.requires_reverse)
                if partner.direction is p.direction:
                    raise ValueError(f"{p.name!r} requires a same-direction partner")

    def pattern(self, name: str) -> PatternSpec:
        for p in self.patterns:
            if p.name == name:
                return p
        raise KeyError(f"no pattern named {name!r}")

    def compiled_patterns(self) -> tuple[CompiledPattern, ...]:
        if "patterns" not in self._compiled:
            self._compiled["patterns"] = tuple(compile_pattern(p) for p in self.patterns)
        return self._compiled["patterns"]

    def compiled_spells(self, order: Sequence[str] | None = None) -> tuple[CompiledSpell, ...]:
        key = ("spells", tuple(order) if order else None)
        if key not in self._compiled:
            spells = list(self.spells)
            if order:
                by_name = {s.service: s for s in spells}
                missing = [name for name in order if name not in by_name]
                if missing:
                    raise KeyError(f"spell order names unknown services: {missing}")
                spells = [by_name[name] for name in order]
            self._compiled[key] = tuple(compile_spell(s) for s in spells)
        return self._compiled[key]

    def unidirectional(self) -> "SignatureSet":
        """Split every bidirectional pair into two independently enabling patterns."""
        enables = {p.requires_reverse: p.enable_target for p in self.patterns
                   if p.requires_reverse and p.enable_target}
        split = tuple(
            replace(p, requires_reverse=None,
                    enable_target=p.enable_target or enables.get(p.name))
            for p in self.patterns
        )
        return SignatureSet(split, self.spells)


HTTP_METHODS = ("OPTIONS", "GET", "HEAD", "POST", "PUT", "DELETE", "TRACE", "CONNECT")


def default_signature_set() -> SignatureSet:
    from .config import default_config
    return default_config().signatures
