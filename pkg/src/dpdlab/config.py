"""The lab's single declarative config document.

The document is JSON. A user file is merged over the packaged defaults:
nested objects merge key by key, everything else (lists included) replaces.
"""

from __future__ import annotations

import copy
import functools
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .analyzers import WeirdSampler
from .engines import (RingEngineConfig, SignatureMode, TreeEngineConfig, WizardEngineConfig)
from .servers import PROFILES, ServerProfile
from .signatures import CompileError, PatternSpec, SignatureSet, SpellSpec
from .stream import Direction

ENGINE_TYPES = ("tree", "wizard", "ring")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MatrixAxes:
    engines: tuple[str, ...]
    attacks: tuple[str, ...]
    ports: tuple[int, ...]
    profile: str
    repetitions: int = 512
    prefix_unit: str = "crlf"
    follow_up: bool = True


@dataclass(frozen=True)
class Config:
    raw: dict
    signatures: SignatureSet
    sampler: WeirdSampler
    alarm_threshold: int
    profiles: dict
    engines: dict
    matrix: MatrixAxes

    def engine(self, name: str):
        try:
            return self.engines[name]
        except KeyError:
            known = sorted(self.engines)
            raise ConfigError(f"unknown engine {name!r}; configured: {known}") from None

    def profile(self, name: str) -> ServerProfile:
        try:
            return self.profiles[name]
        except KeyError:
            known = sorted(self.profiles)
            raise ConfigError(f"unknown profile {name!r}; configured: {known}") from None

    def digest(self) -> str:
        return config_digest(self.raw)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_document() -> dict:
    text = resources.files("dpdlab").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def config_digest(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _signatures(doc: dict) -> SignatureSet:
    skip = frozenset(ord(c) for c in doc.get("skip_set", " \t\r\n"))
    try:
        patterns = tuple(
            PatternSpec(p["name"], p["pattern"], Direction(p["direction"]),
                        p.get("requires_reverse"), p.get("enable"))
            for p in doc.get("patterns", ()))
        spells = tuple(
            SpellSpec(s["service"], tuple(s["to_server"]), tuple(s["to_client"]),
                      frozenset(ord(c) for c in s["skip_set"]) if "skip_set" in s else skip)
            for s in doc.get("spells", ()))
        sigs = SignatureSet(patterns, spells)
        sigs.compiled_patterns()
        sigs.compiled_spells()
    except (KeyError, ValueError, CompileError) as exc:
        raise ConfigError(f"bad signature set: {exc}") from exc
    return sigs


def _sampler(doc) -> WeirdSampler:
    if doc is None or doc == "off" or (isinstance(doc, dict) and not doc.get("enabled", True)):
        return WeirdSampler.disabled()
    return WeirdSampler(doc.get("emit_first", 5), doc.get("sample_every", 1000))


def build_engine_config(name: str, doc: dict, signatures: SignatureSet, sampler: WeirdSampler):
    kind = doc.get("type", name)
    if "sampler" in doc:
        sampler = _sampler(doc["sampler"])
    try:
        mode = SignatureMode(doc.get("signature_mode", "bidirectional"))
        if kind == "tree":
            ports = doc.get("port_map", {"80": "http", "25": "smtp"})
            return TreeEngineConfig(
                pia_buffer_size=int(doc.get("pia_buffer_size", 1024)),
                port_map={int(k): v for k, v in ports.items()},
                signatures=signatures, signature_mode=mode, sampler=sampler)
        if kind == "wizard":
            cfg = WizardEngineConfig(signatures=signatures,
                                     spell_order=tuple(doc.get("spell_order", ())),
                                     sampler=sampler)
            signatures.compiled_spells(cfg.spell_order or None)
            return cfg
        if kind == "ring":
            timeout = doc.get("detection_timeout")
            return RingEngineConfig(
                window_size=int(doc.get("window_size", 4096)),
                detection_timeout=math.inf if timeout is None else float(timeout),
                restart_on_violation=bool(doc.get("restart_on_violation", True)),
                signatures=signatures, signature_mode=mode, sampler=sampler)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"engine {name!r}: {exc}") from exc
    raise ConfigError(f"engine {name!r} has unknown type {kind!r}; expected one of {ENGINE_TYPES}")


def build_config(doc: dict) -> Config:
    signatures = _signatures(doc.get("signatures", {}))
    sampler = _sampler(doc.get("sampler"))
    profiles = dict(PROFILES)
    for pname, pdoc in doc.get("profiles", {}).items():
        try:
            profiles[pname] = ServerProfile.from_dict({"name": pname, **pdoc}, profiles.get(pname))
        except (KeyError, ValueError, AttributeError) as exc:
            raise ConfigError(f"profile {pname!r}: {exc}") from exc
    engines = {name: build_engine_config(name, edoc, signatures, sampler)
               for name, edoc in doc.get("engines", {}).items()}
    m = doc.get("matrix", {})
    matrix = MatrixAxes(
        engines=tuple(m.get("engines", sorted(engines))),
        attacks=tuple(m.get("attacks", ("crlf", "unknown", "helo"))),
        ports=tuple(int(p) for p in m.get("ports", (4242, 80))),
        profile=m.get("profile", "nginx"),
        repetitions=int(m.get("repetitions", 512)),
        prefix_unit=m.get("prefix_unit", "crlf"),
        follow_up=bool(m.get("follow_up", True)),
    )
    cfg = Config(doc, signatures, sampler, int(doc.get("alarm_threshold", 100)),
                 profiles, engines, matrix)
    for name in matrix.engines:
        cfg.engine(name)
    cfg.profile(matrix.profile)
    return cfg


@functools.lru_cache(maxsize=1)
def default_config() -> Config:
    return build_config(default_document())


def load_config(source=None) -> Config:
    """Load a config from a path, a dict, or None for the defaults."""
    if source is None:
        return default_config()
    if isinstance(source, dict):
        over = source
    else:
        try:
            over = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: not valid JSON ({exc})") from exc
    if not isinstance(over, dict):
        raise ConfigError("config document must be a JSON object")
    return build_config(_merge(default_document(), over))


def dump_config(cfg: Config, fh) -> None:
    json.dump(cfg.raw, fh, indent=2, sort_keys=True)
    fh.write("\n")
