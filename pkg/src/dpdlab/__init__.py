"""Desk-scale laboratory for dynamic protocol detection and its evasion."""

from .attacks import (AttackName, AttackScript, build_attack, gen_baseline, gen_crlf_stuffing,
                      gen_helo_method, gen_unknown_method)
from .config import Config, ConfigError, default_config, load_config
from .engines import (DpdVerdict, RingEngine, RingEngineConfig, TreeEngine, TreeEngineConfig,
                      WizardEngine, WizardEngineConfig)
from .harness import (CellSpec, MatrixReport, Outcome, OutcomeClass, classify, export, run_cell,
                      run_matrix)
from .servers import PROFILES, ServerProfile, ServerRunState, probe_prefixes, server_respond
from .signatures import PatternSpec, SignatureSet, SpellSpec, compile_pattern, compile_spell
from .stream import Chunk, Connection, Direction, FiveTuple, ScriptingError

__version__ = "0.1.0"

__all__ = [
    "AttackName", "AttackScript", "CellSpec", "Chunk", "Config", "ConfigError", "Connection",
    "Direction", "DpdVerdict", "FiveTuple", "MatrixReport", "Outcome", "OutcomeClass",
    "PROFILES", "PatternSpec", "RingEngine", "RingEngineConfig", "ScriptingError",
    "ServerProfile", "ServerRunState", "SignatureSet", "SpellSpec", "TreeEngine",
    "TreeEngineConfig", "WizardEngine", "WizardEngineConfig", "build_attack", "classify",
    "compile_pattern", "compile_spell", "default_config", "export", "gen_baseline",
    "gen_crlf_stuffing", "gen_helo_method", "gen_unknown_method", "load_config",
    "probe_prefixes", "run_cell", "run_matrix", "server_respond",
]
