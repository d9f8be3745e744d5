import io
import json
import math

import pytest

from dpdlab.config import ConfigError, default_config, default_document, dump_config, load_config
from dpdlab.engines import RingEngineConfig, SignatureMode, TreeEngineConfig, WizardEngineConfig


def test_defaults():
    cfg = default_config()
    assert set(cfg.engines) == {"tree", "tree-uni", "wizard", "ring"}
    assert isinstance(cfg.engine("tree"), TreeEngineConfig)
    assert cfg.engine("tree-uni").signature_mode is SignatureMode.UNIDIRECTIONAL
    assert isinstance(cfg.engine("wizard"), WizardEngineConfig)
    ring = cfg.engine("ring")
    assert isinstance(ring, RingEngineConfig) and math.isinf(ring.detection_timeout)
    assert cfg.engine("tree").port_map == {80: "http", 25: "smtp"}
    assert cfg.alarm_threshold == 100
    assert not cfg.sampler.enabled
    assert cfg.matrix.ports == (4242, 80) and cfg.matrix.profile == "nginx"


def test_shipped_signatures():
    sigs = default_config().signatures
    assert [p.name for p in sigs.patterns] == ["http_client", "http_server", "smtp_client",
                                               "smtp_server"]
    assert sigs.pattern("http_server").requires_reverse == "http_client"
    assert sigs.pattern("smtp_client").enable_target == "smtp"
    http = next(s for s in sigs.spells if s.service == "http")
    assert http.skip_set == frozenset(b" \t\r\n")
    assert b"220*SMTP" in next(s for s in sigs.spells if s.service == "smtp").to_client


def test_override_merges(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "engines": {"tree": {"pia_buffer_size": 2048}},
        "sampler": {"enabled": True},
        "profiles": {"nginx": {"unknown_method_reaction": {"status": 418, "connection_after": "closed"}},
                     "caddy": {"ignored_prefix": {"kind": "chars", "unit": " ", "max_repetitions": 3},
                               "unknown_method_reaction": {"status": 501, "connection_after": "open"}}},
        "matrix": {"engines": ["tree"]},
    }))
    cfg = load_config(path)
    assert cfg.engine("tree").pia_buffer_size == 2048
    assert cfg.engine("tree").port_map == {80: "http", 25: "smtp"}
    assert cfg.sampler.enabled and cfg.engine("wizard").sampler.sample_every == 1000
    assert cfg.profile("nginx").unknown_method_reaction.status == 418
    assert cfg.profile("caddy").ignored_prefix.max_repetitions == 3
    assert cfg.matrix.engines == ("tree",)


@pytest.mark.parametrize("doc", [
    {"matrix": {"engines": ["nope"]}},
    {"matrix": {"profile": "nope"}},
    {"engines": {"x": {"type": "quantum"}}},
    {"engines": {"tree": {"pia_buffer_size": 0}}},
    {"signatures": {"patterns": [{"name": "a", "pattern": "a+", "direction": "orig"}]}},
    {"engines": {"wizard": {"spell_order": ["ftp"]}}},
])
def test_bad_configs(doc):
    with pytest.raises(ConfigError):
        load_config(doc)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_config(path)


def test_dump_round_trip():
    fh = io.StringIO()
    dump_config(default_config(), fh)
    assert json.loads(fh.getvalue()) == default_document()
    assert load_config(json.loads(fh.getvalue())).digest() == default_config().digest()
