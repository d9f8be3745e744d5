import pytest
from hypothesis import given, strategies as st

from dpdlab.analyzers import EventKind, HttpAnalyzer, WeirdSampler
from dpdlab.attacks import (PREFIX_UNITS, AttackName, build_attack, gen_baseline,
                            gen_crlf_stuffing, gen_helo_method, gen_unknown_method)
from dpdlab.config import default_config
from dpdlab.signatures import MatchStatus, compile_spell
from dpdlab.stream import ORIG


def test_baseline_bytes():
    s = gen_baseline("/")
    assert len(s.steps) == 1
    assert s.steps[0].payload == b"GET / HTTP/1.1\r\nHost: target\r\n\r\n"
    assert gen_baseline("/a").steps[0].payload.startswith(b"GET /a HTTP/1.1\r\n")


def test_baseline_needs_path():
    with pytest.raises(ValueError):
        gen_baseline("")


def test_crlf_512():
    payload = gen_crlf_stuffing(512).steps[0].payload
    assert payload.index(b"G") == 1024
    assert set(payload[:1024]) == {13, 10}


def test_crlf_zero_is_baseline():
    assert gen_crlf_stuffing(0, path="/").steps == gen_baseline("/").steps


def test_crlf_nginx_scale():
    payload = gen_crlf_stuffing(10 ** 7, "lf").steps[0].payload
    assert payload.index(b"G") == 10 ** 7


def test_crlf_rejects_negative_and_unknown_unit():
    with pytest.raises(ValueError):
        gen_crlf_stuffing(-1)
    with pytest.raises(ValueError):
        gen_crlf_stuffing(1, "vt")


custom_units = st.binary(min_size=1, max_size=3).filter(lambda b: b"G" not in b)


@given(st.integers(0, 2000), st.sampled_from(sorted(PREFIX_UNITS)) | custom_units)
def test_prefix_length(reps, unit):
    script = gen_crlf_stuffing(reps, unit)
    raw = PREFIX_UNITS[unit] if isinstance(unit, str) else unit
    assert script.steps[0].payload.index(b"GET") == len(raw) * reps


def test_unknown_method_follow_up():
    s = gen_unknown_method(follow_up=True)
    assert len(s.steps) == 2
    assert s.steps[0].payload.startswith(b"UNKNOWNMETHOD / HTTP/1.1\r\n")
    assert b"Connection: keep-alive\r\n" in s.steps[0].payload
    assert s.steps[1].payload.startswith(b"GET /secret HTTP/1.1\r\n")
    assert s.target_uri == "/secret" and s.has_follow_up
    assert all(step.await_response for step in s.steps)


def test_unknown_method_without_follow_up():
    s = gen_unknown_method(follow_up=False)
    assert len(s.steps) == 1 and s.target_uri is None


def test_method_override_and_length():
    assert gen_unknown_method(method="FOO").steps[0].payload.startswith(b"FOO / ")
    long = gen_unknown_method(method="AB", method_length=2000).steps[0].payload
    assert long.index(b" ") == 2000


def test_helo():
    s = gen_helo_method()
    assert s.steps[0].payload.startswith(b"HELO / HTTP/1.1\r\n")
    assert s.steps[-1].payload.startswith(b"GET /secret HTTP/1.1\r\n")


def test_helo_trips_smtp_spell():
    smtp = next(sp for sp in default_config().signatures.spells if sp.service == "smtp")
    acc = compile_spell(smtp).acceptor(ORIG)
    assert acc.feed(gen_helo_method().steps[0].payload) is MatchStatus.MATCHED


@pytest.mark.parametrize("script", [gen_baseline(), gen_unknown_method(), gen_helo_method(),
                                    gen_unknown_method(method="M-1.x")])
def test_request_lines_parse(script):
    a = HttpAnalyzer(WeirdSampler.disabled())
    events = [e for step in script.steps for e in a.feed(ORIG, step.payload)]
    assert [e.kind for e in events] == [EventKind.HTTP_REQUEST] * len(script.steps)


def test_deterministic():
    assert build_attack("crlf", repetitions=7) == build_attack("crlf", repetitions=7)


def test_build_attack_names():
    assert build_attack("baseline").name is AttackName.BASELINE
    assert build_attack("helo", follow_up=False).target_uri is None
    with pytest.raises(ValueError):
        build_attack("ddos")


def test_client_chunks():
    chunks = gen_unknown_method().client_chunks()
    assert [c.direction for c in chunks] == [ORIG, ORIG]
