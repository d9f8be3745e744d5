import re
import zlib

import pytest
from hypothesis import given, settings, strategies as st

import corpus
import oracle
from dpdlab.config import default_config
from dpdlab.signatures import (DEFAULT_SKIP_SET, CompileError, MatchStatus, PatternSpec,
                               SignatureSet, SpellSpec, compile_pattern, compile_spell,
                               evaluate_bidirectional, feed, spell_feed)
from dpdlab.stream import ORIG, RESP

CLIENT = "^[[:space:]]*(OPTIONS|GET|HEAD|POST|PUT|DELETE|TRACE|CONNECT)[[:space:]]*"
SERVER = r"^HTTP\/[0-9]"
SHIPPED = [p.pattern_text for p in default_config().signatures.patterns]
HTTP_SPELL = SpellSpec("http", ("GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS"), ("HTTP/",))
SMTP_SPELL = SpellSpec("smtp", ("HELO", "EHLO"), ("220*SMTP", "220*MAIL"))


def run(pattern, *pieces):
    acc = compile_pattern(pattern).acceptor()
    for p in pieces:
        feed(acc, p)
    return acc


def test_server_pattern_matches_after_six_bytes():
    acc = run(SERVER, b"HTTP/1.1 200 OK")
    assert acc.status is MatchStatus.MATCHED
    assert acc.bytes_consumed == 6


def test_client_pattern_eats_leading_whitespace():
    assert run(CLIENT, b"\r\n\r\nGET ").status is MatchStatus.MATCHED


def test_first_byte_mismatch_fails_at_byte_one():
    acc = run(SERVER, b"XTTP/1.1")
    assert acc.status is MatchStatus.FAILED
    assert acc.bytes_consumed == 1


def test_split_feed():
    assert run(CLIENT, b"GE", b"T /").status is MatchStatus.MATCHED


def test_empty_feed_is_identity():
    acc = run(CLIENT, b"")
    assert acc.status is MatchStatus.PENDING and acc.bytes_consumed == 0


def test_long_whitespace_stays_pending():
    assert run(CLIENT, b"\r\n" * 1000).status is MatchStatus.PENDING


@pytest.mark.parametrize("bad, construct", [
    ("a+", "'+'"), ("a?", "'?'"), ("a.b", "'.'"), ("a{2}", "'{'"), ("ab$", "'$'"),
    ("(?:a)", "(?"), (r"\d", r"\d"), ("a^b", "'^'"), ("[[:punct:]]", "punct"),
])
def test_unsupported_constructs_are_named(bad, construct):
    with pytest.raises(CompileError, match=re.escape(construct)):
        compile_pattern(bad)


@pytest.mark.parametrize("bad", ["(ab", "ab)", "[abc", "a\\", r"\xZZ", "[z-a]"])
def test_malformed_patterns(bad):
    with pytest.raises(CompileError):
        compile_pattern(bad)


def test_escapes_and_ranges():
    assert run(r"^\x41[b-d]\r\n", b"Ac\r\n").status is MatchStatus.MATCHED
    assert run(r"^[^a]", b"a").status is MatchStatus.FAILED


def test_absorption_after_match_and_fail():
    acc = run(SERVER, b"HTTP/1")
    assert feed(acc, b"garbage") is MatchStatus.MATCHED
    acc = run(SERVER, b"X")
    assert feed(acc, b"HTTP/1") is MatchStatus.FAILED


@given(st.binary(max_size=40), st.lists(st.integers(1, 8), max_size=10),
       st.sampled_from(SHIPPED))
def test_split_invariance(data, cuts, pattern):
    one = run(pattern, data)
    pieces, pos = [], 0
    for c in cuts:
        pieces.append(data[pos:pos + c])
        pos += c
    pieces.append(data[pos:])
    many = run(pattern, *pieces)
    assert many.status is one.status
    assert many.bytes_consumed == one.bytes_consumed


# -- spells ----------------------------------------------------------------

def spell(spec, direction, *pieces):
    acc = compile_spell(spec).acceptor(direction)
    for p in pieces:
        spell_feed(acc, p)
    return acc.status


def test_spell_skips_crlf_stuffing():
    assert spell(HTTP_SPELL, ORIG, b"\r\n" * 512 + b"GET ") is MatchStatus.MATCHED


def test_smtp_spell_helo():
    assert spell(SMTP_SPELL, ORIG, b"HELO example.com") is MatchStatus.MATCHED


def test_unknown_method_fails_http_spell():
    assert spell(HTTP_SPELL, ORIG, b"UNKNOWNMETHOD /") is MatchStatus.FAILED


def test_glob_spell():
    assert spell(SMTP_SPELL, RESP, b"220 mx.example ESMTP ready") is MatchStatus.MATCHED
    assert spell(SMTP_SPELL, RESP, b"220 just text") is MatchStatus.PENDING
    assert spell(SMTP_SPELL, RESP, b"HTTP/1.1 405") is MatchStatus.FAILED


def test_spell_requires_both_sides():
    with pytest.raises(ValueError):
        SpellSpec("x", (), ("a",))


def test_default_skip_set():
    assert HTTP_SPELL.skip_set == DEFAULT_SKIP_SET == frozenset(b" \t\r\n")


@settings(max_examples=60)
@given(st.lists(st.sampled_from([b" ", b"\t", b"\r", b"\n"]), max_size=10_000),
       st.sampled_from([b"GET /", b"HELO x", b"UNKNOWN", b"POS", b"", b"\x00"]))
def test_skip_prefix_never_changes_spell_status(prefix, body):
    stuffed = b"".join(prefix) + body
    for spec in (HTTP_SPELL, SMTP_SPELL):
        assert spell(spec, ORIG, stuffed) is spell(spec, ORIG, body)


# -- bidirectional enable ------------------------------------------------------

SERVER_SPEC = PatternSpec("s", SERVER, RESP, requires_reverse="c", enable_target="http")


@pytest.mark.parametrize("own, rev, expected", [
    (MatchStatus.MATCHED, MatchStatus.MATCHED, True),
    (MatchStatus.MATCHED, MatchStatus.PENDING, False),
    (MatchStatus.PENDING, MatchStatus.MATCHED, False),
    (MatchStatus.MATCHED, MatchStatus.FAILED, False),
])
def test_evaluate_bidirectional(own, rev, expected):
    assert evaluate_bidirectional(SERVER_SPEC, own, rev) is expected


def test_unidirectional_server_enables_alone():
    spec = PatternSpec("s", SERVER, RESP, enable_target="http")
    assert evaluate_bidirectional(spec, MatchStatus.MATCHED, MatchStatus.PENDING)


def test_evaluate_needs_enable_target():
    with pytest.raises(ValueError):
        evaluate_bidirectional(PatternSpec("c", CLIENT, ORIG), MatchStatus.MATCHED, None)


def test_signature_set_split():
    sigs = default_config().signatures.unidirectional()
    client = sigs.pattern("http_client")
    assert client.enable_target == "http" and client.requires_reverse is None
    assert sigs.pattern("http_server").requires_reverse is None


def test_signature_set_validation():
    with pytest.raises(ValueError):
        SignatureSet((PatternSpec("a", "x", ORIG), PatternSpec("a", "y", ORIG)))
    with pytest.raises(ValueError):
        SignatureSet((PatternSpec("a", "x", ORIG),
                      PatternSpec("b", "y", ORIG, requires_reverse="a", enable_target="p")))


# -- oracle ------------------------------------------------------------------

_NAMES = {MatchStatus.MATCHED: "matched", MatchStatus.PENDING: "pending",
          MatchStatus.FAILED: "failed"}


@pytest.mark.parametrize("pattern", SHIPPED + ["^(ab|a)*c", "^[a-c]*(x|yz)*[[:digit:]]"])
def test_pattern_agrees_with_oracle(pattern):
    inputs = corpus.random_inputs(zlib.crc32(pattern.encode()), 300)
    inputs += [b"abc", b"aab", b"ababac", b"yzx1", b"xx", b""]
    for data in inputs:
        acc = run(pattern, data)
        status, shortest = oracle.regex_status(pattern, data)
        assert _NAMES[acc.status] == status, data
        if shortest is not None:
            assert acc.bytes_consumed == shortest


@pytest.mark.parametrize("spec", [HTTP_SPELL, SMTP_SPELL])
def test_spell_agrees_with_oracle(spec):
    for d, patterns in ((ORIG, spec.to_server), (RESP, spec.to_client)):
        for data in corpus.random_inputs(7, 300):
            assert _NAMES[spell(spec, d, data)] == oracle.spell_status(patterns, spec.skip_set, data)


def test_oracle_sanity():
    assert oracle.regex_status(SERVER, b"HTTP/1") == ("matched", 6)
    assert oracle.regex_status(SERVER, b"HTT") == ("pending", None)
    assert oracle.regex_status(SERVER, b"HTX") == ("failed", None)
    assert oracle.spell_status([b"220*SMTP"], DEFAULT_SKIP_SET, b"\r\n220 xSMTP") == "matched"
