"""Random inputs biased towards the shipped patterns, shared by oracle checks."""

import random

PIECES = [b"GET", b"HEAD", b"POST", b"PUT", b"DELETE", b"OPTIONS", b"TRACE", b"CONNECT",
          b"HELO", b"EHLO", b"HTTP/", b"HTTP/1.1", b"220", b" SMTP", b"MAIL", b"220 ",
          b"\r\n", b"\r", b"\n", b" ", b"\t", b"\x0b", b"G", b"E", b"T", b"H", b"/", b"1",
          b"UNKNOWNMETHOD", b"*", b"2", b"0"]


def random_input(rng: random.Random, max_len: int = 64) -> bytes:
    out = bytearray()
    target = rng.randint(0, max_len)
    while len(out) < target:
        r = rng.random()
        if r < 0.7:
            out += rng.choice(PIECES)
        elif r < 0.9:
            out.append(rng.randrange(256))
        else:
            out += rng.choice(PIECES).lower()
    return bytes(out[:target])


def random_inputs(seed: int, n: int, max_len: int = 64):
    rng = random.Random(seed)
    return [random_input(rng, max_len) for _ in range(n)]
