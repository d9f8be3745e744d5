"""Where exactly does CRLF stuffing beat a 1024-byte detection buffer?"""

from dpdlab import CellSpec, run_cell
from dpdlab.attacks import gen_crlf_stuffing

BUFFER = 1024
request_line = gen_crlf_stuffing(0).steps[0].payload.split(b"\n")[0] + b"\n"

print(f"{'stuffing':>8}  {'verdict':8}  outcome")
for stuffing in range(996, 1028, 2):
    o = run_cell(CellSpec("tree", {"name": "crlf", "repetitions": stuffing // 2}, 4242, "nginx"))
    print(f"{stuffing:>8}  {str(o.verdict.protocol):8}  {o.label}")

# Two thresholds show up:
#  * the signature stops matching once "GET" no longer fits in the buffer
#    (stuffing > BUFFER - 3), so the connection is never classified;
#  * before that, HTTP is recognized, but the replayed buffer ends inside the
#    target request line, so the analyzer never sees the request it should log.
print("classification lost above", BUFFER - 3, "bytes of stuffing")
print("request lost above", BUFFER - len(request_line), "bytes of stuffing")

# A larger buffer just moves the line. The attacker only needs more CRLFs.
from dpdlab import load_config

big = load_config({"engines": {"tree": {"pia_buffer_size": 4096}}})
for reps in (512, 2100):
    o = run_cell(CellSpec("tree", {"name": "crlf", "repetitions": reps}, 4242, "nginx"), big)
    print(f"buffer 4096, {reps} CRLF: {o.label}")
