"""Which leading bytes do the simulated servers ignore, and how do they treat odd methods?"""

from dpdlab import PROFILES, ServerRunState, probe_prefixes, server_respond
from dpdlab.attacks import request

# Black-box probing: every two-byte prefix, then a search for the largest
# tolerated repetition count of each unit. nginx saturates the probe limit.
for name, profile in PROFILES.items():
    res = probe_prefixes(profile, repetition_limit=10 ** 7)
    units = {u: (">=" if u in res.saturated else "") + str(n)
             for u, n in res.max_repetitions.items()}
    print(f"{name:16} {res.kind.value:9} {units or '-'}")

print()
for name, profile in PROFILES.items():
    probe = request("UNKNOWNMETHOD", "/", keep_alive=True)
    reply = server_respond(profile, ServerRunState(), probe)
    first = reply.response.split(b"\r\n")[0].decode() or "(no response)"
    print(f"{name:16} {first:36} connection {reply.connection_action.value}")

# Servers that keep the connection open after rejecting the method are the
# ones where a follow-up request can ride along on the same connection.
