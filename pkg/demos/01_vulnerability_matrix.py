"""Walk through the vulnerability matrix: four engines, three attacks, two ports."""

from dpdlab import CellSpec, export, run_cell, run_matrix
from dpdlab.harness import execute_cell

# The default config: nginx behind every engine, 512 CRLF units of stuffing,
# weird sampling switched off (the unpatched behavior).
report = run_matrix()
print(export(report, "text").decode())

# One cell up close. HELO on a non-standard port: the tree engine attaches an
# SMTP analyzer on the client signature, the HTTP reply makes it violate and
# get removed, and nothing is left to parse the follow-up request.
run = execute_cell(CellSpec("tree", {"name": "helo"}, 4242, "nginx"))
for event in run.events:
    print(f"  {event.direction.value:4} {event.kind.value:12} {event.detail}")
print("server log:", [(e.method, e.uri, e.status) for e in run.server.access_log])
print("outcome:", run.outcome.label, "| verdict:", run.outcome.verdict)

# Same attack on port 80: the port map attaches HTTP from the first byte.
print("port 80:", run_cell(CellSpec("tree", {"name": "helo"}, 80, "nginx")).label)

# The wizard binds to whatever spell matches first and never looks back.
wiz = run_cell(CellSpec("wizard", {"name": "helo"}, 80, "iis"))
print("wizard:", wiz.label, "misbound =", wiz.verdict.misbound)
