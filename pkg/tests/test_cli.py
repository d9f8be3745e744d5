import io
import json

from dpdlab.cli import main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_run_text():
    code, out = run("run", "--engine", "tree", "--attack", "helo", "--port", "4242")
    assert code == 0 and "outcome:   Evaded" in out


def test_run_json_with_options():
    code, out = run("run", "--engine", "tree", "--attack", "crlf", "--port", "80",
                    "--repetitions", "150", "--prefix-unit", "lf", "--format", "json")
    data = json.loads(out)
    assert code == 0 and data["class"] == "Detected" and data["dos_indicator"] == 150


def test_run_no_follow_up():
    code, out = run("run", "--engine", "ring", "--attack", "unknown", "--no-follow-up",
                    "--format", "json")
    assert json.loads(out)["follow_up_served"] is False


def test_record_and_replay(tmp_path):
    trace, log = tmp_path / "t.jsonl", tmp_path / "e.jsonl"
    code, _ = run("run", "--engine", "wizard", "--attack", "unknown", "--record", str(trace),
                  "--events", str(log))
    assert code == 0 and trace.read_text().count("\n") >= 4
    kinds = [json.loads(l)["kind"] for l in log.read_text().splitlines()]
    assert kinds.count("HttpRequest") == 2
    code, out = run("replay", "--trace", str(trace), "--engine", "wizard")
    assert code == 0 and '"protocol": "http"' in out.splitlines()[-1]


def test_matrix_formats():
    code, out = run("matrix", "--format", "json")
    assert code == 0 and len(json.loads(out)["cells"]) == 24
    code, out = run("matrix", "--format", "csv")
    assert out.count("\n") == 25


def test_probe_sim():
    code, out = run("probe-sim", "--profile", "apache")
    assert code == 0 and "b'\\r\\n':20" in out


def test_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"matrix": {"engines": ["tree"], "ports": [4242]}}))
    code, out = run("--config", str(cfg), "matrix")
    assert code == 0 and out.splitlines()[2].startswith("tree ")
    assert len(out.splitlines()[0].split()) == 4


def test_errors_exit_2(tmp_path, capsys):
    code, _ = run("run", "--engine", "bogus", "--attack", "crlf")
    assert code == 2 and "unknown engine" in capsys.readouterr().err
    code, _ = run("--config", str(tmp_path / "missing.json"), "matrix")
    assert code == 2


def test_config_after_subcommand(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"matrix": {"engines": ["ring"], "attacks": ["helo"], "ports": [80]}}))
    code, text = run("matrix", "--config", str(path), "--format", "csv")
    assert code == 0
    assert len(text.strip().splitlines()) == 2
