import runpy
from pathlib import Path

import pytest

DEMOS = sorted((Path(__file__).parent.parent / "demos").glob("*.py"))


@pytest.mark.parametrize("path", DEMOS, ids=lambda p: p.stem)
def test_demo_runs(path, capsys):
    runpy.run_path(str(path), run_name="__main__")
    assert capsys.readouterr().out.strip()


def test_buffer_demo_reports_both_thresholds(capsys):
    runpy.run_path(str(Path(__file__).parent.parent / "demos" / "02_buffer_threshold.py"))
    out = capsys.readouterr().out
    assert "classification lost above 1021" in out
    assert "request lost above 1002" in out
