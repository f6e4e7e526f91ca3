from __future__ import annotations

from seemore.metrics import RunMetrics
from seemore.report import render_run, render_sweep


def test_render_run_writes_pngs(tmp_path):
    metrics = RunMetrics()
    metrics.record_send("PREPARE", "lion")
    metrics.record_completion("a", 1, "lion", 0, 0, 4)
    paths = render_run(metrics, tmp_path / "run")
    assert [p.name for p in paths] == ["run_latency.png", "run_messages.png"]
    assert all(p.read_bytes().startswith(b"\x89PNG") for p in paths)


def test_render_empty_inputs(tmp_path):
    assert render_run(RunMetrics(), tmp_path / "empty")
    assert render_sweep([], tmp_path / "empty")[0].exists()


def test_render_sweep(tmp_path):
    rows = [{"mode": "lion", "throughput": 0.2, "mean_latency": 5.0}, {"mode": "peacock", "throughput": 0.1, "mean_latency": 7.0}]
    (path,) = render_sweep(rows, tmp_path / "grid")
    assert path.name == "grid_sweep.png"
