import time

import pytest

from tamed_sde.bench import (dimension_scaling, error_vs_runtime, loglog_slope, measure,
                             write_plot_script)
from tamed_sde.brownian import sample_batch
from tamed_sde.error_analysis import strong_error
from tamed_sde.exceptions import ArgumentError
from tamed_sde.schemes import tamed_euler
from tamed_sde.sde_model import make_builtin


def test_measure_noop():
    t = measure(lambda: None)
    assert 0.0 <= t < 0.1


def test_measure_excludes_warmup():
    calls = []

    def slow_first():
        if not calls:
            time.sleep(0.2)
        calls.append(1)

    assert measure(slow_first) < 0.1
    assert len(calls) == 4


def test_measure_is_stable():
    q = make_builtin("quintic_gl")
    batch = sample_batch(1024, 1, 1.0, 0, range(200))
    first = measure(lambda: tamed_euler(q, batch))
    second = measure(lambda: tamed_euler(q, batch))
    assert 0.5 <= first / second <= 1.5


def test_error_vs_runtime_gbm():
    g = make_builtin("gbm")
    Ns = [2**k for k in range(4, 11)]
    rows = error_vs_runtime(g, ["tamed"], Ns, 4096, 200, seed=3)
    errors = [r.error for r in rows]
    assert all(a > b for a, b in zip(errors, errors[1:]))
    walls = [r.wall_seconds for r in rows]
    assert loglog_slope(Ns, walls) > 0.5
    assert walls[-1] > walls[0]
    assert all(r.newton_iters_total is None for r in rows)


def test_benchmark_errors_equal_plain_runs():
    c = make_builtin("cubic_gl")
    rows = error_vs_runtime(c, ["tamed", "implicit"], [16, 32], 128, 40, seed=8)
    for r in rows:
        assert r.error == strong_error(c, r.scheme, r.steps, 128, 2.0, 40, 8).value
    assert all(r.newton_iters_total > 0 for r in rows if r.scheme == "implicit")


def test_implicit_slower_than_tamed_on_quintic():
    q = make_builtin("quintic_gl")
    rows = error_vs_runtime(q, ["tamed", "implicit"], [64, 256], 1024, 50)
    walls = {(r.scheme, r.steps): r.wall_seconds for r in rows}
    for N in (64, 256):
        assert walls[("tamed", N)] < walls[("implicit", N)]


def test_error_vs_runtime_edge_cases():
    q = make_builtin("quintic_gl")
    assert error_vs_runtime(q, [], [16], 64, 10) == []
    with pytest.raises(ArgumentError):
        error_vs_runtime(q, ["tamed"], [32, 16], 128, 10)
    with pytest.raises(ArgumentError):
        error_vs_runtime(q, ["tamed"], [16, 32], 64, 10)


def test_dimension_scaling_single_dim():
    rows = dimension_scaling([10], steps=128, paths=16)
    assert [(r.scheme, r.dim, r.steps) for r in rows] == [("tamed", 10, 128),
                                                         ("implicit", 10, 128)]
    assert rows[0].wall_seconds < rows[1].wall_seconds
    assert rows[0].error is None


def test_loglog_slope():
    assert loglog_slope([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)
    with pytest.raises(ArgumentError):
        loglog_slope([1], [1])


def test_plot_script(tmp_path):
    csv = tmp_path / "rows.csv"
    script = write_plot_script(csv, "error", ["tamed", "implicit"])
    assert script == tmp_path / "rows.gp"
    text = script.read_text()
    assert "set logscale xy" in text and 'title "implicit"' in text
    assert "dim" in write_plot_script(csv, "dimension", ["tamed"]).read_text()
    with pytest.raises(ArgumentError):
        write_plot_script(csv, "pie", ["tamed"])
