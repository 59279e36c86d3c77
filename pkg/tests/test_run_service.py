import csv
import json
import math

import numpy as np
import pytest

from delaydensity.main import main
from delaydensity.models.run_config import RunConfigError, load_run_config, parse_run_config
from delaydensity.services.analytic_kernels import exact_example_density
from delaydensity.services.export_service import render_table
from delaydensity.services.run_service import (
    compare_curves,
    run_bridge,
    run_compare,
    run_density,
    run_kernel,
    run_simulate,
)


def _make_document(**overrides) -> dict:
    document = {
        "model": {"a": 0.0, "b": 1.0, "c": 0.0, "s0": 1.0, "tau": 1.0, "history": [0.0]},
        "mc": {"dt": 0.01, "n_paths": 2000, "seed": 42, "bins": 50},
        "output": {"abscissae": {"min": -5.0, "max": 5.0, "n": 201}},
    }
    document.update(overrides)
    return document


def _write_config(tmp_path, document: dict):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def _read_csv(path) -> tuple[list[str], list[list[str]], list[str]]:
    lines = path.read_text(encoding="utf-8").split("\n")
    comments = [line for line in lines if line.startswith("#")]
    rows = list(csv.reader(line for line in lines if line and not line.startswith("#")))
    return comments, rows[1:], rows[0]


def test_load_run_config_reports_bad_documents(tmp_path) -> None:
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(RunConfigError):
        load_run_config(broken)
    with pytest.raises(RunConfigError):
        load_run_config(tmp_path / "missing.json")
    with pytest.raises(RunConfigError):
        parse_run_config(_make_document(model={"tau": -1.0}))
    with pytest.raises(RunConfigError):
        parse_run_config(_make_document(unknown={}))
    config = load_run_config(_write_config(tmp_path, _make_document()))
    assert config.model.b == 1.0
    assert config.mc.seed == 42


def test_analytic_density_at_one_and_a_half() -> None:
    result = run_density(parse_run_config(_make_document()), 1.5, "analytic")
    assert result.header == ["x", "density"]
    assert result.rows.shape == (201, 2)
    assert result.rows[100, 0] == 0.0
    assert result.rows[100, 1] == pytest.approx(0.29804, abs=1e-3)
    assert result.diagnostics["mass"] == pytest.approx(1.0, abs=1e-2)
    assert result.diagnostics["backend"] == "analytic"


def test_fp_density_agrees_with_analytic() -> None:
    """Coarser than the documented defaults (41 nodes, dt 5e-3, 16 quadrature points) to keep runtime low."""
    config = parse_run_config(
        _make_document(grid={"nodes": 41}, solver={"dt": 5e-3}, quadrature={"points": 16})
    )
    table, report = run_compare(config, 1.5, ["analytic", "fp"])
    assert table.header == ["x", "analytic", "fp"]
    metrics = report.metrics[0]
    assert metrics["methods"] == ["analytic", "fp"]
    assert metrics["l1"] <= 5e-2
    assert table.diagnostics["mass_fp"] == pytest.approx(1.0, abs=3e-2)


def test_mc_density_agrees_with_analytic() -> None:
    config = parse_run_config(_make_document(mc={"dt": 0.01, "n_paths": 20_000, "seed": 3, "bins": 50}))
    _, report = run_compare(config, 1.5, ["analytic", "mc"])
    assert report.metrics[0]["l1"] <= 0.1
    assert set(report.runtimes) == {"analytic", "mc"}


def test_analytic_density_next_to_segment_ends() -> None:
    config = parse_run_config(_make_document(output={"abscissae": {"min": -9.0, "max": 9.0, "n": 181}}))
    for t in (1.0001, 1.001, 1.999, 1.9999):
        result = run_density(config, t, "analytic")
        assert result.rows[90, 0] == 0.0
        assert result.rows[90, 1] == pytest.approx(float(exact_example_density(0.0, t)), abs=1e-3)
        assert result.diagnostics["mass"] == pytest.approx(1.0, abs=1e-2)
        assert result.diagnostics["warnings"] == "none"


def test_fp_rejects_sheared_quadrature() -> None:
    config = parse_run_config(_make_document(quadrature={"offsets": "forward"}))
    with pytest.raises(RunConfigError):
        run_density(config, 1.5, "fp")


def test_fp_pipeline_at_default_resolution() -> None:
    """65-node solver grids, 64-point quadrature axes and the default solver step."""
    config = parse_run_config(
        _make_document(grid={"nodes": 65}, quadrature={"points": 64}, output={"abscissae": {"min": -6.0, "max": 6.0, "n": 121}})
    )
    _, report = run_compare(config, 1.5, ["analytic", "fp"])
    assert report.metrics[0]["l1"] <= 1e-2


def test_mc_density_at_documented_sample_size() -> None:
    config = parse_run_config(
        _make_document(
            mc={"dt": 1e-3, "n_paths": 100_000, "seed": 7},
            output={"abscissae": {"min": -6.0, "max": 6.0, "n": 241}},
        )
    )
    table, report = run_compare(config, 1.5, ["analytic", "mc"])
    assert report.metrics[0]["l1"] <= 2e-2
    assert table.diagnostics["mass_mc"] == pytest.approx(1.0, abs=1e-2)


def test_comparing_a_method_with_itself_is_zero() -> None:
    _, report = run_compare(parse_run_config(_make_document()), 0.5, ["analytic", "analytic"])
    assert report.metrics == [{"methods": ["analytic", "analytic"], "l1": 0.0, "linf": 0.0, "ks": 0.0}]


def test_compare_curves_metrics() -> None:
    x = np.linspace(0.0, 1.0, 101)
    metrics = compare_curves(x, np.ones_like(x), np.zeros_like(x))
    assert metrics["l1"] == pytest.approx(1.0)
    assert metrics["linf"] == pytest.approx(1.0)
    assert metrics["ks"] == pytest.approx(1.0)


def test_compare_needs_two_methods() -> None:
    with pytest.raises(RunConfigError):
        run_compare(parse_run_config(_make_document()), 1.5, ["analytic"])


def test_simulate_histograms_report_variances() -> None:
    config = parse_run_config(_make_document(mc={"dt": 0.01, "n_paths": 5000, "seed": 9, "bins": 40}))
    result = run_simulate(config, [1.0, 2.0])
    assert result.header == ["time", "bin_center", "density"]
    assert result.rows.shape == (80, 3)
    se = math.sqrt(2.0 / 5000)
    assert result.diagnostics["variance_t1"] == pytest.approx(1.0, abs=4.0 * se)
    assert result.diagnostics["variance_t2"] == pytest.approx(10.0 / 3.0, abs=4.0 * se * 10.0 / 3.0)


def test_simulate_raw_rows_and_seed_contract() -> None:
    config = parse_run_config(_make_document(mc={"dt": 0.01, "n_paths": 1, "seed": 1}))
    result = run_simulate(config, [1.0, 2.0], raw=True)
    assert result.header == ["path", "time", "value"]
    assert result.rows.shape == (2, 3)
    assert "\n0,1.0," in render_table(result)

    reseeded = run_simulate(parse_run_config(_make_document(mc={"dt": 0.01, "n_paths": 1, "seed": 2})), [1.0, 2.0], raw=True)
    assert reseeded.rows.shape == result.rows.shape
    assert not np.array_equal(reseeded.rows[:, 2], result.rows[:, 2])


def test_kernel_dump_on_grid_nodes() -> None:
    document = _make_document(
        grid={"axes": [{"min": -4.0, "max": 4.0, "n": 21}, {"min": -5.0, "max": 5.0, "n": 21}]},
        kernel={"k": 2, "v": [0.0, 0.0], "s": 0.0, "t": 1.0},
    )
    result = run_kernel(parse_run_config(document), "analytic")
    assert result.header == ["x1", "x2", "density"]
    assert result.rows.shape == (441, 3)
    with pytest.raises(RunConfigError):
        run_kernel(parse_run_config(_make_document()), "fp")


def test_bridge_peak_value() -> None:
    document = _make_document(bridge={"k": 1, "v0": [0.0], "v1": [0.0], "t_prime": 0.5, "window": {"min": -3.0, "max": 3.0, "n": 61}})
    result = run_bridge(parse_run_config(document), "analytic")
    assert result.rows[30, 0] == 0.0
    assert result.rows[30, 1] == pytest.approx(math.sqrt(2.0 / math.pi))
    assert result.diagnostics["mass"] == pytest.approx(1.0, abs=1e-3)


def test_cli_density_writes_csv_with_diagnostics(tmp_path) -> None:
    config = _write_config(tmp_path, _make_document())
    out = tmp_path / "density.csv"
    assert main(["density", "--config", str(config), "--t", "1.5", "--method", "analytic", "--out", str(out)]) == 0
    raw = out.read_bytes()
    assert b"\r" not in raw
    comments, rows, header = _read_csv(out)
    assert header == ["x", "density"]
    assert "# method=analytic" in comments
    assert len(rows) == 201
    assert rows[100][0] == "0.0"
    assert float(rows[100][1]) == pytest.approx(0.29804, abs=1e-3)


def test_cli_mc_density_is_reproducible(tmp_path) -> None:
    config = _write_config(tmp_path, _make_document())
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    assert main(["density", "--config", str(config), "--t", "1.5", "--method", "mc", "--out", str(first)]) == 0
    assert main(["density", "--config", str(config), "--t", "1.5", "--method", "mc", "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    third = tmp_path / "third.csv"
    assert main(["density", "--config", str(config), "--t", "1.5", "--method", "mc", "--seed", "43", "--out", str(third)]) == 0
    assert third.read_bytes() != first.read_bytes()


def test_cli_compare_writes_report(tmp_path) -> None:
    config = _write_config(tmp_path, _make_document())
    out = tmp_path / "curves.csv"
    assert main(["compare", "--config", str(config), "--t", "0.5", "--methods", "analytic,mc", "--out", str(out)]) == 0
    report = json.loads((tmp_path / "curves.json").read_text(encoding="utf-8"))
    assert report["methods"] == ["analytic", "mc"]
    assert report["metrics"][0]["l1"] >= 0.0
    _, rows, header = _read_csv(out)
    assert header == ["x", "analytic", "mc"]
    assert len(rows) == 201


def test_cli_exit_codes(tmp_path, capsys) -> None:
    broken = tmp_path / "broken.json"
    broken.write_text("[]", encoding="utf-8")
    assert main(["density", "--config", str(broken), "--t", "1.5"]) == 2

    degenerate = _make_document(
        model={"s0": 0.5, "s1": 1.0, "tau": 1.0},
        grid={"axes": [{"min": -3.0, "max": 3.0, "n": 41}]},
        kernel={"k": 1, "v": [0.0], "s": 0.0, "t": 0.5},
    )
    path = _write_config(tmp_path, degenerate)
    assert main(["kernel", "--config", str(path), "--method", "fp", "--out", str(tmp_path / "k.csv")]) == 3

    unstable = _make_document(
        model={"a": 50.0, "tau": 1.0},
        grid={"axes": [{"min": -5.0, "max": 5.0, "n": 101}]},
        solver={"dt": 0.01},
        kernel={"k": 1, "v": [0.0], "s": 0.0, "t": 0.5},
    )
    path = _write_config(tmp_path, unstable)
    assert main(["kernel", "--config", str(path), "--method", "fp", "--out", str(tmp_path / "k.csv")]) == 4

    path = _write_config(tmp_path, _make_document())
    assert main(["density", "--config", str(path), "--t", "3.5"]) == 2
    assert "error:" in capsys.readouterr().err
