import csv

import pytest
import yaml

from dcetomo.errors import ConfigError, InsufficientSamples
from dcetomo.harness import cli
from dcetomo.harness.config import ScenarioConfig, dump_normalized, expand_sweep, validate_config
from dcetomo.harness.runner import (
    fig6_slope,
    rows_from_run,
    run_scenario,
    simulate,
    sweep,
    write_delay_series,
    write_results,
)


def diagnostics(doc):
    with pytest.raises(ConfigError) as info:
        validate_config(doc)
    return info.value.diagnostics


def test_packet_size_above_mtu():
    assert "packet_size: 2000 exceeds MTU 1500" in diagnostics({"seed": 1, "packet_size": 2000})


def test_missing_seed():
    assert any(d.startswith("seed: missing required key") for d in diagnostics({"tau": 10}))


def test_unknown_keys_reported_together():
    diag = diagnostics({"seed": 1, "frobnicate": 3, "packet_size": 9000})
    assert "frobnicate: unknown key" in diag
    assert any(d.startswith("packet_size") for d in diag)


def test_topology_errors_surface_as_diagnostics():
    doc = {"seed": 1, "topology": {"root": "f", "links": [{"parent": "f", "child": "a"}, {"parent": "b", "child": "a"}], "receivers": ["a"]}}
    assert diagnostics(doc)


def test_minimal_document_defaults_and_echo():
    cfg = validate_config("seed: 5\n")
    assert cfg.packet_size == 1500 and cfg.tau == 1550 and cfg.filter_multiplier == 2.0
    echoed = yaml.safe_load(dump_normalized(cfg))
    assert echoed["seed"] == 5 and echoed["topology"]["receivers"] == ["a", "b"]
    assert validate_config(echoed) == cfg


def test_sweep_cardinality():
    doc = {"seed": 2, "tau": 120, "min_samples": 50,
           "sweep": {"bg_rate_MBps": [1, 2, 3, 4, 5, 6], "packet_size": [100, 800, 1500]}}
    configs = expand_sweep(doc)
    assert len(configs) == 18
    assert len({c.scenario_id for c in configs}) == 18
    rows = sweep(configs)
    assert len(rows) == 18 and all(r.ok for r in rows)


def test_results_csv_deterministic(tmp_path):
    cfg = ScenarioConfig(seed=9, tau=150, min_samples=50)
    for d in ("x", "y"):
        write_results(run_scenario(cfg), tmp_path / d)
    for name in ("results.csv", "fig6.csv", "fig7.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_idle_network_flagged_undefined():
    (row,) = run_scenario(ScenarioConfig(seed=1, tau=150, min_samples=50, bg_rate_MBps=0.0))
    assert row.true_shared_var_ns2 == 0.0
    assert row.dce_cov_ns2 == 0.0
    assert row.rel_error is None
    assert row.rel_error_flag == "undefined:zero-shared-variance"


def test_filter_disabled_matches_direct_covariance_exactly():
    (row,) = run_scenario(ScenarioConfig(seed=4, tau=300, min_samples=50, filter_multiplier=None))
    assert row.dce_cov_ns2 == row.direct_cov_ns2


def test_schedule_mode_with_sender_jitter():
    cfg = ScenarioConfig(seed=6, tau=300, min_samples=50, mode="schedule", sender_jitter_us=1000.0, filter_multiplier=None)
    (row,) = run_scenario(cfg)
    assert row.dce_cov_ns2 == row.direct_cov_ns2


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        run_scenario(ScenarioConfig(seed=1, tau=20, min_samples=100))
    (row,) = sweep([ScenarioConfig(seed=1, tau=20, min_samples=100)])
    assert not row.ok and row.error.startswith("InsufficientSamples")


def test_delay_series_and_slope(tmp_path):
    run = simulate(ScenarioConfig(seed=3, tau=100, min_samples=50))
    path = tmp_path / "fig5.csv"
    write_delay_series(run, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(run.truth[("a", "b")].d_a)
    assert set(rows[0]) == {"pair", "k", "d_a_ns", "d_b_ns", "d_shared_ns"}
    with pytest.raises(ValueError):
        fig6_slope(rows_from_run(run))


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_cli_run_writes_outputs(tmp_path, capsys):
    conf = write_yaml(tmp_path / "c.yaml", {"seed": 1, "tau": 120, "min_samples": 50})
    out = tmp_path / "out"
    assert cli.main(["run", conf, "-o", str(out), "--verbose-trace"]) == cli.EXIT_OK
    for name in ("results.csv", "fig6.csv", "fig7.csv", "schedule.csv", "trace.csv", "fig5.csv",
                 "config.normalized.yaml", "fig5.png", "fig6.png", "fig7.png"):
        assert (out / name).stat().st_size > 0, name
    assert "a-b" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = write_yaml(tmp_path / "bad.yaml", {"seed": 1, "packet_size": 2000})
    assert cli.main(["run", bad, "-o", str(tmp_path / "o1")]) == cli.EXIT_CONFIG
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    short = write_yaml(tmp_path / "short.yaml", {"seed": 1, "tau": 20, "min_samples": 100})
    assert cli.main(["run", short, "-o", str(tmp_path / "o2"), "--no-plots"]) == cli.EXIT_SCENARIO
    many = write_yaml(tmp_path / "many.yaml", {"seed": 1, "tau": 20, "min_samples": 100, "sweep": {"seed": [1, 2]}})
    assert cli.main(["sweep", many, "-o", str(tmp_path / "o3"), "--no-plots", "--workers", "1"]) == cli.EXIT_SCENARIO


def test_cli_validate_and_schedule(tmp_path, capsys):
    conf = write_yaml(tmp_path / "c.yaml", {"seed": 8})
    assert cli.main(["validate", conf]) == cli.EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out)["seed"] == 8
    assert cli.main(["schedule", "--hosts", "4", "--tau", "3"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "round,order,marked_pairs,counts"
    assert lines[1] == "0,0-1-3-2,0:1;1:3;2:3,0;0;0"
    assert cli.main(["schedule"]) == cli.EXIT_CONFIG
