"""Scenario execution: simulate, estimate, compare against ground truth."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import TomographyError, InsufficientSamples
from ..estimator import NS2_PER_MS2, dce_estimate, direct_covariance, sample_covariance
from ..netsim import PoissonSourceSpec, Simulator, build_topology, random_clocks, Clock
from ..passive import PassiveDriver, ScheduleState
from .config import ScenarioConfig

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "scenario_id",
    "pair",
    "bg_rate_MBps",
    "packet_size",
    "seed",
    "n_total",
    "n_used",
    "dce_cov_ns2",
    "true_shared_var_ns2",
    "direct_cov_ns2",
    "rel_error",
    "rel_error_flag",
    "mean_delay_a_ns",
    "mean_delay_b_ns",
    "mean_shared_ns",
    "error",
]
FIG6_COLUMNS = ["scenario_id", "pair", "bg_rate_MBps", "packet_size", "seed", "true_shared_var_ns2", "dce_cov_ns2"]
FIG7_COLUMNS = ["scenario_id", "pair", "bg_rate_MBps", "packet_size", "seed", "rel_error"]
FIG5_COLUMNS = ["pair", "k", "d_a_ns", "d_b_ns", "d_shared_ns"]


@dataclass
class ResultRow:
    scenario_id: str
    pair: str
    bg_rate_MBps: float
    packet_size: int
    seed: int
    n_total: int = 0
    n_used: int = 0
    dce_cov_ns2: Optional[float] = None
    true_shared_var_ns2: Optional[float] = None
    direct_cov_ns2: Optional[float] = None
    rel_error: Optional[float] = None
    rel_error_flag: str = ""
    mean_delay_a_ns: Optional[float] = None
    mean_delay_b_ns: Optional[float] = None
    mean_shared_ns: Optional[float] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class PairTruth:
    """Ground-truth delays of the samples the estimator sees (k = 1..n)."""

    d_a: list
    d_b: list
    shared: list
    seq: list


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    sim: Simulator
    driver: PassiveDriver
    records: dict
    truth: dict = field(default_factory=dict)


def _build_sim(cfg: ScenarioConfig) -> Simulator:
    topo = build_topology(cfg.topology)
    offset = int(round(cfg.clock_offset_max_us * 1000))
    clocks = random_clocks(topo.nodes, cfg.seed, offset) if offset else {}
    if cfg.clock_drift_ppm:
        clocks = {n: Clock(c.offset, cfg.clock_drift_ppm) for n, c in clocks.items()}
    sim = Simulator(topo, clocks, trace_background=cfg.trace_background)
    ss = np.random.SeedSequence(cfg.seed)
    for flow, child in zip(cfg.background, ss.spawn(len(cfg.background))):
        rate = cfg.bg_rate_MBps * 1e6 * flow.get("rate_scale", 1.0)
        seed = int(child.generate_state(1)[0])
        sim.add_source(PoissonSourceSpec(flow["host"], rate, cfg.bg_packet_size, flow["sink"], seed))
    return sim


def _truth(sim: Simulator, pair) -> PairTruth:
    samples = sim.trace.pair_samples()[pair]
    rows = [
        (pa, pb)
        for pa, pb in zip(samples.packets_a, samples.packets_b)
        if pa.arrival is not None and pb.arrival is not None
    ]
    rows = rows[1:]  # the baseline sample is not part of the estimate
    d_a = [pa.total_delay for pa, _ in rows]
    d_b = [pb.total_delay for _, pb in rows]
    # the leading packet of the pair crossed the shared path first
    shared = [sim.trace.shared_path_delay(min(pa, pb, key=lambda p: p.id), pair) for pa, pb in rows]
    return PairTruth(d_a, d_b, shared, [pa.k for pa, _ in rows])


def simulate(cfg: ScenarioConfig) -> ScenarioRun:
    """Build the network, run passive measurement to coverage, collect truth."""
    sim = _build_sim(cfg)
    state = ScheduleState(len(sim.topology.receivers), cfg.tau)
    driver = PassiveDriver(
        sim,
        state,
        size=cfg.packet_size,
        delta=cfg.delta_ns,
        mode=cfg.mode,
        jitter=cfg.jitter_ns,
        seed=cfg.seed,
    )
    driver.start_emitting()
    horizon = None if cfg.horizon_ms is None else int(cfg.horizon_ms * 1e6)
    sim.run(horizon)
    records = driver.timing_records()
    truth = {pair: _truth(sim, pair) for pair in records}
    return ScenarioRun(cfg, sim, driver, records, truth)


def _row_for(cfg: ScenarioConfig, pair, record, truth: PairTruth) -> ResultRow:
    row = ResultRow(cfg.scenario_id, f"{pair[0]}-{pair[1]}", cfg.bg_rate_MBps, cfg.packet_size, cfg.seed)
    row.n_total = len(truth.d_a)
    if cfg.filter_multiplier is None:
        est = dce_estimate(record)
    else:
        est = dce_estimate(record, cfg.filter_multiplier, truth.d_a, truth.d_b)
    row.n_used = est.n_used
    if est.n_used < cfg.min_samples:
        raise InsufficientSamples(f"pair {row.pair}: {est.n_used} samples < minimum {cfg.min_samples}")
    row.dce_cov_ns2 = est.value
    row.true_shared_var_ns2 = sample_covariance(truth.shared, truth.shared)
    row.direct_cov_ns2 = direct_covariance(truth.d_a, truth.d_b)
    if row.true_shared_var_ns2 > 0:
        row.rel_error = abs(row.dce_cov_ns2 - row.true_shared_var_ns2) / row.true_shared_var_ns2
    else:
        row.rel_error_flag = "undefined:zero-shared-variance"
    row.mean_delay_a_ns = float(np.mean(truth.d_a))
    row.mean_delay_b_ns = float(np.mean(truth.d_b))
    row.mean_shared_ns = float(np.mean(truth.shared))
    return row


def rows_from_run(run: ScenarioRun) -> list:
    return [_row_for(run.config, pair, rec, run.truth[pair]) for pair, rec in sorted(run.records.items())]


def run_scenario(cfg: ScenarioConfig) -> list:
    """Simulate one scenario and return one ResultRow per receiver pair."""
    return rows_from_run(simulate(cfg))


def _safe_run(cfg: ScenarioConfig) -> list:
    try:
        return run_scenario(cfg)
    except TomographyError as exc:
        log.error("scenario %s failed: %s", cfg.scenario_id, exc)
        return [
            ResultRow(cfg.scenario_id, "", cfg.bg_rate_MBps, cfg.packet_size, cfg.seed,
                      error=f"{type(exc).__name__}: {exc}")
        ]


def sweep(configs: list, workers: int = 1) -> list:
    """Run every scenario; failures become rows with ``error`` set.

    Scenarios are independent, so they may run in separate processes; rows
    come back in config order either way.
    """
    if not configs:
        raise ValueError("sweep needs at least one scenario")
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_safe_run, configs))
    else:
        chunks = [_safe_run(c) for c in configs]
    return [row for chunk in chunks for row in chunk]


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_results(rows: list, outdir) -> dict:
    """Write results.csv, fig6.csv and fig7.csv; returns their paths."""
    os.makedirs(outdir, exist_ok=True)
    dicts = [asdict(r) for r in rows]
    good = [d for d in dicts if not d["error"]]
    paths = {
        "results": os.path.join(outdir, "results.csv"),
        "fig6": os.path.join(outdir, "fig6.csv"),
        "fig7": os.path.join(outdir, "fig7.csv"),
    }
    _write(paths["results"], RESULT_COLUMNS, dicts)
    _write(paths["fig6"], FIG6_COLUMNS, good)
    _write(paths["fig7"], FIG7_COLUMNS, [d for d in good if d["rel_error"] is not None])
    return paths


def write_delay_series(run: ScenarioRun, path) -> None:
    """Per-sample true delays as a time series."""
    rows = []
    for pair, t in sorted(run.truth.items()):
        for k, da, db, ds in zip(t.seq, t.d_a, t.d_b, t.shared):
            rows.append({"pair": f"{pair[0]}-{pair[1]}", "k": k, "d_a_ns": da, "d_b_ns": db, "d_shared_ns": ds})
    _write(path, FIG5_COLUMNS, rows)


def fig6_slope(rows: list) -> float:
    """OLS slope of dce_cov against true shared-path variance."""
    pts = [(r.true_shared_var_ns2, r.dce_cov_ns2) for r in rows if r.ok and r.true_shared_var_ns2]
    if len(pts) < 2:
        raise ValueError("need at least two scenarios with non-zero shared variance")
    x, y = np.array(pts, dtype=float).T
    return float(np.polyfit(x, y, 1)[0])


def summary_table(rows: list) -> str:
    """Human-readable summary in ms^2."""
    head = f"{'scenario':<32} {'pair':<6} {'n':>5} {'dce ms^2':>12} {'true ms^2':>12} {'rel err':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if not r.ok:
            lines.append(f"{r.scenario_id:<32} FAILED: {r.error}")
            continue
        rel = "n/a" if r.rel_error is None else f"{100 * r.rel_error:7.2f}%"
        lines.append(
            f"{r.scenario_id:<32} {r.pair:<6} {r.n_used:>5} "
            f"{r.dce_cov_ns2 / NS2_PER_MS2:>12.6g} {r.true_shared_var_ns2 / NS2_PER_MS2:>12.6g} {rel:>8}"
        )
    return "\n".join(lines)
