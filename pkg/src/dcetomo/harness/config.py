"""Scenario configuration: schema validation, defaults and sweep expansion.

Documents are YAML (JSON is accepted as a subset).  Validation collects
every problem it finds and reports them together; a config is either fully
valid or rejected.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional

import yaml

from ..errors import ConfigError, TomographyError
from ..netsim import MTU, build_topology

# Reconstruction of the test network: source f feeds a two-router shared
# segment (f-r1-s); s branches to receiver a through r3 and directly to b.
# bg1 loads the whole shared segment, bg2 joins mid-way at r1, bg3 adds
# independent noise on a's branch only.
DEFAULT_TOPOLOGY = {
    "root": "f",
    "links": [
        {"parent": "f", "child": "r1", "bandwidth_bps": 100_000_000, "propagation_us": 100.0},
        {"parent": "f", "child": "bg1", "bandwidth_bps": 100_000_000, "propagation_us": 5.0},
        {"parent": "r1", "child": "s", "bandwidth_bps": 100_000_000, "propagation_us": 100.0},
        {"parent": "r1", "child": "bg2", "bandwidth_bps": 100_000_000, "propagation_us": 5.0},
        {"parent": "s", "child": "r3", "bandwidth_bps": 100_000_000, "propagation_us": 40.0},
        {"parent": "s", "child": "b", "bandwidth_bps": 100_000_000, "propagation_us": 60.0},
        {"parent": "s", "child": "bg3", "bandwidth_bps": 100_000_000, "propagation_us": 5.0},
        {"parent": "s", "child": "sink1", "bandwidth_bps": 100_000_000, "propagation_us": 5.0},
        {"parent": "r3", "child": "a", "bandwidth_bps": 100_000_000, "propagation_us": 40.0},
        {"parent": "r3", "child": "sink3", "bandwidth_bps": 100_000_000, "propagation_us": 5.0},
    ],
    "receivers": ["a", "b"],
    "background_hosts": ["bg1", "bg2", "bg3"],
}

DEFAULT_BACKGROUND = [
    {"host": "bg1", "sink": "sink1", "rate_scale": 1.0},
    {"host": "bg2", "sink": "sink1", "rate_scale": 0.15},
    {"host": "bg3", "sink": "sink3", "rate_scale": 0.3},
]

# key -> (default, kind); "required" marks keys without a default
SCALAR_KEYS = {
    "seed": ("required", "int"),
    "packet_size": (MTU, "int"),
    "delta_us": (5000.0, "number"),
    "mode": ("constant", "str"),
    "sender_jitter_us": (0.0, "number"),
    "tau": (1550, "int"),
    "bg_rate_MBps": (4.0, "number"),
    "bg_packet_size": (1000, "int"),
    "filter_multiplier": (2.0, "number?"),
    "min_samples": (100, "int"),
    "horizon_ms": (None, "number?"),
    "clock_offset_max_us": (1_000_000.0, "number"),
    "clock_drift_ppm": (0.0, "number"),
    "trace_background": (False, "bool"),
}
STRUCT_KEYS = {"topology", "background", "sweep", "name"}
SWEEP_KEYS = {"bg_rate_MBps", "packet_size", "seed"}
LINK_KEYS = {"parent", "child", "bandwidth_bps", "propagation_us", "queue_cap_bytes"}
TOPOLOGY_KEYS = {"root", "links", "receivers", "background_hosts"}
BACKGROUND_KEYS = {"host", "sink", "rate_scale"}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    packet_size: int = MTU
    delta_us: float = 5000.0
    mode: str = "constant"
    sender_jitter_us: float = 0.0
    tau: int = 1550
    bg_rate_MBps: float = 4.0
    bg_packet_size: int = 1000
    filter_multiplier: Optional[float] = 2.0
    min_samples: int = 100
    horizon_ms: Optional[float] = None
    clock_offset_max_us: float = 1_000_000.0
    clock_drift_ppm: float = 0.0
    trace_background: bool = False
    name: Optional[str] = None
    topology: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_TOPOLOGY))
    background: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_BACKGROUND))

    @property
    def scenario_id(self) -> str:
        base = f"bg{self.bg_rate_MBps:g}_sz{self.packet_size}_seed{self.seed}"
        return f"{self.name}_{base}" if self.name else base

    @property
    def delta_ns(self) -> int:
        return int(round(self.delta_us * 1000))

    @property
    def jitter_ns(self) -> int:
        return int(round(self.sender_jitter_us * 1000))

    def normalized(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "ScenarioConfig":
        d = self.normalized()
        d.update(kw)
        return ScenarioConfig(**d)


def _type_ok(value, kind: str) -> bool:
    if kind.endswith("?"):
        if value is None:
            return True
        kind = kind[:-1]
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "bool":
        return isinstance(value, bool)
    return False


def _check_scalars(doc: dict, diag: list, sweep_keys=frozenset()) -> dict:
    out = {}
    for key, (default, kind) in SCALAR_KEYS.items():
        if key not in doc:
            if default == "required" and key not in sweep_keys:
                diag.append(f"{key}: missing required key (reproducibility is mandatory)")
            elif default != "required":
                out[key] = default
            continue
        value = doc[key]
        if not _type_ok(value, kind):
            diag.append(f"{key}: expected {kind.rstrip('?')}, got {value!r}")
            continue
        out[key] = float(value) if kind.startswith("number") and value is not None else value
    return out


def _check_ranges(cfg: dict, diag: list, prefix: str = "") -> None:
    def bad(key, msg):
        diag.append(f"{prefix}{key}: {msg}")

    size = cfg.get("packet_size")
    if size is not None:
        if size > MTU:
            bad("packet_size", f"{size} exceeds MTU {MTU}")
        elif size < 1:
            bad("packet_size", "must be >= 1")
    bgs = cfg.get("bg_packet_size")
    if bgs is not None and not 1 <= bgs <= MTU:
        bad("bg_packet_size", f"must be within 1..{MTU}, got {bgs}")
    if cfg.get("delta_us") is not None and cfg["delta_us"] <= 0:
        bad("delta_us", "must be > 0")
    if cfg.get("tau") is not None and cfg["tau"] < 2:
        bad("tau", "must be >= 2")
    if cfg.get("bg_rate_MBps") is not None and cfg["bg_rate_MBps"] < 0:
        bad("bg_rate_MBps", "must be >= 0")
    fm = cfg.get("filter_multiplier")
    if fm is not None and fm <= 1:
        bad("filter_multiplier", "must be > 1 (or null to disable filtering)")
    if cfg.get("min_samples") is not None and cfg["min_samples"] < 2:
        bad("min_samples", "must be >= 2")
    if cfg.get("horizon_ms") is not None and cfg["horizon_ms"] <= 0:
        bad("horizon_ms", "must be > 0")
    if cfg.get("clock_offset_max_us") is not None and cfg["clock_offset_max_us"] < 0:
        bad("clock_offset_max_us", "must be >= 0")
    mode = cfg.get("mode")
    if mode is not None and mode not in ("constant", "schedule"):
        bad("mode", f"must be 'constant' or 'schedule', got {mode!r}")
    jit = cfg.get("sender_jitter_us") or 0.0
    if jit < 0:
        bad("sender_jitter_us", "must be >= 0")
    elif jit > 0:
        if mode == "constant":
            bad("sender_jitter_us", "sender jitter requires mode 'schedule'")
        if cfg.get("delta_us") and 2 * jit >= cfg["delta_us"]:
            bad("sender_jitter_us", "must be below delta_us / 2")


def _check_topology(doc, diag: list) -> Optional[dict]:
    if doc is None:
        return copy.deepcopy(DEFAULT_TOPOLOGY)
    if not isinstance(doc, dict):
        diag.append("topology: expected a mapping")
        return None
    ok = True
    for key in sorted(set(doc) - TOPOLOGY_KEYS):
        diag.append(f"topology.{key}: unknown key")
        ok = False
    for key in ("root", "links", "receivers"):
        if key not in doc:
            diag.append(f"topology.{key}: missing required key")
            ok = False
    links = doc.get("links") or []
    if not isinstance(links, list):
        diag.append("topology.links: expected a list")
        return None
    for i, link in enumerate(links):
        where = f"topology.links[{i}]"
        if not isinstance(link, dict):
            diag.append(f"{where}: expected a mapping")
            ok = False
            continue
        for key in sorted(set(link) - LINK_KEYS):
            diag.append(f"{where}.{key}: unknown key")
            ok = False
        for key in ("parent", "child"):
            if key not in link:
                diag.append(f"{where}.{key}: missing required key")
                ok = False
        for key, lo, strict in (("bandwidth_bps", 0, True), ("propagation_us", 0, False), ("queue_cap_bytes", 0, False)):
            if key in link and link[key] is not None:
                v = link[key]
                if not _type_ok(v, "number") or (v <= lo if strict else v < lo):
                    diag.append(f"{where}.{key}: must be a number {'>' if strict else '>='} {lo}, got {v!r}")
                    ok = False
    if not ok:
        return None
    try:
        topo = build_topology(doc)
    except TomographyError as exc:
        diag.append(f"topology: {type(exc).__name__}: {exc}")
        return None
    if len(topo.receivers) < 2:
        diag.append("topology.receivers: need at least 2 receivers")
        return None
    return doc


def _check_background(doc, topo: Optional[dict], diag: list) -> Optional[list]:
    if doc is None:
        doc = copy.deepcopy(DEFAULT_BACKGROUND)
    if not isinstance(doc, list):
        diag.append("background: expected a list")
        return None
    nodes = None
    if topo is not None:
        nodes = {topo["root"]} | {l["child"] for l in topo["links"]}
    for i, flow in enumerate(doc):
        where = f"background[{i}]"
        if not isinstance(flow, dict):
            diag.append(f"{where}: expected a mapping")
            continue
        for key in sorted(set(flow) - BACKGROUND_KEYS):
            diag.append(f"{where}.{key}: unknown key")
        for key in ("host", "sink"):
            if key not in flow:
                diag.append(f"{where}.{key}: missing required key")
            elif nodes is not None and flow[key] not in nodes:
                diag.append(f"{where}.{key}: node {flow[key]!r} not in topology")
        scale = flow.get("rate_scale", 1.0)
        if not _type_ok(scale, "number") or scale < 0:
            diag.append(f"{where}.rate_scale: must be a number >= 0, got {scale!r}")
        flow.setdefault("rate_scale", 1.0)
    return doc


def _parse(document) -> dict:
    if isinstance(document, (str, bytes)):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError([f"document: not valid YAML: {exc}"]) from None
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(["document: expected a mapping at top level"])
    return copy.deepcopy(document)


def _validate(doc: dict, allow_sweep: bool) -> tuple:
    diag: list = []
    for key in sorted(set(doc) - set(SCALAR_KEYS) - STRUCT_KEYS):
        diag.append(f"{key}: unknown key")
    sweep = doc.get("sweep")
    if sweep is not None and not allow_sweep:
        diag.append("sweep: only allowed for sweep runs")
        sweep = None
    sweep_keys: set = set()
    if sweep is not None:
        if not isinstance(sweep, dict) or not sweep:
            diag.append("sweep: expected a non-empty mapping")
            sweep = None
        else:
            for key, values in sweep.items():
                if key not in SWEEP_KEYS:
                    diag.append(f"sweep.{key}: unknown key (allowed: {', '.join(sorted(SWEEP_KEYS))})")
                elif not isinstance(values, list) or not values:
                    diag.append(f"sweep.{key}: expected a non-empty list")
                else:
                    kind = SCALAR_KEYS[key][1]
                    for i, v in enumerate(values):
                        if not _type_ok(v, kind):
                            diag.append(f"sweep.{key}[{i}]: expected {kind}, got {v!r}")
                    sweep_keys.add(key)
    base = _check_scalars(doc, diag, sweep_keys)
    _check_ranges(base, diag)
    if sweep is not None:
        for key in sweep_keys:
            for i, v in enumerate(sweep[key]):
                _check_ranges({key: v}, diag, prefix=f"sweep.")
    name = doc.get("name")
    if name is not None and not isinstance(name, str):
        diag.append(f"name: expected str, got {name!r}")
    topo = _check_topology(doc.get("topology"), diag)
    background = _check_background(doc.get("background"), topo, diag)
    if diag:
        raise ConfigError(diag)
    base["topology"] = topo
    base["background"] = background
    base["name"] = name
    return base, (sweep if sweep is not None else {})


def validate_config(document) -> ScenarioConfig:
    """Validate a single-scenario document; raises ConfigError listing every problem."""
    base, _ = _validate(_parse(document), allow_sweep=False)
    return ScenarioConfig(**base)


def expand_sweep(document) -> list:
    """Validate a document and expand its ``sweep`` matrix (rate x size x seed)."""
    base, sweep = _validate(_parse(document), allow_sweep=True)
    rates = sweep.get("bg_rate_MBps", [base.get("bg_rate_MBps")])
    sizes = sweep.get("packet_size", [base.get("packet_size")])
    seeds = sweep.get("seed", [base.get("seed")])
    configs = []
    for seed, size, rate in itertools.product(seeds, sizes, rates):
        d = dict(base, bg_rate_MBps=float(rate), packet_size=size, seed=seed)
        configs.append(ScenarioConfig(**d))
    return configs


def load_document(path) -> dict:
    with open(path) as fh:
        return _parse(fh.read())


def dump_normalized(cfg) -> str:
    """Deterministic YAML echo of one or more fully-defaulted configs."""
    if isinstance(cfg, ScenarioConfig):
        data = cfg.normalized()
    else:
        data = [c.normalized() for c in cfg]
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)
