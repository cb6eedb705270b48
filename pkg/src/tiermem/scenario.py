"""Scenario config: parse, validate, serialize and wire up a simulation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .engine import Simulation
from .llc import LlcModel
from .metrics import MetricsStore
from .platform import PAGE_BYTES, ConfigError, PlatformSpec, load_platform
from .workloads import Workload, WorkloadSpec, region_bytes

CONTROLLER_MODES = ("off", "on", "mba")


@dataclass
class Scenario:
    name: str
    platform: PlatformSpec
    workloads: list
    duration_cycles: int
    seed: int
    description: str = ""
    window_cycles: int = 20000
    llc: dict | None = None
    controller: dict = field(default_factory=lambda: {"mode": "off"})
    coherence_service: int = 60
    jitter: bool = False

    def __post_init__(self):
        if self.duration_cycles < 0:
            raise ConfigError("duration_cycles must be >= 0")
        if self.window_cycles <= 0:
            raise ConfigError("window_cycles must be > 0")
        if not self.workloads:
            raise ConfigError("scenario needs at least one workload")
        names = [w.name for w in self.workloads]
        if len(set(names)) != len(names):
            raise ConfigError("workload names must be unique")
        mode = self.controller.get("mode", "off")
        if mode not in CONTROLLER_MODES:
            raise ConfigError(f"controller.mode must be one of {CONTROLLER_MODES}")

    @property
    def controller_mode(self) -> str:
        return self.controller.get("mode", "off")

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "description": self.description,
            "platform": self.platform.to_dict(),
            "workloads": [w.to_dict() for w in self.workloads],
            "duration_cycles": self.duration_cycles,
            "window_cycles": self.window_cycles,
            "seed": self.seed,
            "controller": dict(self.controller),
            "coherence_service": self.coherence_service,
            "jitter": self.jitter,
        }
        if self.llc is not None:
            out["llc"] = dict(self.llc)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SCENARIO_KEYS = {"name", "description", "platform", "workloads", "duration_cycles",
                  "window_cycles", "seed", "controller", "coherence_service", "jitter", "llc"}


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"scenario: unknown field(s) {sorted(unknown)}")
    for key in ("name", "platform", "workloads", "duration_cycles", "seed"):
        if key not in raw:
            raise ConfigError(f"scenario: missing required field {key!r}")
    platform = load_platform(raw["platform"])
    workloads = []
    for i, w in enumerate(raw["workloads"]):
        if not isinstance(w, dict):
            raise ConfigError(f"workloads[{i}]: expected an object")
        unknown = set(w) - set(WorkloadSpec.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"workloads[{i}] ({w.get('name', '?')}): unknown field(s) {sorted(unknown)}")
        if "name" not in w:
            raise ConfigError(f"workloads[{i}]: missing 'name'")
        try:
            workloads.append(WorkloadSpec(**w))
        except TypeError as exc:
            raise ConfigError(f"workloads[{i}] ({w['name']}): {exc}") from None
    llc = raw.get("llc")
    if llc is not None:
        if not isinstance(llc, dict):
            raise ConfigError("llc must be an object")
        unknown = set(llc) - {"hit_service", "partitions", "workloads", "capacity_bytes"}
        if unknown:
            raise ConfigError(f"llc: unknown field(s) {sorted(unknown)}")
    controller = raw.get("controller", {"mode": "off"})
    if isinstance(controller, str):
        controller = {"mode": controller}
    return Scenario(
        name=raw["name"], description=raw.get("description", ""), platform=platform,
        workloads=workloads, duration_cycles=int(raw["duration_cycles"]),
        window_cycles=int(raw.get("window_cycles", 20000)), seed=int(raw["seed"]),
        llc=llc, controller=dict(controller),
        coherence_service=int(raw.get("coherence_service", 60)),
        jitter=bool(raw.get("jitter", False)),
    )


def load_scenario(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(raw)


def preset_names() -> list:
    root = resources.files("tiermem") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> Scenario:
    if name not in preset_names():
        raise ConfigError(f"unknown scenario {name!r}; bundled: {', '.join(preset_names())}")
    text = (resources.files("tiermem") / "scenarios" / f"{name}.json").read_text()
    return scenario_from_dict(json.loads(text))


def resolve(ref: str) -> Scenario:
    """A scenario file path, or the name of a bundled preset."""
    path = Path(ref)
    if path.is_file():
        return load_scenario(path)
    if path.suffix == ".json" and path.stem in preset_names():
        return load_preset(path.stem)
    if path.suffix == ".json" or "/" in ref:
        raise ConfigError(f"scenario file not found: {ref}")
    return load_preset(ref)


def allocate(scenario: Scenario) -> list:
    """Bind workloads to cores and carve disjoint, page-aligned memory regions."""
    p = scenario.platform
    next_core = [s * p.cores_per_socket for s in range(p.sockets)]
    next_region = [0] * p.sockets
    out = []
    for idx, spec in enumerate(scenario.workloads):
        if not 0 <= spec.socket < p.sockets:
            raise ConfigError(f"workload {spec.name!r}: socket {spec.socket} does not exist")
        if spec.wss_bytes < p.cacheline_bytes:
            raise ConfigError(f"workload {spec.name!r}: wss_bytes below one cacheline")
        start = next_core[spec.socket] if spec.first_core is None else spec.first_core
        cores = list(range(start, start + spec.threads))
        if cores[-1] >= (spec.socket + 1) * p.cores_per_socket or start < spec.socket * p.cores_per_socket:
            raise ConfigError(f"workload {spec.name!r}: not enough cores on socket {spec.socket}")
        next_core[spec.socket] = max(next_core[spec.socket], cores[-1] + 1)
        mem_socket = spec.socket if spec.memory_socket is None else spec.memory_socket
        if not 0 <= mem_socket < p.sockets:
            raise ConfigError(f"workload {spec.name!r}: memory_socket out of range")
        base = next_region[mem_socket]
        size = region_bytes(spec, p.cacheline_bytes)
        next_region[mem_socket] = base + -(-size // PAGE_BYTES) * PAGE_BYTES
        out.append(Workload(spec, p, idx, cores, base))
    return out


def build_llc(scenario: Scenario, workloads) -> LlcModel | None:
    cfg = scenario.llc
    if cfg is None:
        return None
    p = scenario.platform
    llc = LlcModel(int(cfg.get("capacity_bytes", p.llc_capacity_bytes)), p.cacheline_bytes,
                   int(cfg.get("hit_service", 40)), seed=scenario.seed + 17)
    names = cfg.get("workloads") or [w.name for w in workloads]
    by_name = {w.name: w for w in workloads}
    for name in names:
        if name not in by_name:
            raise ConfigError(f"llc: unknown workload {name!r}")
        llc.register(name, by_name[name].spec.wss_bytes * by_name[name].spec.threads)
    for name, frac in (cfg.get("partitions") or {}).items():
        if name not in by_name:
            raise ConfigError(f"llc.partitions: unknown workload {name!r}")
        try:
            llc.set_partition(name, frac)
        except ValueError as exc:
            raise ConfigError(f"llc.partitions: {exc}") from None
    return llc


@dataclass
class Run:
    scenario: Scenario
    sim: Simulation
    metrics: MetricsStore
    controller: object = None

    def run(self, cycles: int | None = None) -> "Run":
        target = self.scenario.duration_cycles if cycles is None else self.sim.cycle + cycles
        self.sim.run_until(target)
        return self

    def finish(self) -> "Run":
        self.metrics.close_window(self.sim)
        return self


def build(scenario: Scenario, *, record_events=False, check_invariants=False,
          controller_mode: str | None = None) -> Run:
    workloads = allocate(scenario)
    llc = build_llc(scenario, workloads)
    sim = Simulation(scenario.platform, workloads, llc=llc,
                     coherence_service=scenario.coherence_service, jitter=scenario.jitter,
                     seed=scenario.seed, record_events=record_events,
                     check_invariants=check_invariants)
    store = MetricsStore(scenario.platform.cacheline_bytes, scenario.platform.clock_hz,
                         scenario.window_cycles, [w.name for w in workloads])
    store.attach(sim)
    run = Run(scenario, sim, store)
    mode = controller_mode or scenario.controller_mode
    if mode != "off":
        from .controller import Controller, ControllerConfig
        raw = {k: v for k, v in scenario.controller.items() if k != "mode"}
        raw.setdefault("sample_period_cycles", scenario.window_cycles)
        cfg = ControllerConfig.from_dict(raw)
        run.controller = Controller(cfg, mode=mode, seed=scenario.seed)
        run.controller.attach(sim, store)
    return run
