"""Dynamic memory-request control for CXL backlog in the shared ToR.

Once per sample window the controller:

* decomposes the mean ToR residence into DDR and CXL parts using the DDR
  insert share and a fixed DDR reference latency,
* compares the CXL estimate with a read/write-weighted target and flags a
  backlog when it is above target and still growing,
* attributes CXL traffic to cores (traffic filter, 1-in-N address sampling),
* confines those cores to a restricted set (8, 4 or 1 cores) or, at the
  tightest level, halves their issue-rate cap.

Demotion on backlog goes straight to the tightest level. Promotion is one
level per ``hysteresis_windows`` under-target windows and stops below the
level at which the last backlog was seen; that ceiling clears after a window
without CXL traffic.
"""

from __future__ import annotations

import csv
import io
import logging
import random
from dataclasses import dataclass, field

from .engine import CXL, DDR
from .platform import Kind, Tier

log = logging.getLogger(__name__)

UNRESTRICTED = 0
LEVEL_NAMES = ("unrestricted", "L1", "L2", "L3")
DECISION_COLUMNS = ("window_id", "alpha", "t_avg", "t_cxl", "target", "level", "rate_cap",
                    "backlog", "cxl_cores")


@dataclass(frozen=True)
class WindowStats:
    window_cycles: int
    tor_inserts: int
    tor_occupancy_integral: int
    ddr_inserts: int
    cxl_inserts: int
    cxl_read_fraction: float
    other_inserts: int = 0


@dataclass
class ControllerConfig:
    sample_period_cycles: int = 20000
    read_threshold: float | str = "auto"
    read_threshold_factor: float = 2.0
    t_ddr_ref: float | str = "auto"
    hysteresis_windows: int = 2
    rate_cap_floor: float = 1.0 / 1024
    sampling_rate_n: int = 64
    high_traffic_threshold: float = 10e6  # bytes/second
    level_cores: tuple = (8, 4, 1)

    @classmethod
    def from_dict(cls, raw: dict) -> "ControllerConfig":
        from .platform import ConfigError
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"controller: unknown field(s) {sorted(unknown)}")
        raw = dict(raw)
        if "level_cores" in raw:
            raw["level_cores"] = tuple(raw["level_cores"])
        cfg = cls(**raw)
        if len(cfg.level_cores) != 3 or any(k < 1 for k in cfg.level_cores):
            raise ConfigError("controller.level_cores needs three positive sizes")
        if cfg.hysteresis_windows < 1 or cfg.sampling_rate_n < 1:
            raise ConfigError("controller: hysteresis_windows and sampling_rate_n must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["level_cores"] = list(self.level_cores)
        return out


@dataclass
class ControllerState:
    t_ddr_ref: float
    read_threshold: float
    level: int = UNRESTRICTED
    ceiling: int = UNRESTRICTED  # least restrictive level still allowed
    rate_cap: float | None = None
    cxl_core_set: frozenset = frozenset()
    under_target: int = 0
    history: list = field(default_factory=list)
    calibration_warnings: int = 0

    @property
    def write_threshold(self) -> float:
        return 2.0 * self.read_threshold


def estimate_alpha(stats: WindowStats) -> float | None:
    """DDR share of memory ToR inserts; None when the window has no inserts."""
    n = stats.ddr_inserts + stats.cxl_inserts
    if n == 0:
        return None
    return stats.ddr_inserts / n


def forward_mix(t_ddr: float, t_cxl: float, alpha: float) -> float:
    return alpha * t_ddr + (1.0 - alpha) * t_cxl


def solve_tcxl(t_avg: float, alpha: float, t_ddr_ref: float) -> tuple[float | None, bool]:
    """Invert the insert-weighted latency mix for the CXL term.

    Returns ``(t_cxl, clamped)``; ``t_cxl`` is None when alpha == 1.
    """
    if alpha >= 1.0:
        return None, False
    t_cxl = (t_avg - alpha * t_ddr_ref) / (1.0 - alpha)
    if t_cxl < 0:
        return 0.0, True
    return t_cxl, False


def target_cxl_latency(stats: WindowStats, read_threshold: float) -> float:
    f = stats.cxl_read_fraction
    return f * read_threshold + (1.0 - f) * 2.0 * read_threshold


def detect_backlog(t_cxl: float, target: float, previous: float | None) -> bool:
    """Above target and still growing; a lone spike never triggers."""
    if previous is None:
        return False
    return t_cxl > target and t_cxl > previous


class _Sampler:
    """Per-window tally of 1-in-N sampled completions, by core and tier."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.rng = random.Random(seed)
        self.countdown = {}
        self.samples = {}
        self.cxl_txn = 0
        self.cxl_read_txn = 0

    def on_retire(self, req):
        if req.kind is Kind.COHERENCE or req.hit:
            return
        if req.tier is Tier.CXL:
            if req.kind is Kind.LOAD:
                self.cxl_txn += 1
                self.cxl_read_txn += 1
            elif req.kind is Kind.STORE:
                self.cxl_txn += 2
                self.cxl_read_txn += 1
            else:
                self.cxl_txn += 1
        c = req.core
        left = self.countdown.get(c)
        if left is None:
            left = self.rng.randrange(self.n)
        if left == 0:
            ddr, cxl = self.samples.get(c, (0, 0))
            self.samples[c] = (ddr + (req.tier is Tier.DDR), cxl + (req.tier is Tier.CXL))
            left = self.n
        self.countdown[c] = left - 1

    def reset(self):
        self.samples = {}
        self.cxl_txn = 0
        self.cxl_read_txn = 0


def sample_window(win, cxl_read_fraction: float = 1.0) -> WindowStats:
    return WindowStats(
        window_cycles=win.cycles,
        tor_inserts=win.cat_inserts(DDR) + win.cat_inserts(CXL),
        tor_occupancy_integral=win.cat_occupancy(DDR) + win.cat_occupancy(CXL),
        ddr_inserts=win.cat_inserts(DDR),
        cxl_inserts=win.cat_inserts(CXL),
        cxl_read_fraction=cxl_read_fraction,
        other_inserts=win.cat_inserts(2),
    )


class Controller:
    """Runs synchronously at every metrics window boundary."""

    def __init__(self, config: ControllerConfig, mode: str = "on", seed: int = 0,
                 t_ddr_ref: float | None = None, read_threshold: float | None = None):
        if mode not in ("on", "mba"):
            raise ValueError(f"controller mode must be 'on' or 'mba', got {mode!r}")
        self.config = config
        self.mode = mode
        self.seed = seed
        self._t_ddr_ref = t_ddr_ref
        self._read_threshold = read_threshold
        self.state = None
        self.decisions = []
        self.sim = None
        self.sampler = _Sampler(config.sampling_rate_n, seed + 101)
        self._prev_t_cxl = None
        self._group = None
        self._r0 = None

    def attach(self, sim, store) -> None:
        from .calibrate import calibrate_platform
        cfg = self.config
        if store.window_cycles != cfg.sample_period_cycles:
            store.window_cycles = cfg.sample_period_cycles
        t_ref = self._t_ddr_ref if self._t_ddr_ref is not None else cfg.t_ddr_ref
        thr = self._read_threshold if self._read_threshold is not None else cfg.read_threshold
        if t_ref == "auto" or thr == "auto":
            report = calibrate_platform(sim.platform)
            if t_ref == "auto":
                t_ref = report["t_ddr_ref"]
            if thr == "auto":
                thr = cfg.read_threshold_factor * report["cxl_unloaded_latency"]
        self.state = ControllerState(t_ddr_ref=float(t_ref), read_threshold=float(thr))
        self.sim = sim
        self.store = store
        sim.retire_hooks.append(self.sampler.on_retire)
        sim.window_hooks.append(self._on_cycle)

    def _on_cycle(self, sim, t):
        # metrics hook runs first and has already closed the window
        if sim.cycle % self.config.sample_period_cycles == 0 and self.store.windows:
            win = self.store.windows[-1]
            if win.end.t_end == sim.cycle:
                self.on_window(win)

    # ------------------------------------------------------------------ logic
    def on_window(self, win) -> dict:
        st = self.state
        smp = self.sampler
        read_frac = smp.cxl_read_txn / smp.cxl_txn if smp.cxl_txn else 1.0
        stats = sample_window(win, read_frac)
        alpha = estimate_alpha(stats)
        t_avg = stats.tor_occupancy_integral / stats.tor_inserts if stats.tor_inserts else None
        target = target_cxl_latency(stats, st.read_threshold)
        t_cxl = None
        backlog = False
        if alpha is None:
            pass  # no measurement: hold state
        elif alpha >= 1.0:
            self._no_cxl_window()
        else:
            t_cxl, clamped = solve_tcxl(t_avg, alpha, st.t_ddr_ref)
            if clamped:
                st.calibration_warnings += 1
                log.debug("window %d: negative t_cxl clamped to 0", win.index)
            backlog = detect_backlog(t_cxl, target, self._prev_t_cxl)
            cxl_cores = self.attribute(win)
            if backlog:
                self._demote(cxl_cores, win)
            elif t_cxl > target and st.level == len(LEVEL_NAMES) - 1:
                st.under_target = 0
                self._update_set(cxl_cores)
                self._tighten_rate(win)
            elif t_cxl <= target:
                st.under_target += 1
                self._update_set(cxl_cores)
                if st.under_target >= self.config.hysteresis_windows:
                    self._promote()
            else:
                st.under_target = 0
                self._update_set(cxl_cores)
        self._prev_t_cxl = t_cxl
        row = {
            "window_id": win.index, "alpha": alpha, "t_avg": t_avg, "t_cxl": t_cxl,
            "target": target, "level": LEVEL_NAMES[st.level], "rate_cap": st.rate_cap,
            "backlog": backlog, "cxl_cores": len(st.cxl_core_set),
        }
        self.decisions.append(row)
        st.history.append(row)
        smp.reset()
        return row

    def attribute(self, win) -> frozenset:
        """Cores above the traffic filter with at least one sampled CXL address."""
        cfg = self.config
        p = self.sim.platform
        min_bytes = cfg.high_traffic_threshold * win.cycles / p.clock_hz
        out = []
        for core, (_, cxl) in self.sampler.samples.items():
            if cxl and win.core_lines(core) * p.cacheline_bytes >= min_bytes:
                out.append(core)
        return frozenset(out)

    def _update_set(self, cores):
        st = self.state
        if st.level == UNRESTRICTED:
            return
        if not cores:
            # nothing left to throttle
            self._apply(UNRESTRICTED, frozenset(), None)
            return
        if cores != st.cxl_core_set:
            self._apply(st.level, cores, st.rate_cap)

    def _demote(self, cores, win):
        st = self.state
        if not cores:
            return
        if st.level == UNRESTRICTED or not cores <= st.cxl_core_set:
            # unrestricted cores caused it; the current level is not implicated
            st.ceiling = 1
        else:
            st.ceiling = max(st.ceiling, min(st.level + 1, 3))
        st.under_target = 0
        self._r0 = sum(win.core_issued(c) for c in cores) / win.cycles
        self._apply(3, cores, None)

    def _promote(self):
        st = self.state
        st.under_target = 0
        if st.level == UNRESTRICTED:
            return
        nxt = st.level - 1
        if nxt < st.ceiling:
            return
        self._apply(nxt, st.cxl_core_set, None)

    def _tighten_rate(self, win):
        st = self.state
        cores = st.cxl_core_set
        if not cores:
            return
        if st.rate_cap is None:
            observed = sum(win.core_issued(c) for c in cores) / win.cycles
            cap = observed / 2.0
        else:
            cap = st.rate_cap / 2.0
        cap = max(cap, self.config.rate_cap_floor)
        self._apply(st.level, cores, cap)

    def _no_cxl_window(self):
        st = self.state
        st.ceiling = UNRESTRICTED
        st.under_target += 1
        if st.under_target >= self.config.hysteresis_windows:
            st.under_target = 0
            if st.level != UNRESTRICTED:
                nxt = st.level - 1
                self._apply(nxt, st.cxl_core_set if nxt else frozenset(), None)

    def _apply(self, level, cores, rate_cap):
        """Push a (level, core set, cap) decision into the engine."""
        st = self.state
        sim = self.sim
        old = st.cxl_core_set
        st.level = level
        st.rate_cap = rate_cap
        st.cxl_core_set = frozenset(cores) if level != UNRESTRICTED else frozenset()
        released = [c for c in old if c not in st.cxl_core_set]
        if released:
            sim.release(released)
        if level == UNRESTRICTED or not st.cxl_core_set:
            self._group = None
            return
        k = self.config.level_cores[level - 1]
        if self.mode == "on":
            self._group = sim.restrict(st.cxl_core_set, k, rate_cap=rate_cap)
        else:
            # rate caps only: each level allows k cores' worth of backlog-free issue
            per_core = self._per_core_rate()
            cap = k * per_core if rate_cap is None else rate_cap
            if rate_cap is None:
                st.rate_cap = cap
            self._group = sim.restrict(st.cxl_core_set, len(st.cxl_core_set), rate_cap=cap)

    def _per_core_rate(self):
        sim = self.sim
        devs = sim.platform.cxl_devices
        lat = devs[0].unloaded_latency()
        mlp = max(c.mlp_limit for c in sim.cores.values())
        return mlp / lat

    def level_cores(self) -> int | None:
        st = self.state
        if st.level == UNRESTRICTED:
            return None
        return self.config.level_cores[st.level - 1]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def decisions_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECISION_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in DECISION_COLUMNS])
    return buf.getvalue()
