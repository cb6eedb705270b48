"""Window counters, Little's-law reductions and deterministic export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .engine import CATEGORY_NAMES

SCHEMA_VERSION = 1
METRICS_COLUMNS = ("window", "t_end", "series", "value")


@dataclass(frozen=True)
class Snapshot:
    """Cumulative counters at the end of cycle ``t_end - 1``."""
    t_end: int
    cha_inserts: tuple
    cha_occupancy: tuple
    cha_cat_inserts: tuple
    cha_cat_occupancy: tuple
    tier_lines: tuple
    workload_lines: tuple
    census: tuple
    core_completed: dict
    core_issued: dict
    core_stalled: dict


def take_snapshot(sim) -> Snapshot:
    t = sim.cycle - 1
    ins, occ, cins, cocc = [], [], [], []
    census = [0, 0, 0]
    for cha in sim.chas:
        total, cats = cha.integrals_through(t)
        ins.append(cha.cum_inserts)
        occ.append(total)
        cins.append(tuple(cha.cat_inserts))
        cocc.append(tuple(cats))
        for i in range(3):
            census[i] += cha.cat_occ[i]
    cores = sim.cores.values()
    return Snapshot(
        t_end=sim.cycle,
        cha_inserts=tuple(ins), cha_occupancy=tuple(occ),
        cha_cat_inserts=tuple(cins), cha_cat_occupancy=tuple(cocc),
        tier_lines=tuple(sim.tier_lines), workload_lines=tuple(sim.workload_lines),
        census=tuple(census),
        core_completed={c.id: c.completed for c in cores},
        core_issued={c.id: c.issued for c in cores},
        core_stalled={c.id: c.stalled_cycles for c in cores},
    )


@dataclass
class Window:
    index: int
    start: Snapshot
    end: Snapshot

    @property
    def cycles(self) -> int:
        return self.end.t_end - self.start.t_end

    def inserts(self, cha=None) -> int:
        idx = range(len(self.end.cha_inserts)) if cha is None else [cha]
        return sum(self.end.cha_inserts[i] - self.start.cha_inserts[i] for i in idx)

    def occupancy(self, cha=None) -> int:
        idx = range(len(self.end.cha_occupancy)) if cha is None else [cha]
        return sum(self.end.cha_occupancy[i] - self.start.cha_occupancy[i] for i in idx)

    def cat_inserts(self, cat: int) -> int:
        return sum(e[cat] - s[cat] for s, e in zip(self.start.cha_cat_inserts,
                                                     self.end.cha_cat_inserts))

    def cat_occupancy(self, cat: int) -> int:
        return sum(e[cat] - s[cat] for s, e in zip(self.start.cha_cat_occupancy,
                                                     self.end.cha_cat_occupancy))

    def tier_lines(self, tier_index: int) -> int:
        return self.end.tier_lines[tier_index] - self.start.tier_lines[tier_index]

    def workload_lines(self, w: int) -> int:
        return self.end.workload_lines[w] - self.start.workload_lines[w]

    def core_lines(self, core: int) -> int:
        return self.end.core_completed[core] - self.start.core_completed.get(core, 0)

    def core_issued(self, core: int) -> int:
        return self.end.core_issued[core] - self.start.core_issued.get(core, 0)


@dataclass
class MetricsStore:
    """Per-window series collected from a running simulation."""
    line_bytes: int
    clock_hz: float
    window_cycles: int
    workload_names: list
    windows: list = field(default_factory=list)
    _last: Snapshot | None = None

    def attach(self, sim) -> None:
        self._last = take_snapshot(sim)
        sim.window_hooks.append(self._on_cycle)

    def _on_cycle(self, sim, t) -> None:
        if sim.cycle % self.window_cycles == 0:
            self.close_window(sim)

    def close_window(self, sim) -> Window | None:
        snap = take_snapshot(sim)
        if snap.t_end == self._last.t_end:
            return None
        win = Window(len(self.windows), self._last, snap)
        self.windows.append(win)
        self._last = snap
        return win

    def bandwidth(self, win: Window, lines: int) -> float:
        return bandwidth(lines, self.line_bytes, self.clock_hz, win.cycles)

    def rows(self):
        """Long-format rows: (window, t_end, series, value)."""
        for win in self.windows:
            series = window_series(self, win)
            for name in sorted(series):
                yield win.index, win.end.t_end, name, series[name]


def window_series(store: MetricsStore, win: Window) -> dict:
    out = {
        "cycles": win.cycles,
        "tor_inserts": win.inserts(),
        "tor_occupancy": win.occupancy(),
        "bw_ddr": store.bandwidth(win, win.tier_lines(0)),
        "bw_cxl": store.bandwidth(win, win.tier_lines(1)),
        "lines_ddr": win.tier_lines(0),
        "lines_cxl": win.tier_lines(1),
    }
    for i, name in enumerate(CATEGORY_NAMES):
        out[f"inserts_{name}"] = win.cat_inserts(i)
        out[f"occupancy_{name}"] = win.cat_occupancy(i)
        out[f"census_{name}"] = win.end.census[i]
    for i, name in enumerate(store.workload_names):
        out[f"bw_wl_{name}"] = store.bandwidth(win, win.workload_lines(i))
        out[f"lines_wl_{name}"] = win.workload_lines(i)
    n = win.inserts()
    out["tor_latency"] = win.occupancy() / n if n else 0.0
    return out


def avg_tor_latency(win: Window, cha: int | None = None) -> float:
    n = win.inserts(cha)
    if n == 0:
        raise ZeroDivisionError("window has no ToR inserts")
    return win.occupancy(cha) / n


def bandwidth(lines: int, line_bytes: int, clock_hz: float, window_cycles: int) -> float:
    """Bytes/second for ``lines`` completed cachelines over a window."""
    if window_cycles <= 0:
        raise ValueError("window must be > 0 cycles")
    return lines * line_bytes * clock_hz / window_cycles


def percentiles(latencies, ps) -> list:
    """Nearest-rank percentiles: the ceil(p/100 * n)-th smallest sample."""
    data = sorted(latencies)
    if not data:
        raise ValueError("percentiles of an empty sample")
    n = len(data)
    out = []
    for p in ps:
        if not 0 < p <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {p}")
        rank = max(1, math.ceil(p / 100 * n))
        out.append(data[rank - 1])
    return out


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            return str(value)
        return f"{value:.6f}"
    return str(value)


def metrics_csv(store: MetricsStore) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for window, t_end, name, value in store.rows():
        w.writerow((window, t_end, name, fmt(value)))
    return buf.getvalue()


def summary(store: MetricsStore, scenario_id: str, config_hash: str, extra=None) -> dict:
    totals = {"lines_ddr": 0, "lines_cxl": 0, "tor_inserts": 0, "tor_occupancy": 0, "cycles": 0}
    per_wl = {name: 0 for name in store.workload_names}
    for win in store.windows:
        totals["lines_ddr"] += win.tier_lines(0)
        totals["lines_cxl"] += win.tier_lines(1)
        totals["tor_inserts"] += win.inserts()
        totals["tor_occupancy"] += win.occupancy()
        totals["cycles"] += win.cycles
        for i, name in enumerate(store.workload_names):
            per_wl[name] += win.workload_lines(i)
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario_id,
        "config_hash": config_hash,
        "windows": len(store.windows),
        "totals": totals,
        "workload_lines": per_wl,
    }
    if extra:
        out.update(extra)
    return out


def summary_json(data: dict) -> str:
    return json.dumps(_round_floats(data), indent=2, sort_keys=True) + "\n"


def _round_floats(obj):
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def export(store: MetricsStore, out_dir, scenario_id: str, config_hash: str, extra=None) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(store))
        (out / "summary.json").write_text(
            summary_json(summary(store, scenario_id, config_hash, extra)))
    except OSError as exc:
        raise OSError(f"cannot write outputs under {out}: {exc}") from exc


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["window"]), int(r["t_end"]), r["series"], float(r["value"])) for r in rows]


EVENT_COLUMNS = ("id", "core", "kind", "tier", "cha", "t_issued", "t_irq", "t_tor",
                 "t_dispatch", "t_complete")


def events_csv(requests) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for r in requests:
        w.writerow((r.id, r.core, r.kind.value, r.tier.value, r.cha, r.t_issued, r.t_irq,
                    r.t_tor, "" if r.t_dispatch is None else r.t_dispatch, r.t_complete))
    return buf.getvalue()
