"""Offline probes: loaded DDR residence and unloaded per-tier latency."""

from __future__ import annotations

from functools import lru_cache

from .platform import PlatformSpec, Tier
from .workloads import WorkloadSpec

PROBE_THREADS = 16
PROBE_MLP = 20
PROBE_CYCLES = 60000
PROBE_WARMUP = 20000
READ_THRESHOLD_FACTOR = 2.0

REPORT_FIELDS = ("t_ddr_ref", "ddr_unloaded_latency", "cxl_unloaded_latency",
                 "suggested_read_threshold", "ddr_peak_bandwidth", "cxl_peak_bandwidth",
                 "ddr_loaded_bandwidth")


def _probe(platform, spec, cycles, window=None):
    from .scenario import Scenario, build
    sc = Scenario(name="probe", platform=platform, workloads=[spec],
                  duration_cycles=cycles, seed=1, window_cycles=window or cycles)
    return build(sc).run().finish()


def unloaded_latency(platform: PlatformSpec, tier: Tier, hops: int = 64) -> float:
    """Mean pointer-chase hop latency with a single thread."""
    spec = WorkloadSpec(name=f"chase_{tier.value}", pattern="pointer_chase",
                        placement=f"{tier.value.lower()}_only", wss_bytes=1 << 16,
                        mlp_per_thread=1, seed=3)
    cycles = hops * (platform.devices(tier)[0].unloaded_latency() + 4)
    run = _probe(platform, spec, cycles)
    lat = run.sim.workloads[0].latencies
    return sum(lat) / len(lat)


def loaded_ddr_residence(platform: PlatformSpec, threads=PROBE_THREADS, mlp=PROBE_MLP):
    """DDR-only bandwidth probe; returns (mean ToR residence, bytes/s)."""
    spec = WorkloadSpec(name="ddr_bw", placement="ddr_only", threads=threads,
                        mlp_per_thread=mlp, wss_bytes=1 << 24, seed=5)
    run = _probe(platform, spec, PROBE_CYCLES, PROBE_WARMUP)
    steady = run.metrics.windows[1:]  # first window is warm-up
    occ = sum(w.cat_occupancy(0) for w in steady)
    ins = sum(w.cat_inserts(0) for w in steady)
    lines = sum(w.tier_lines(0) for w in steady)
    span = sum(w.cycles for w in steady)
    return occ / ins, lines * platform.cacheline_bytes * platform.clock_hz / span


@lru_cache(maxsize=16)
def calibrate_platform(platform: PlatformSpec, factor: float = READ_THRESHOLD_FACTOR) -> dict:
    t_ref, bw = loaded_ddr_residence(platform)
    ddr_lat = unloaded_latency(platform, Tier.DDR)
    cxl_lat = unloaded_latency(platform, Tier.CXL)
    return {
        "t_ddr_ref": t_ref,
        "ddr_unloaded_latency": ddr_lat,
        "cxl_unloaded_latency": cxl_lat,
        "suggested_read_threshold": factor * cxl_lat,
        "ddr_peak_bandwidth": platform.peak_bandwidth(Tier.DDR),
        "cxl_peak_bandwidth": platform.peak_bandwidth(Tier.CXL),
        "ddr_loaded_bandwidth": bw,
    }
