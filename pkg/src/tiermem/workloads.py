"""Synthetic request generators: bandwidth streams, pointer chasing and a
two-core shared-cacheline atomic loop.

Each workload owns one ``Thread`` per bound core. The engine asks a thread
for its next access, tells it when that access was accepted and when it
completed; threads never touch engine state directly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .platform import PAGE_BYTES, ConfigError, Kind, PlatformSpec, Tier

PATTERNS = ("bw_stream", "pointer_chase", "shared_atomic")
KINDS = ("load", "store", "nt_store")


@dataclass(frozen=True)
class Placement:
    """Page placement policy. ``ddr``/``cxl`` are the interleave weights."""
    ddr: int
    cxl: int

    @classmethod
    def parse(cls, text: str) -> "Placement":
        if text == "ddr_only":
            return cls(1, 0)
        if text == "cxl_only":
            return cls(0, 1)
        if text.startswith("interleave:"):
            try:
                d, c = (int(x) for x in text.split(":")[1:])
            except ValueError:
                raise ConfigError(f"bad interleave placement {text!r}, expected interleave:D:C") from None
            if d < 0 or c < 0 or d + c == 0:
                raise ConfigError(f"bad interleave weights in {text!r}")
            return cls(d, c)
        raise ConfigError(f"unknown placement {text!r}")

    def __str__(self) -> str:
        if self.cxl == 0:
            return "ddr_only"
        if self.ddr == 0:
            return "cxl_only"
        return f"interleave:{self.ddr}:{self.cxl}"

    def tier_of_page(self, page: int) -> Tier:
        return Tier.DDR if page % (self.ddr + self.cxl) < self.ddr else Tier.CXL


@dataclass
class WorkloadSpec:
    name: str
    pattern: str = "bw_stream"
    kind: str = "load"
    wss_bytes: int = 1 << 20
    placement: str = "ddr_only"
    threads: int = 1
    mlp_per_thread: int = 20
    issue_interval: int = 1  # min cycles between a thread's issues (compute between accesses)
    phases: list = field(default_factory=list)
    seed: int = 0
    socket: int = 0
    memory_socket: Optional[int] = None
    first_core: Optional[int] = None

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"workload {self.name!r}: unknown pattern {self.pattern!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"workload {self.name!r}: unknown kind {self.kind!r}")
        if self.threads < 1:
            raise ConfigError(f"workload {self.name!r}: threads must be >= 1")
        if self.mlp_per_thread < 1:
            raise ConfigError(f"workload {self.name!r}: mlp_per_thread must be >= 1")
        if self.issue_interval < 1:
            raise ConfigError(f"workload {self.name!r}: issue_interval must be >= 1")
        if self.pattern == "shared_atomic" and self.threads != 2:
            raise ConfigError(f"workload {self.name!r}: shared_atomic needs exactly 2 threads")
        self.phases = [(str(p), int(d)) for p, d in self.phases]
        for p in [self.placement] + [p for p, _ in self.phases]:
            try:
                Placement.parse(p)
            except ConfigError as exc:
                raise ConfigError(f"workload {self.name!r}: {exc}") from None
        for p, d in self.phases:
            if d <= 0:
                raise ConfigError(f"workload {self.name!r}: phase durations must be > 0")

    def placement_at(self, cycle: int) -> Placement:
        if not self.phases:
            return Placement.parse(self.placement)
        period = sum(d for _, d in self.phases)
        t = cycle % period
        for p, d in self.phases:
            if t < d:
                return Placement.parse(p)
            t -= d
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["phases"] = [list(p) for p in self.phases]
        return out


@dataclass
class ChaseChain:
    """Single-cycle permutation: ``next_line[i]`` is the line after line ``i``."""
    next_line: list
    position: int = 0

    def __len__(self):
        return len(self.next_line)

    def advance(self) -> int:
        self.position = self.next_line[self.position]
        return self.position


def build_chase(n_lines: int, seed: int) -> ChaseChain:
    """Sattolo shuffle: a uniformly random cyclic permutation of n_lines."""
    if n_lines < 2:
        raise ConfigError("pointer-chase region must hold at least 2 cachelines")
    rng = random.Random(seed)
    order = list(range(n_lines))
    for i in range(n_lines - 1, 0, -1):
        j = rng.randrange(i)
        order[i], order[j] = order[j], order[i]
    nxt = [0] * n_lines
    for a, b in zip(order, order[1:] + order[:1]):
        nxt[a] = b
    return ChaseChain(nxt, 0)


def tail_histogram(latencies, thresholds) -> list[float]:
    """Fraction of samples strictly below each threshold."""
    lat = list(latencies)
    if not lat:
        raise ValueError("tail_histogram needs at least one latency sample")
    n = len(lat)
    return [sum(1 for x in lat if x < th) / n for th in thresholds]


class Thread:
    """One workload thread bound to one core."""

    def __init__(self, workload: "Workload", index: int, core_id: int):
        self.workload = workload
        self.index = index
        self.core_id = core_id
        self.offset = 0

    def next_access(self, cycle: int):
        raise NotImplementedError

    def on_issue(self, req) -> None:
        pass

    def on_complete(self, req, cycle: int) -> None:
        pass


class StreamThread(Thread):
    def __init__(self, workload, index, core_id):
        super().__init__(workload, index, core_id)
        # seeded start line so threads do not walk device pages in lockstep
        n_lines = max(1, workload.spec.wss_bytes // workload.line)
        rng = random.Random(workload.spec.seed * 1_000_003 + index)
        self.offset = rng.randrange(n_lines) * workload.line if workload.spec.seed else 0

    def next_access(self, cycle):
        wl = self.workload
        addr = wl.phys_addr(self.index, self.offset, cycle)
        return addr, wl.kind

    def on_issue(self, req):
        self.offset += self.workload.line
        if self.offset >= self.workload.spec.wss_bytes:
            self.offset = 0


class ChaseThread(Thread):
    def __init__(self, workload, index, core_id):
        super().__init__(workload, index, core_id)
        n = workload.spec.wss_bytes // workload.line
        self.chain = build_chase(n, workload.spec.seed * 7919 + index)
        self.waiting = False

    def next_access(self, cycle):
        if self.waiting:
            return None
        wl = self.workload
        return wl.phys_addr(self.index, self.chain.position * wl.line, cycle), wl.kind

    def on_issue(self, req):
        self.waiting = True

    def on_complete(self, req, cycle):
        self.waiting = False
        self.chain.advance()
        self.workload.latencies.append(req.t_complete - req.t_created)


class AtomicThread(Thread):
    def next_access(self, cycle):
        wl = self.workload
        if wl.turn != self.index or wl.in_flight:
            return None
        return wl.shared_addr, Kind.COHERENCE

    def on_issue(self, req):
        self.workload.in_flight = True

    def on_complete(self, req, cycle):
        wl = self.workload
        wl.in_flight = False
        wl.turn = 1 - wl.turn
        wl.latencies.append(req.t_complete - req.t_created)


_THREAD_CLASSES = {"bw_stream": StreamThread, "pointer_chase": ChaseThread,
                   "shared_atomic": AtomicThread}


class Workload:
    """Runtime state of a WorkloadSpec bound to cores and a memory region."""

    def __init__(self, spec: WorkloadSpec, platform: PlatformSpec, index: int,
                 cores: list[int], region_base: int):
        self.spec = spec
        self.platform = platform
        self.index = index
        self.name = spec.name
        self.line = platform.cacheline_bytes
        self.kind = Kind(spec.kind)
        self.region_base = region_base
        self.memory_socket = spec.socket if spec.memory_socket is None else spec.memory_socket
        if not 0 <= self.memory_socket < platform.sockets:
            raise ConfigError(f"workload {spec.name!r}: memory_socket out of range")
        self.latencies: list[int] = []
        self.turn = 0
        self.in_flight = False
        self.shared_addr = None
        if spec.pattern == "shared_atomic":
            self.shared_addr = self._tier_base(Tier.DDR) + region_base
        self._static = None if spec.phases else Placement.parse(spec.placement)
        self._check_fits()
        cls = _THREAD_CLASSES[spec.pattern]
        self.threads = [cls(self, i, c) for i, c in enumerate(cores)]

    def _tier_base(self, tier: Tier) -> int:
        lo, _ = self.platform.phys_range(tier)
        return lo + self.memory_socket * self.platform.socket_span(tier)

    def _check_fits(self):
        spec = self.spec
        end = self.region_base + spec.threads * spec.wss_bytes
        placements = [p for p, _ in spec.phases] or [spec.placement]
        for text in placements:
            pl = Placement.parse(text)
            for tier, weight in ((Tier.DDR, pl.ddr), (Tier.CXL, pl.cxl)):
                if weight and end > self.platform.socket_span(tier):
                    raise ConfigError(
                        f"workload {spec.name!r}: placement {text} does not fit the "
                        f"{tier.value} range of socket {self.memory_socket}")

    def placement_at(self, cycle: int) -> Placement:
        return self._static or self.spec.placement_at(cycle)

    def phys_addr(self, thread_index: int, offset: int, cycle: int) -> int:
        virt = self.region_base + thread_index * self.spec.wss_bytes + offset
        pl = self.placement_at(cycle)
        if pl.cxl == 0:
            tier = Tier.DDR
        elif pl.ddr == 0:
            tier = Tier.CXL
        else:
            tier = pl.tier_of_page(virt // PAGE_BYTES)
        return self._tier_base(tier) + virt


def region_bytes(spec: WorkloadSpec, line: int) -> int:
    if spec.pattern == "shared_atomic":
        return line
    return spec.threads * spec.wss_bytes


def pages_by_tier(placement: Placement, n_pages: int) -> dict:
    """Census of tiers over the first n_pages pages of a region."""
    counts = {Tier.DDR: 0, Tier.CXL: 0}
    for p in range(n_pages):
        counts[placement.tier_of_page(p)] += 1
    return counts
