"""Probabilistic-residency LLC with CAT-style partitions.

A workload hits with probability resident_bytes / wss. Misses fill one line
on completion, so a tier with slow misses also fills slowly. Partitions cap
each workload's residency; with no partition a workload may use the whole
cache and fills evict a victim chosen in proportion to residency.
"""

from __future__ import annotations

import random


class LlcModel:
    def __init__(self, capacity_bytes: int, line_bytes: int = 64, hit_service: int = 40,
                 seed: int = 0):
        if capacity_bytes <= 0:
            raise ValueError("LLC capacity must be > 0")
        self.capacity_lines = capacity_bytes // line_bytes
        self.line_bytes = line_bytes
        self.hit_service = hit_service
        self.partitions: dict[str, float] = {}
        self.occupancy: dict[str, int] = {}
        self.wss_lines: dict[str, int] = {}
        self._rng = random.Random(seed)
        self.hits: dict[str, int] = {}
        self.lookups: dict[str, int] = {}

    @property
    def capacity_bytes(self) -> int:
        return self.capacity_lines * self.line_bytes

    def register(self, workload: str, wss_bytes: int) -> None:
        self.wss_lines[workload] = max(1, wss_bytes // self.line_bytes)
        self.occupancy.setdefault(workload, 0)
        self.hits.setdefault(workload, 0)
        self.lookups.setdefault(workload, 0)

    def set_partition(self, workload: str, fraction: float | None) -> None:
        """Bound a workload to ``fraction`` of capacity; None removes the bound."""
        if fraction is None:
            self.partitions.pop(workload, None)
            return
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"partition fraction must be in [0, 1], got {fraction}")
        others = sum(f for w, f in self.partitions.items() if w != workload)
        if others + fraction > 1.0 + 1e-12:
            raise ValueError("partition fractions exceed 1")
        self.partitions[workload] = fraction

    def cap_lines(self, workload: str) -> int:
        frac = self.partitions.get(workload)
        if frac is None:
            return self.capacity_lines
        return int(frac * self.capacity_lines)

    def hit_probability(self, workload: str) -> float:
        resident = min(self.occupancy[workload], self.cap_lines(workload))
        return min(1.0, resident / self.wss_lines[workload])

    def lookup(self, workload: str) -> bool:
        self.lookups[workload] += 1
        hit = self._rng.random() < self.hit_probability(workload)
        if hit:
            self.hits[workload] += 1
        return hit

    def fill(self, workload: str) -> None:
        occ = self.occupancy
        # lazy eviction of lines left over from a shrunk partition
        for w in sorted(occ):
            if occ[w] > self.cap_lines(w):
                occ[w] -= 1
                break
        limit = min(self.cap_lines(workload), self.wss_lines[workload])
        if occ[workload] >= limit:
            return
        if sum(occ.values()) >= self.capacity_lines:
            self._evict_victim(exclude=workload)
            if sum(occ.values()) >= self.capacity_lines:
                return
        occ[workload] += 1

    def _evict_victim(self, exclude: str) -> None:
        names = [w for w in sorted(self.occupancy) if w != exclude and self.occupancy[w] > 0]
        if not names:
            return
        total = sum(self.occupancy[w] for w in names)
        pick = self._rng.randrange(total)
        for w in names:
            pick -= self.occupancy[w]
            if pick < 0:
                self.occupancy[w] -= 1
                return

    def hit_rate(self, workload: str) -> float:
        n = self.lookups.get(workload, 0)
        return self.hits.get(workload, 0) / n if n else 0.0
