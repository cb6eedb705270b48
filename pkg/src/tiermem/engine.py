"""Cycle-stepped uncore model: core -> IRQ -> ToR -> device -> retire.

Each cycle runs five phases in a fixed order:

1. device completions (service slots free, queued transactions start)
2. ToR retirements (entry freed, core outstanding decremented)
3. IRQ -> ToR admissions, strictly FIFO per CHA, at most ``admit_width``
4. core issues into the IRQs
5. occupancy accounting

A request accepted in phase 4 of cycle ``c`` reaches its IRQ at the cycle
boundary, so its ``t_issued``/``t_irq`` stamp is ``c + 1``. An entry admitted
at ``t_tor`` and retired at ``t_complete`` is counted in exactly
``t_complete - t_tor`` occupancy samples.

Core arbitration is oldest-waiting-first with lowest core id breaking ties.
Occupancy integrals are kept lazily (updated on change) which is exactly
equivalent to summing the entry count every cycle.
"""

from __future__ import annotations

import random
from collections import defaultdict, deque

from .platform import (ConfigError, Kind, PlatformSpec, Tier, address_to_tier, device_index,
                       global_cha)

DDR, CXL, OTHER = 0, 1, 2
CATEGORY_NAMES = ("ddr", "cxl", "other")

_SLOT_END, _TXN_DONE, _ENTRY_DONE, _ARRIVE = 0, 1, 2, 3

_STORE_TXNS = {
    Kind.LOAD: (False,),
    Kind.STORE: (False, True),
    Kind.NT_STORE: (True,),
}


class Request:
    __slots__ = ("id", "core", "kind", "addr", "tier", "cha", "workload", "thread",
                 "t_created", "t_issued", "t_irq", "t_tor", "t_dispatch", "t_complete",
                 "pending", "category", "hit", "device")

    def __init__(self, rid, core, kind, addr, tier, cha, thread, t_created, t_issued):
        self.id = rid
        self.core = core
        self.kind = kind
        self.addr = addr
        self.tier = tier
        self.cha = cha
        self.thread = thread
        self.workload = thread.workload.index
        self.t_created = t_created
        self.t_issued = t_issued
        self.t_irq = None
        self.t_tor = None
        self.t_dispatch = None
        self.t_complete = None
        self.pending = 0
        self.category = OTHER
        self.hit = False
        self.device = None


class Cha:
    __slots__ = ("id", "irq", "irq_cap", "irq_count", "tor_cap", "occ", "occ_int",
                 "cat_occ", "cat_int", "last_t", "cum_inserts", "cat_inserts")

    def __init__(self, cid, irq_cap, tor_cap):
        self.id = cid
        self.irq = deque()
        self.irq_cap = irq_cap
        self.irq_count = 0  # fifo length plus remote requests in transit
        self.tor_cap = tor_cap
        self.occ = 0
        self.occ_int = 0
        self.cat_occ = [0, 0, 0]
        self.cat_int = [0, 0, 0]
        self.last_t = 0
        self.cum_inserts = 0
        self.cat_inserts = [0, 0, 0]

    def _flush(self, t):
        dt = t - self.last_t
        if dt:
            self.occ_int += self.occ * dt
            ci, co = self.cat_int, self.cat_occ
            ci[0] += co[0] * dt
            ci[1] += co[1] * dt
            ci[2] += co[2] * dt
            self.last_t = t

    def integrals_through(self, t):
        """(total, per-category) occupancy integrals including cycle t."""
        dt = t + 1 - self.last_t
        co = self.cat_occ
        return (self.occ_int + self.occ * dt,
                [self.cat_int[i] + co[i] * dt for i in range(3)])


class Device:
    __slots__ = ("tier", "socket", "index", "parallelism", "read_service", "write_service",
                 "overhead", "queue_cap", "in_service", "queue", "pending", "served")

    def __init__(self, tier, socket, index, spec):
        self.tier = tier
        self.socket = socket
        self.index = index
        self.parallelism = spec.parallelism
        self.read_service = spec.read_service
        self.write_service = spec.write_service
        self.overhead = spec.protocol_overhead
        self.queue_cap = spec.device_queue_capacity
        self.in_service = 0
        self.queue = deque()
        self.pending = deque()  # ToR entries waiting for device-queue space
        self.served = 0


class Group:
    """Restricted core set shared by throttled threads."""
    __slots__ = ("cores", "mlp_total", "width", "outstanding", "rate_cap", "next_allowed",
                 "issued_cycle", "issued_now", "members", "share")

    def __init__(self, n_cores, mlp_per_core, rate_cap=None):
        self.cores = n_cores
        self.mlp_total = n_cores * mlp_per_core
        self.width = n_cores
        self.outstanding = 0
        self.rate_cap = rate_cap
        self.next_allowed = 0.0
        self.issued_cycle = -1
        self.issued_now = 0
        self.members = []
        self.share = self.mlp_total

    def rebalance(self):
        # k cores time-shared by n threads: each thread gets ~k/n of a core's MLP
        n = len(self.members)
        self.share = max(1, -(-self.mlp_total // n)) if n else self.mlp_total


class Core:
    __slots__ = ("id", "thread", "mlp_limit", "outstanding", "rate_cap", "next_allowed",
                 "in_ready", "ready_since", "pending", "issued", "stalled_cycles",
                 "completed", "group", "socket", "parked")

    def __init__(self, cid, thread, mlp_limit, socket):
        self.id = cid
        self.thread = thread
        self.mlp_limit = mlp_limit
        self.outstanding = 0
        self.rate_cap = None
        self.next_allowed = 0.0
        self.in_ready = False
        self.ready_since = 0
        self.pending = None
        self.issued = 0
        self.stalled_cycles = 0
        self.completed = 0
        self.group = None
        self.socket = socket
        self.parked = False  # waiting on a full restricted group; keeps its age

    @property
    def stalled(self) -> bool:
        return self.in_ready and self.pending is not None


class Simulation:
    """Single-owner simulation state. Build, then call ``step``."""

    def __init__(self, platform: PlatformSpec, workloads, *, llc=None, coherence_service=60,
                 jitter=False, seed=0, record_events=False, check_invariants=False):
        self.platform = platform
        self.workloads = list(workloads)
        self.llc = llc
        self.coherence_service = coherence_service
        self.jitter = jitter
        self.rng = random.Random(seed)
        self.record_events = record_events
        self.check_invariants = check_invariants
        self.cycle = 0
        self.next_id = 0
        self.chas = [Cha(i, platform.irq_capacity_per_cha, platform.tor_capacity_per_cha)
                     for i in range(platform.total_chas)]
        self.devices = {}
        for s in range(platform.sockets):
            for tier in (Tier.DDR, Tier.CXL):
                self.devices[(s, tier)] = [Device(tier, s, i, d)
                                           for i, d in enumerate(platform.devices(tier))]
        self.cores = {}
        for wl in self.workloads:
            for th in wl.threads:
                if th.core_id in self.cores:
                    raise ConfigError(f"core {th.core_id} bound to two workloads")
                if not 0 <= th.core_id < platform.total_cores:
                    raise ConfigError(f"workload {wl.name!r}: core {th.core_id} does not exist")
                self.cores[th.core_id] = Core(th.core_id, th, wl.spec.mlp_per_thread,
                                              th.core_id // platform.cores_per_socket)
                if wl.spec.issue_interval > 1:
                    self.cores[th.core_id].rate_cap = 1.0 / wl.spec.issue_interval
        self._core_order = sorted(self.cores.values(), key=lambda c: c.id)
        self._calendar = defaultdict(list)
        self._ready = []
        self._fresh = []
        for core in self._core_order:
            core.in_ready = True
            self._fresh.append(core)
        self._route_cache = {}
        self.issued = 0
        self.completed = 0
        self.tier_lines = [0, 0]
        self.tier_inflight = [0, 0]
        self.workload_lines = [0] * len(self.workloads)
        self.events = [] if record_events else None
        self.window_hooks = []
        self.retire_hooks = []

    # ----------------------------------------------------------------- routing
    def route(self, addr):
        key = addr // self.platform.cacheline_bytes
        hit = self._route_cache.get(key)
        if hit is None:
            p = self.platform
            tier = address_to_tier(p, addr)
            cha = global_cha(p, addr, tier)
            socket = cha // p.chas_per_socket
            dev = self.devices[(socket, tier)][device_index(p, addr, tier)]
            hit = (tier, cha, dev)
            if len(self._route_cache) < 1 << 20:
                self._route_cache[key] = hit
        return hit

    # --------------------------------------------------------------- control
    def restrict(self, core_ids, n_cores, mlp_per_core=None, rate_cap=None):
        """Confine the given cores' threads to a shared set of ``n_cores``."""
        cores = [self.cores[c] for c in sorted(core_ids)]
        if not cores:
            return None
        mlp = mlp_per_core or max(c.mlp_limit for c in cores)
        group = Group(n_cores, mlp, rate_cap)
        for c in cores:
            if c.group is not None:
                c.group.outstanding -= c.outstanding
                c.group.members.remove(c)
                c.group.rebalance()
            c.group = group
            group.outstanding += c.outstanding
            group.members.append(c)
            self._wake(c)
        group.rebalance()
        return group

    def release(self, core_ids=None):
        targets = self.cores.values() if core_ids is None else [self.cores[c] for c in core_ids]
        for c in targets:
            if c.group is not None:
                c.group.outstanding -= c.outstanding
                c.group.members.remove(c)
                c.group.rebalance()
                c.group = None
            self._wake(c)

    def set_rate_cap(self, core_id, cap):
        core = self.cores[core_id]
        core.rate_cap = cap
        core.next_allowed = float(self.cycle)
        self._wake(core)

    def wake_all(self):
        for c in self._core_order:
            self._wake(c)

    def _wake(self, core):
        if not core.in_ready:
            core.in_ready = True
            if core.parked:
                core.parked = False
            else:
                core.ready_since = self.cycle
            self._fresh.append(core)

    # ------------------------------------------------------------------ core
    def step(self, n_cycles: int) -> None:
        for _ in range(n_cycles):
            self._cycle()

    def run_until(self, cycle: int) -> None:
        while self.cycle < cycle:
            self._cycle()

    def _cycle(self):
        t = self.cycle
        cal = self._calendar
        retire = []
        events = cal.pop(t, None)
        if events:
            self._phase_devices(t, events, retire)
        if retire:
            self._phase_retire(t, retire)
        self._phase_admit(t)
        self._phase_issue(t)
        if self.check_invariants:
            self.assert_invariants()
        self.cycle = t + 1
        if self.window_hooks:
            for hook in self.window_hooks:
                hook(self, t)

    def _service(self, mean):
        if not self.jitter:
            return mean
        return max(1, round(self.rng.expovariate(1.0 / mean)))

    def _start(self, dev, req, write, t):
        dev.in_service += 1
        service = self._service(dev.write_service if write else dev.read_service)
        self._calendar[t + service].append((_SLOT_END, dev, req, write))

    def _enqueue(self, dev, req, write, t):
        """Hand a transaction to a device; False if its queue is full."""
        if dev.in_service < dev.parallelism:
            self._start(dev, req, write, t)
        elif len(dev.queue) < dev.queue_cap:
            dev.queue.append((req, write))
        else:
            return False
        if req.t_dispatch is None:
            req.t_dispatch = t
        return True

    def _phase_devices(self, t, events, retire):
        cal = self._calendar
        for ev in events:
            kind = ev[0]
            if kind == _SLOT_END:
                _, dev, req, write = ev
                dev.in_service -= 1
                dev.served += 1
                if dev.overhead:
                    cal[t + dev.overhead].append((_TXN_DONE, req))
                else:
                    req.pending -= 1
                    if req.pending == 0:
                        retire.append(req)
                q = dev.queue
                while q and dev.in_service < dev.parallelism:
                    qreq, qwrite = q.popleft()
                    self._start(dev, qreq, qwrite, t)
                pend = dev.pending
                while pend and len(q) < dev.queue_cap:
                    preq, pwrite = pend.popleft()
                    self._enqueue(dev, preq, pwrite, t)
            elif kind == _TXN_DONE:
                req = ev[1]
                req.pending -= 1
                if req.pending == 0:
                    retire.append(req)
            elif kind == _ENTRY_DONE:
                retire.append(ev[1])
            else:  # remote request arriving at its home IRQ
                req = ev[1]
                self.chas[req.cha].irq.append(req)

    def _phase_retire(self, t, retire):
        chas = self.chas
        llc = self.llc
        for req in retire:
            req.t_complete = t
            cha = chas[req.cha]
            cha._flush(t)
            cha.occ -= 1
            cha.cat_occ[req.category] -= 1
            core = self.cores[req.core]
            core.outstanding -= 1
            core.completed += 1
            if core.group is not None:
                core.group.outstanding -= 1
                for other in core.group.members:
                    self._wake(other)
            self.completed += 1
            cat = req.category
            if cat != OTHER:
                self.tier_lines[cat] += 1
                self.tier_inflight[cat] -= 1
                if llc is not None and req.kind is not Kind.COHERENCE and \
                        self.workloads[req.workload].name in llc.wss_lines:
                    llc.fill(self.workloads[req.workload].name)
            if req.kind is not Kind.COHERENCE:
                self.workload_lines[req.workload] += 1
            th = req.thread
            th.on_complete(req, t)
            if th.workload.spec.pattern == "shared_atomic":
                for other in th.workload.threads:
                    self._wake(self.cores[other.core_id])
            else:
                self._wake(core)
            for hook in self.retire_hooks:
                hook(req)
            if self.events is not None:
                self.events.append(req)

    def _phase_admit(self, t):
        llc = self.llc
        cal = self._calendar
        width = self.platform.admit_width
        chas = self.chas
        k = t % len(chas)  # rotate so no CHA always loses same-cycle device ties
        for cha in chas[k:] + chas[:k] if k else chas:
            irq = cha.irq
            if not irq or cha.occ >= cha.tor_cap:
                continue
            cha._flush(t)
            n = 0
            while irq and cha.occ < cha.tor_cap and n < width:
                req = irq.popleft()
                cha.irq_count -= 1
                n += 1
                req.t_tor = t
                cha.occ += 1
                cha.cum_inserts += 1
                if req.kind is Kind.COHERENCE:
                    req.category = OTHER
                    cal[t + self.coherence_service].append((_ENTRY_DONE, req))
                elif llc is not None and self.workloads[req.workload].name in llc.wss_lines \
                        and llc.lookup(self.workloads[req.workload].name):
                    req.category = OTHER
                    req.hit = True
                    cal[t + llc.hit_service].append((_ENTRY_DONE, req))
                else:
                    req.category = DDR if req.tier is Tier.DDR else CXL
                    self.tier_inflight[req.category] += 1
                    dev = req.device
                    txns = _STORE_TXNS[req.kind]
                    req.pending = len(txns)
                    for write in txns:
                        if not self._enqueue(dev, req, write, t):
                            dev.pending.append((req, write))
                cha.cat_occ[req.category] += 1
                cha.cat_inserts[req.category] += 1

    def _phase_issue(self, t):
        fresh = self._fresh
        ready = self._ready
        if fresh:
            ready.extend(fresh)
            ready.sort(key=_age)
            self._fresh = fresh = []
        if not ready:
            return
        chas = self.chas
        for cha in chas:
            if cha.irq_count < cha.irq_cap:
                break
        else:
            return
        kept = []
        p = self.platform
        for core in ready:
            if core.outstanding >= core.mlp_limit:
                core.in_ready = False
                core.pending = None
                continue
            group = core.group
            if group is not None and (group.outstanding >= group.mlp_total
                                      or core.outstanding >= group.share):
                core.in_ready = False
                core.parked = True
                continue
            pend = core.pending
            if pend is None:
                acc = core.thread.next_access(t)
                if acc is None:
                    core.in_ready = False
                    continue
                addr, kind = acc
                tier, cha_id, dev = self.route(addr)
                pend = core.pending = (addr, kind, tier, cha_id, dev, core.ready_since)
            cha = chas[pend[3]]
            if cha.irq_count >= cha.irq_cap:
                kept.append(core)
                continue
            if core.rate_cap is not None and t < core.next_allowed - 1e-9:
                kept.append(core)
                continue
            if group is not None:
                if group.issued_cycle != t:
                    group.issued_cycle = t
                    group.issued_now = 0
                if group.issued_now >= group.width or (
                        group.rate_cap is not None and t < group.next_allowed - 1e-9):
                    kept.append(core)
                    continue
                group.issued_now += 1
                group.outstanding += 1
                if group.rate_cap is not None:
                    group.next_allowed = max(group.next_allowed, t) + 1.0 / group.rate_cap
            if core.rate_cap is not None:
                core.next_allowed = max(core.next_allowed, t) + 1.0 / core.rate_cap
            addr, kind, tier, cha_id, dev, since = pend
            req = Request(self.next_id, core.id, kind, addr, tier, cha_id, core.thread,
                          since + 1, t + 1)
            req.device = dev
            self.next_id += 1
            core.pending = None
            core.outstanding += 1
            core.issued += 1
            core.stalled_cycles += t - since
            self.issued += 1
            cha.irq_count += 1
            if core.socket != cha_id // p.chas_per_socket and p.cross_socket_latency:
                req.t_irq = t + 1 + p.cross_socket_latency
                self._calendar[req.t_irq].append((_ARRIVE, req))
            else:
                req.t_irq = t + 1
                cha.irq.append(req)
            core.thread.on_issue(req)
            core.ready_since = t + 1
            fresh.append(core)
        self._ready = kept

    # ------------------------------------------------------------ inspection
    def in_flight(self):
        """Census of requests by stage: irq, tor, device queue, in service."""
        irq = sum(c.irq_count for c in self.chas)
        tor = sum(c.occ for c in self.chas)
        dq = sum(len(d.queue) for ds in self.devices.values() for d in ds)
        svc = sum(d.in_service for ds in self.devices.values() for d in ds)
        return {"irq": irq, "tor": tor, "device_queue": dq, "in_service": svc}

    def tor_census(self):
        out = [0, 0, 0]
        for cha in self.chas:
            for i in range(3):
                out[i] += cha.cat_occ[i]
        return dict(zip(CATEGORY_NAMES, out))

    def assert_invariants(self):
        """Conservation, capacity and work-conservation checks for the current cycle."""
        irq = sum(c.irq_count for c in self.chas)
        tor = sum(c.occ for c in self.chas)
        assert self.issued == self.completed + irq + tor, "request conservation violated"
        for cha in self.chas:
            assert 0 <= cha.irq_count <= cha.irq_cap, "IRQ over capacity"
            assert 0 <= cha.occ <= cha.tor_cap, "ToR over capacity"
            assert sum(cha.cat_occ) == cha.occ, "ToR tier census mismatch"
        for devs in self.devices.values():
            for d in devs:
                assert d.in_service <= d.parallelism
                if d.in_service < d.parallelism:
                    assert not d.queue and not d.pending, "device idle with work pending"
                assert len(d.queue) <= d.queue_cap
        for core in self.cores.values():
            assert 0 <= core.outstanding <= core.mlp_limit, "MLP bound violated"


def _age(core):
    return (core.ready_since, core.id)
