"""Static hardware model: sockets, CHAs, queues and the two memory tiers.

Everything here is immutable once built. Routing helpers map a physical
address to its tier, home socket, CHA and device.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum

PAGE_BYTES = 4096


class ConfigError(ValueError):
    """Raised for invalid platform, workload or scenario configuration."""


class Tier(str, Enum):
    DDR = "DDR"
    CXL = "CXL"


class Kind(str, Enum):
    LOAD = "load"
    STORE = "store"
    NT_STORE = "nt_store"
    STORE_READ = "store_read"
    STORE_WRITE = "store_write"
    COHERENCE = "coherence"


@dataclass(frozen=True)
class DeviceSpec:
    parallelism: int = 16
    read_service: int = 100
    write_service: int = 100
    protocol_overhead: int = 0
    device_queue_capacity: int = 256

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.read_service <= 0 or self.write_service <= 0:
            raise ConfigError("service times must be > 0")
        if self.protocol_overhead < 0:
            raise ConfigError("protocol_overhead must be >= 0")
        if self.device_queue_capacity < 1:
            raise ConfigError("device_queue_capacity must be >= 1")

    def unloaded_latency(self, write: bool = False) -> int:
        return self.protocol_overhead + (self.write_service if write else self.read_service)


@dataclass(frozen=True)
class PlatformSpec:
    sockets: int = 2
    cores_per_socket: int = 40
    chas_per_socket: int = 4
    irq_capacity_per_cha: int = 24
    tor_capacity_per_cha: int = 72
    admit_width: int = 4
    cacheline_bytes: int = 64
    clock_hz: float = 1e9
    llc_capacity_bytes: int = 4 << 20
    cross_socket_latency: int = 80
    ddr_devices: tuple[DeviceSpec, ...] = field(default_factory=tuple)
    cxl_devices: tuple[DeviceSpec, ...] = field(default_factory=tuple)
    # half-open [lo, hi) byte intervals, split evenly across sockets
    ddr_phys_range: tuple[int, int] = (0, 1 << 36)
    cxl_phys_range: tuple[int, int] = (1 << 40, (1 << 40) + (1 << 38))

    def __post_init__(self):
        for name in ("sockets", "cores_per_socket", "chas_per_socket", "irq_capacity_per_cha",
                     "tor_capacity_per_cha", "admit_width", "cacheline_bytes", "llc_capacity_bytes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.clock_hz <= 0:
            raise ConfigError("clock_hz must be > 0")
        if self.cacheline_bytes & (self.cacheline_bytes - 1):
            raise ConfigError(f"cacheline_bytes must be a power of two, got {self.cacheline_bytes}")
        if self.cross_socket_latency < 0:
            raise ConfigError("cross_socket_latency must be >= 0")
        if not self.ddr_devices or not self.cxl_devices:
            raise ConfigError("platform needs at least one DDR and one CXL device")
        for lo, hi in (self.ddr_phys_range, self.cxl_phys_range):
            if not 0 <= lo < hi:
                raise ConfigError(f"bad address range [{lo}, {hi})")
        d, c = self.ddr_phys_range, self.cxl_phys_range
        if d[0] < c[1] and c[0] < d[1]:
            raise ConfigError("ddr_phys_range and cxl_phys_range overlap")

    @property
    def total_chas(self) -> int:
        return self.sockets * self.chas_per_socket

    @property
    def total_cores(self) -> int:
        return self.sockets * self.cores_per_socket

    def devices(self, tier: Tier) -> tuple[DeviceSpec, ...]:
        return self.ddr_devices if tier is Tier.DDR else self.cxl_devices

    def phys_range(self, tier: Tier) -> tuple[int, int]:
        return self.ddr_phys_range if tier is Tier.DDR else self.cxl_phys_range

    def socket_span(self, tier: Tier) -> int:
        lo, hi = self.phys_range(tier)
        return (hi - lo) // self.sockets

    def peak_bandwidth(self, tier: Tier, write: bool = False, n_devices: int | None = None) -> float:
        """Analytic per-socket device peak in bytes/second."""
        devs = self.devices(tier)
        if n_devices is not None:
            devs = devs[:n_devices]
        total = 0.0
        for d in devs:
            service = d.write_service if write else d.read_service
            total += d.parallelism * self.cacheline_bytes / service
        return total * self.clock_hz

    def with_devices(self, tier: Tier, n: int) -> "PlatformSpec":
        devs = self.devices(tier)[:n]
        if len(devs) < n:
            raise ConfigError(f"platform has only {len(devs)} {tier.value} devices")
        return replace(self, **{"ddr_devices" if tier is Tier.DDR else "cxl_devices": devs})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ddr_phys_range"] = list(self.ddr_phys_range)
        out["cxl_phys_range"] = list(self.cxl_phys_range)
        out["ddr_devices"] = [asdict(d) for d in self.ddr_devices]
        out["cxl_devices"] = [asdict(d) for d in self.cxl_devices]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PlatformSpec":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"platform: unknown field(s) {sorted(unknown)}")
        try:
            for key in ("ddr_devices", "cxl_devices"):
                if key in raw:
                    raw[key] = tuple(_device_from(d, f"platform.{key}[{i}]")
                                     for i, d in enumerate(raw[key]))
            for key in ("ddr_phys_range", "cxl_phys_range"):
                if key in raw:
                    lo, hi = raw[key]
                    raw[key] = (int(lo), int(hi))
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"platform: {exc}") from None


def _device_from(raw, where: str) -> DeviceSpec:
    if isinstance(raw, DeviceSpec):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(raw) - set(DeviceSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    return DeviceSpec(**raw)


def address_to_tier(spec: PlatformSpec, addr: int) -> Tier:
    lo, hi = spec.ddr_phys_range
    if lo <= addr < hi:
        return Tier.DDR
    lo, hi = spec.cxl_phys_range
    if lo <= addr < hi:
        return Tier.CXL
    raise ConfigError(f"address {addr:#x} is outside every configured range")


def home_socket(spec: PlatformSpec, addr: int, tier: Tier | None = None) -> int:
    tier = tier or address_to_tier(spec, addr)
    lo, _ = spec.phys_range(tier)
    return min((addr - lo) // spec.socket_span(tier), spec.sockets - 1)


def hash_to_cha(spec: PlatformSpec, addr: int) -> int:
    """CHA index within the home socket: cacheline index modulo CHA count."""
    return (addr // spec.cacheline_bytes) % spec.chas_per_socket


def global_cha(spec: PlatformSpec, addr: int, tier: Tier | None = None) -> int:
    return home_socket(spec, addr, tier) * spec.chas_per_socket + hash_to_cha(spec, addr)


def device_index(spec: PlatformSpec, addr: int, tier: Tier) -> int:
    # DDR is hardware-interleaved per cacheline, CXL software-interleaved per page
    n = len(spec.devices(tier))
    if tier is Tier.DDR:
        return (addr // spec.cacheline_bytes) % n
    return (addr // PAGE_BYTES) % n


def decompose_store(kind: Kind) -> tuple[Kind, ...]:
    """Device transactions generated by one application-level access."""
    if kind is Kind.STORE:
        return (Kind.STORE_READ, Kind.STORE_WRITE)
    if kind is Kind.NT_STORE:
        return (Kind.STORE_WRITE,)
    if kind is Kind.LOAD:
        return (Kind.LOAD,)
    raise ValueError(f"{kind} is not an application-level memory access")


DDR_DEFAULT = DeviceSpec(parallelism=16, read_service=100, write_service=100,
                         protocol_overhead=0, device_queue_capacity=256)
CXL_DEFAULT = DeviceSpec(parallelism=16, read_service=100, write_service=200,
                         protocol_overhead=120, device_queue_capacity=256)


def platform_a(**overrides) -> PlatformSpec:
    """Two sockets, each with 8 DDR devices and 2 CXL devices."""
    base = PlatformSpec(
        sockets=2,
        ddr_devices=(DDR_DEFAULT,) * 8,
        cxl_devices=(CXL_DEFAULT,) * 2,
    )
    return replace(base, **overrides)


def platform_b(**overrides) -> PlatformSpec:
    """Single socket with 12 DDR devices and 4 CXL devices."""
    base = PlatformSpec(
        sockets=1,
        cores_per_socket=84,
        chas_per_socket=6,
        ddr_devices=(DDR_DEFAULT,) * 12,
        cxl_devices=(CXL_DEFAULT,) * 4,
    )
    return replace(base, **overrides)


PRESETS = {"platform-a": platform_a, "platform-b": platform_b}


def load_platform(raw) -> PlatformSpec:
    """Accepts a preset name, a dict (optionally with a ``preset`` base) or a spec."""
    if isinstance(raw, PlatformSpec):
        return raw
    if isinstance(raw, str):
        if raw not in PRESETS:
            raise ConfigError(f"unknown platform preset {raw!r}; valid: {sorted(PRESETS)}")
        return PRESETS[raw]()
    if not isinstance(raw, dict):
        raise ConfigError("platform must be a preset name or an object")
    raw = dict(raw)
    preset = raw.pop("preset", None)
    if preset is None:
        return PlatformSpec.from_dict(raw)
    base = load_platform(preset).to_dict()
    base.update(raw)
    return PlatformSpec.from_dict(base)
