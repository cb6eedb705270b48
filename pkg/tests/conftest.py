import pytest

from tiermem.platform import DeviceSpec, PlatformSpec
from tiermem.scenario import Scenario, build
from tiermem.workloads import WorkloadSpec


def tiny_platform(ddr=None, cxl=None, **kw):
    """One socket, one CHA, one device per tier: easy to hand-trace."""
    base = dict(sockets=1, cores_per_socket=16, chas_per_socket=1,
                ddr_devices=(ddr or DeviceSpec(parallelism=1, read_service=100, write_service=100),),
                cxl_devices=(cxl or DeviceSpec(parallelism=1, read_service=100, write_service=200,
                                               protocol_overhead=120),))
    base.update(kw)
    return PlatformSpec(**base)


def make_run(platform, *specs, duration=1000, seed=1, window=None, events=True, check=False,
             **scenario_kw):
    sc = Scenario(name="t", platform=platform, workloads=list(specs), duration_cycles=duration,
                  seed=seed, window_cycles=window or max(1, duration), **scenario_kw)
    return build(sc, record_events=events, check_invariants=check)


def stream(name="s", **kw):
    kw.setdefault("wss_bytes", 1 << 16)
    return WorkloadSpec(name=name, **kw)


@pytest.fixture
def tiny():
    return tiny_platform()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.format_results():
        terminalreporter.write_line(line)
