"""Command-line runner: ``tiermem run|calibrate|list|sweep``."""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics
from .platform import ConfigError, load_platform
from .scenario import build, load_preset, preset_names, resolve, scenario_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("tiermem")


def _latency_summary(sim) -> dict:
    out = {}
    for wl in sim.workloads:
        if wl.latencies:
            p50, p99 = metrics.percentiles(wl.latencies, [50, 99])
            out[wl.name] = {"mean": sum(wl.latencies) / len(wl.latencies), "p50": p50,
                            "p99": p99, "count": len(wl.latencies)}
    return out


def execute(scenario, out_dir, *, event_log=False, controller=None) -> dict:
    """Run one scenario and write its outputs. Returns the summary dict."""
    run = build(scenario, record_events=event_log, controller_mode=controller)
    run.run().finish()
    extra = {"latency": _latency_summary(run.sim), "controller_mode": controller or
             scenario.controller_mode}
    out = Path(out_dir)
    if run.controller is not None:
        from .controller import decisions_csv
        st = run.controller.state
        extra["controller"] = {"t_ddr_ref": st.t_ddr_ref, "read_threshold": st.read_threshold,
                               "final_level": st.level,
                               "calibration_warnings": st.calibration_warnings}
    metrics.export(run.metrics, out, scenario.name, scenario.config_hash(), extra)
    if run.controller is not None:
        (out / "controller.csv").write_text(decisions_csv(run.controller.decisions))
    if event_log:
        (out / "events.csv").write_text(metrics.events_csv(run.sim.events))
    return metrics.summary(run.metrics, scenario.name, scenario.config_hash(), extra)


def cmd_run(args) -> int:
    scenario = resolve(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.duration is not None:
        scenario.duration_cycles = args.duration
    out = args.out or Path("out") / scenario.name
    summ = execute(scenario, out, event_log=args.event_log, controller=args.controller)
    t = summ["totals"]
    cycles = max(1, t["cycles"])
    line = scenario.platform.cacheline_bytes * scenario.platform.clock_hz / cycles
    print(f"{scenario.name}: {summ['windows']} windows, "
          f"DDR {t['lines_ddr'] * line / 1e9:.2f} GB/s, CXL {t['lines_cxl'] * line / 1e9:.2f} GB/s "
          f"-> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibrate import calibrate_platform
    ref = args.platform
    path = Path(ref)
    if path.is_file():
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        platform = load_platform(raw.get("platform", raw) if isinstance(raw, dict) else raw)
    else:
        platform = load_platform(ref)
    report = calibrate_platform(platform)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_list(args) -> int:
    for name in preset_names():
        print(f"{name:20s} {load_preset(name).description}")
    return EXIT_OK


def _set_path(obj, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        obj = obj[int(k)] if isinstance(obj, list) else obj[k]
    last = keys[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        obj[last] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def sweep_variants(base: dict, assignments) -> list:
    """Cartesian product of ``key=v1,v2`` assignments over a scenario dict."""
    variants = [({}, base)]
    for spec in assignments:
        if "=" not in spec:
            raise ConfigError(f"--set expects key=v1,v2,..., got {spec!r}")
        key, values = spec.split("=", 1)
        nxt = []
        for label, raw in variants:
            for v in values.split(","):
                d = copy.deepcopy(raw)
                try:
                    _set_path(d, key, _parse_value(v))
                except (KeyError, IndexError, ValueError, TypeError):
                    raise ConfigError(f"--set: no field {key!r} in scenario") from None
                nxt.append(({**label, key: v}, d))
        variants = nxt
    return variants


def _sweep_one(job):
    raw, out, controller = job
    scenario = scenario_from_dict(raw)
    summ = execute(scenario, out, controller=controller)
    return str(out), summ["totals"]


def cmd_sweep(args) -> int:
    base = resolve(args.scenario).to_dict()
    variants = sweep_variants(base, args.set or [])
    root = Path(args.out or Path("out") / f"{base['name']}_sweep")
    jobs = []
    for i, (label, raw) in enumerate(variants):
        tag = "_".join(f"{k.split('.')[-1]}-{v}" for k, v in label.items()) or "base"
        scenario_from_dict(raw)  # validate before spawning anything
        jobs.append((raw, root / f"{i:03d}_{tag}", args.controller))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    for out, totals in results:
        print(f"{out}: lines_ddr={totals['lines_ddr']} lines_cxl={totals['lines_cxl']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiermem", description="Tiered-memory uncore queueing simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or bundled preset")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.add_argument("--duration", type=int, help="override duration_cycles")
    r.add_argument("--event-log", action="store_true", help="also write events.csv")
    r.add_argument("--controller", choices=("on", "off", "mba"))
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="probe a platform for controller reference values")
    c.add_argument("platform", nargs="?", default="platform-a",
                   help="preset name, platform JSON, or scenario JSON")
    c.add_argument("--out", type=Path)
    c.set_defaults(func=cmd_calibrate)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)

    s = sub.add_parser("sweep", help="run parameter variants of a scenario")
    s.add_argument("scenario")
    s.add_argument("--set", action="append", metavar="KEY=V1,V2",
                   help="dotted field path, e.g. workloads.0.threads=1,2,4")
    s.add_argument("--out", type=Path)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--controller", choices=("on", "off", "mba"))
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("unhandled", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
