"""``bmtsim`` command line: runs, stride sweeps, latency scenarios, bound stress, tamper campaigns."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .controllers import EAGER, HMT, INSECURE, LAZY, IntegrityViolation, make_controller
from .config import ConfigError, RunConfig
from .merkle import Blake2bHasher, build_tree, check_consistency
from .pipeline import TraceTiming, scenario_latency, simulate_controller
from .tamper import run_campaign
from .workloads import gen_bound_stress, gen_rst_trace, load_trace, save_trace

log = logging.getLogger("bmtsim")

OUT_DIR_ENV = "BMTSIM_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3
EXIT_BOUND = 4
EXIT_UNDETECTED = 5
EXIT_INCONSISTENT = 6

REQUEST_FIELDS = (
    "request_id",
    "kind",
    "counter",
    "address",
    "latency",
    "writeback_chains",
    "dirty_writebacks",
    "mem_reads",
    "mem_writes",
    "hash_ops",
)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def out_dir(cfg: RunConfig, flag: Optional[str]) -> Path:
    """Flag beats the environment variable, which beats the config file."""
    path = Path(flag or os.environ.get(OUT_DIR_ENV) or cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def bound_limits(policy: str, cfg: RunConfig) -> dict:
    """Per-request limits the run is checked against; None where no bound applies."""
    n = cfg.levels
    if policy == LAZY and cfg.cache_mode == "split":
        chains = 2 ** (n - 1) - 1
        return {"read_writeback_chains": chains, "write_writeback_chains": chains}
    if policy == HMT:
        return {"read_dirty_writebacks": n, "write_dirty_writebacks": 0}
    if policy == EAGER:
        return {"read_dirty_writebacks": 0, "write_dirty_writebacks": 0}
    return {}


def check_bounds(policy: str, cfg: RunConfig, stats) -> dict:
    limits = bound_limits(policy, cfg)
    observed = {}
    ok = True
    for name, limit in limits.items():
        side, metric = name.split("_", 1)
        peak = (stats.max_read if side == "read" else stats.max_write)[metric]
        observed[name] = peak
        ok = ok and peak <= limit
    return {"limits": limits, "observed": observed, "ok": ok}


class RunResult:
    def __init__(self, timing: Optional[TraceTiming], ctl, violation: Optional[IntegrityViolation]):
        self.timing = timing
        self.ctl = ctl
        self.violation = violation


def timed_run(cfg: RunConfig, policy: str, trace, keep_events: bool = False) -> RunResult:
    """Run ``trace`` from a fresh tree; an integrity violation ends the run and is reported."""
    g = cfg.geometry()
    memory, root = build_tree([], g)
    ctl = make_controller(policy, g, memory, root, cfg.cache_config(), record_events=True)
    try:
        timing = simulate_controller(ctl, trace, cfg.latency(), keep_events=keep_events)
    except IntegrityViolation as exc:
        return RunResult(None, ctl, exc)
    return RunResult(timing, ctl, None)


def request_rows(trace, timing: TraceTiming):
    for t, req, st in zip(timing.timings, trace, timing.stats):
        yield (
            t.request_id,
            req.kind,
            req.counter,
            req.address,
            t.latency,
            st.writeback_chains,
            st.dirty_writebacks,
            st.mem_reads,
            st.mem_writes,
            st.hash_ops,
        )


def summarize(cfg: RunConfig, policy: str, trace, result: RunResult) -> dict:
    ctl = result.ctl
    timing = result.timing
    n = len(trace)
    summary = {
        "policy": policy,
        "requests": n,
        "seed": cfg.seed,
        "violations": ctl.stats.violations,
        "stats": ctl.stats.as_dict(),
        "memory": {"reads": ctl.memory.stats.reads, "writes": ctl.memory.stats.writes},
        "cache": ctl.cache.stats() if ctl.cache is not None else None,
        "bounds": check_bounds(policy, cfg, ctl.stats),
        "config": cfg.as_dict(),
    }
    if result.violation is not None:
        summary["violation"] = {"level": result.violation.level, "index": result.violation.index}
    if timing is not None:
        reads = [t.latency for t in timing.timings if t.kind == "read"]
        writes = [t.latency for t in timing.timings if t.kind == "write"]
        summary.update(
            makespan=timing.makespan,
            throughput=timing.throughput,
            mem_accesses_per_request=(ctl.memory.stats.reads + ctl.memory.stats.writes) / n if n else 0.0,
            mean_read_latency=sum(reads) / len(reads) if reads else 0.0,
            mean_write_latency=sum(writes) / len(writes) if writes else 0.0,
            max_latency=max((t.latency for t in timing.timings), default=0),
        )
    return summary


def finish_run(cfg: RunConfig, policy: str, trace, result: RunResult, dest: Path, tag: str) -> int:
    """Flush, check consistency, write CSV/JSON (and events); return the exit code."""
    code = EXIT_OK
    ctl = result.ctl
    consistent = None
    if result.violation is None and cfg.flush and policy != INSECURE:
        ctl.flush()
        g = cfg.geometry()
        consistent = not check_consistency(ctl.memory, ctl.root, g, Blake2bHasher(digest_size=g.digest_size))
    summary = summarize(cfg, policy, trace, result)
    summary["consistent"] = consistent
    summary["root"] = ctl.root.digest.hex()
    if result.timing is not None:
        write_csv(dest / f"{tag}.csv", REQUEST_FIELDS, request_rows(trace, result.timing))
        if cfg.events:
            with open(dest / f"{tag}.events", "w", newline="") as fh:
                for i, events in enumerate(result.timing.events):
                    for ev in events:
                        fh.write(f"{i} {ev.format()}\n")
    write_json(dest / f"{tag}.json", summary)
    if result.violation is not None:
        log.error("integrity violation in a tamper-free run: %s", result.violation)
        code = EXIT_VIOLATION
    elif consistent is False:
        log.error("memory image inconsistent after flush")
        code = EXIT_INCONSISTENT
    elif not summary["bounds"]["ok"]:
        log.error("per-request bound breached: %s", summary["bounds"])
        code = EXIT_BOUND
    return code


# -- verbs -------------------------------------------------------------------


def cmd_run(cfg: RunConfig, dest: Path) -> int:
    if cfg.workload == "scenario":
        return cmd_latency_scenarios(cfg, dest, levels=(cfg.hit_level,), policies=(cfg.policy,))
    if cfg.workload == "bound":
        return cmd_bound_stress(cfg, dest)
    if cfg.workload == "tamper":
        return cmd_tamper(cfg, dest)
    if cfg.workload == "replay":
        return cmd_replay(cfg, dest)
    trace = gen_rst_trace(cfg.rst(), cfg.geometry(), cfg.seed)
    tag = cfg.tag or f"run-{cfg.policy}"
    result = timed_run(cfg, cfg.policy, trace, keep_events=cfg.events)
    return finish_run(cfg, cfg.policy, trace, result, dest, tag)


def cmd_replay(cfg: RunConfig, dest: Path) -> int:
    try:
        trace = load_trace(cfg.trace_file)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    g = cfg.geometry()
    for req in trace:
        if not 0 <= req.counter < g.num_counters:
            raise ConfigError(f"trace counter {req.counter} outside the tree")
    tag = cfg.tag or f"replay-{cfg.policy}"
    result = timed_run(cfg, cfg.policy, trace, keep_events=cfg.events)
    return finish_run(cfg, cfg.policy, trace, result, dest, tag)


def cmd_sweep_stride(cfg: RunConfig, dest: Path) -> int:
    g = cfg.geometry()
    header = (
        "stride",
        "policy",
        "requests",
        "makespan",
        "throughput",
        "mem_reads_per_request",
        "mem_writes_per_request",
        "l1_hit_rate",
    )
    rows = []
    per_stride = {}
    code = EXIT_OK
    for exp in range(cfg.sweep_min, cfg.sweep_max + 1):
        stride = 2**exp
        trace = gen_rst_trace(cfg.rst(stride), g, cfg.seed)
        entry = per_stride.setdefault(str(stride), {})
        for policy in cfg.sweep_policies:
            result = timed_run(cfg, policy, trace)
            if result.violation is not None:
                log.error("integrity violation at stride %d under %s", stride, policy)
                code = EXIT_VIOLATION
                continue
            ctl = result.ctl
            n = len(trace) or 1
            hit_rate = 0.0
            if ctl.cache is not None:
                looks = ctl.cache.hits[1] + ctl.cache.misses[1]
                hit_rate = ctl.cache.hits[1] / looks if looks else 0.0
            throughput = result.timing.throughput
            rows.append(
                (
                    stride,
                    policy,
                    len(trace),
                    result.timing.makespan,
                    f"{throughput:.9f}",
                    f"{ctl.memory.stats.reads / n:.6f}",
                    f"{ctl.memory.stats.writes / n:.6f}",
                    f"{hit_rate:.6f}",
                )
            )
            entry[policy] = throughput
            if not check_bounds(policy, cfg, ctl.stats)["ok"]:
                code = max(code, EXIT_BOUND)
        if entry.get(LAZY) and HMT in entry:
            entry["hmt_over_lazy"] = entry[HMT] / entry[LAZY]
        log.info("stride %d: %s", stride, entry)
    tag = cfg.tag or "sweep"
    write_csv(dest / f"{tag}.csv", header, rows)
    write_json(dest / f"{tag}.json", {"throughput": per_stride, "config": cfg.as_dict()})
    return code


def cmd_latency_scenarios(
    cfg: RunConfig,
    dest: Path,
    levels: Optional[Sequence[str]] = None,
    policies: Sequence[str] = (LAZY, HMT, EAGER),
) -> int:
    g = cfg.geometry()
    params = cfg.latency()
    levels = levels or tuple(f"mt{k}" for k in range(g.levels)) + ("all_miss",)
    rows = []
    table: dict = {}
    for level in levels:
        for policy in policies:
            rd, wr = scenario_latency(level, policy, params, g, cfg.cache_config())
            rows.append((level, policy, rd, wr))
            table.setdefault(level, {})[policy] = {"read": rd, "write": wr}
    summary: dict = {"latency": table, "config": cfg.as_dict()}
    if LAZY in policies and HMT in policies:
        summary["lazy_over_hmt"] = {
            level: {
                side: table[level][LAZY][side] / table[level][HMT][side] for side in ("read", "write")
            }
            for level in levels
        }
    tag = cfg.tag or "scenarios"
    write_csv(dest / f"{tag}.csv", ("scenario", "policy", "read_latency", "write_latency"), rows)
    write_json(dest / f"{tag}.json", summary)
    return EXIT_OK


def cmd_bound_stress(cfg: RunConfig, dest: Path) -> int:
    g = cfg.geometry()
    stress = gen_bound_stress(cfg.policy, g, cfg.cache_config(), cfg.seed)
    tag = cfg.tag or f"bound-{cfg.policy}"
    save_trace(dest / f"{tag}.trace.csv", stress.requests)
    result = timed_run(cfg, cfg.policy, stress.requests, keep_events=cfg.events)
    code = finish_run(cfg, cfg.policy, stress.requests, result, dest, tag)
    path = dest / f"{tag}.json"
    summary = json.loads(path.read_text())
    summary["stress"] = {"method": stress.method, "target_request": stress.target, "achieved": stress.achieved}
    write_json(path, summary)
    return code


def cmd_tamper(cfg: RunConfig, dest: Path) -> int:
    policies = (cfg.policy,) if cfg.policy != INSECURE else (EAGER, LAZY, HMT)
    rows = []
    summary: dict = {"trials": cfg.trials, "config": cfg.as_dict(), "detection": {}}
    missed = 0
    for policy in policies:
        outcomes = run_campaign(policy, cfg.geometry(), cfg.cache_config(), cfg.trials, cfg.seed, cfg.tamper_kinds)
        counts: dict = {}
        for o in outcomes:
            c = counts.setdefault(o.kind, {"trials": 0, "detected": 0})
            c["trials"] += 1
            c["detected"] += int(o.detected)
            rep = o.reported or (-1, -1)
            rows.append((o.trial, policy, o.kind, o.target.level, o.target.index, int(o.detected), rep[0], rep[1]))
        summary["detection"][policy] = counts
        missed += sum(c["trials"] - c["detected"] for c in counts.values())
    summary["missed"] = missed
    tag = cfg.tag or "tamper"
    write_csv(
        dest / f"{tag}.csv",
        ("trial", "policy", "kind", "target_level", "target_index", "detected", "reported_level", "reported_index"),
        rows,
    )
    write_json(dest / f"{tag}.json", summary)
    if missed:
        log.error("%d tampers went undetected", missed)
        return EXIT_UNDETECTED
    return EXIT_OK


VERBS = {
    "run": (cmd_run, None),
    "sweep-stride": (cmd_sweep_stride, None),
    "latency-scenarios": (cmd_latency_scenarios, "scenario"),
    "bound-stress": (cmd_bound_stress, "bound"),
    "tamper": (cmd_tamper, "tamper"),
    "replay": (cmd_replay, "replay"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmtsim", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("-c", "--config", help="flat key = value config file")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--policy", help="eager, lazy, hmt or insecure")
        p.add_argument("--seed", help="64-bit trace seed")
        p.add_argument("-o", "--out-dir", help=f"output directory (beats ${OUT_DIR_ENV} and the config)")
        p.add_argument("--tag", help="output file stem")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "replay":
            p.add_argument("trace", nargs="?", help="trace CSV (kind,counter,value,address)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler, workload = VERBS[args.verb]
    overrides = list(args.set)
    for key in ("policy", "seed", "tag"):
        if getattr(args, key) is not None:
            overrides.append(f"{key}={getattr(args, key)}")
    if workload is not None:
        overrides.append(f"workload={workload}")
    if getattr(args, "trace", None):
        overrides.append(f"trace_file={args.trace}")
    try:
        cfg = RunConfig.load(args.config, overrides)
        dest = out_dir(cfg, args.out_dir)
        return handler(cfg, dest)
    except ConfigError as exc:
        print(f"bmtsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
