"""Discrete-event timing layered on the functional controllers' event logs.

The functional controller decides what happens (hits, misses, evictions);
this module decides when.  Lazy and eager controllers are sequential: a
request's operations run back to back and the next request waits.  The HMT
controller is a dataflow pipeline: each operation goes to its resource and
starts once its inputs are ready and the resource is free.  Resources are
the cache lookup, store and write-back ports, the memory read and write
channels, per-stage hash engines, write-back engines, the verification unit
and the root register.  Resources are served in
event-log order, so every completion time is a max-plus expression of the
latency parameters and grows monotonically with each of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .cache import CacheConfig
from .controllers import HMT, INSECURE, Controller, Request, make_controller
from .merkle import TreeGeometry, build_tree

MEM, HASH, CACHE, STALL = "mem", "hash", "cache", "stall"


@dataclass(frozen=True)
class LatencyParams:
    t_hash: int = 40
    t_mem: int = 100
    t_cache: int = 2
    t_aes: int = 0
    t_hmac: int = 0
    issue_width: int = 1
    max_inflight: int = 8
    speculative_sharing: bool = True
    mem_occupancy: int = 1

    def validate(self) -> None:
        for name in ("t_hash", "t_mem", "t_cache", "issue_width", "max_inflight", "mem_occupancy"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.t_aes < 0 or self.t_hmac < 0:
            raise ValueError("t_aes and t_hmac must be >= 0")


@dataclass
class RequestTiming:
    """Issue and completion of one request, with a critical-path breakdown.

    ``mem + hash + cache + stall == completion - issue`` exactly.  ``terms``
    holds the phase durations the closed-form speedup model consumes.
    """

    request_id: int
    kind: str
    issue: int
    completion: int
    mem: int = 0
    hash: int = 0
    cache: int = 0
    stall: int = 0
    terms: dict = field(default_factory=dict)

    @property
    def latency(self) -> int:
        return self.completion - self.issue


@dataclass
class TraceTiming:
    """Per-request timings, read results and functional stats of one timed run."""

    timings: list
    makespan: int
    values: list
    stats: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def throughput(self) -> float:
        """Requests per simulated cycle."""
        return len(self.timings) / self.makespan if self.makespan else 0.0


_SERIAL_COST = {
    "lookup": CACHE,
    "cache_insert": CACHE,
    "cache_update": CACHE,
    "mem_read": MEM,
    "mem_write": MEM,
    "hash": HASH,
    "verify": CACHE,
    "root_update": CACHE,
    "evict": CACHE,
}


def event_cost(kind: str, params: LatencyParams) -> int:
    if kind in ("mem_read", "mem_write"):
        return params.t_mem
    if kind == "hash":
        return params.t_hash
    if kind in ("lookup", "cache_insert", "cache_update"):
        return params.t_cache
    if kind in ("verify", "root_update"):
        return 1
    return 0


def serial_timing(request_id: int, kind: str, issue: int, events: Sequence, params: LatencyParams) -> RequestTiming:
    """Back-to-back execution; also fills the lazy-side speedup-model terms."""
    parts = {MEM: 0, HASH: 0, CACHE: 0}
    terms = {"noderd": 0, "verify": 0, "nodestore": 0, "wb": 0, "update": 0}
    for ev in events:
        cost = event_cost(ev.kind, params)
        parts[_SERIAL_COST[ev.kind]] += cost
        if ev.group:
            terms["wb"] += cost
        elif ev.phase == "fetch":
            terms["noderd"] += cost
        elif ev.phase == "verify":
            terms["verify"] += cost
        elif ev.phase in ("promote", "store"):
            terms["nodestore"] += cost
        else:
            terms["update"] += cost
    total = parts[MEM] + parts[HASH] + parts[CACHE]
    return RequestTiming(request_id, kind, issue, issue + total, parts[MEM], parts[HASH], parts[CACHE], 0, terms)


class _Op:
    __slots__ = ("start", "end", "cat", "pred")

    def __init__(self, start: int, end: int, cat: str, pred: Optional["_Op"]):
        self.start = start
        self.end = end
        self.cat = cat
        self.pred = pred


class _Ready:
    """Running max over candidate ready times, remembering which op set it."""

    __slots__ = ("t", "op")

    def __init__(self, t: int, op: Optional[_Op] = None):
        self.t = t
        self.op = op

    def add(self, t: int, op: Optional[_Op] = None) -> "_Ready":
        if t > self.t:
            self.t = t
            self.op = op
        return self

    def op_end(self, op: Optional[_Op]) -> "_Ready":
        if op is not None:
            self.add(op.end, op)
        return self


class HmtScheduler:
    """Resource-constrained list scheduler for the HMT dataflow controller."""

    def __init__(self, params: LatencyParams, split: bool):
        self.p = params
        self.split = split
        self.free: dict = {}
        self.mem_visible: dict = {}
        self.avail: dict = {}
        self.trusted: dict = {}
        self.root_ready = 0
        self.posted_end = 0

    def _port(self, level: int, kind: str) -> str:
        """Cache port: ``r`` lookups, ``w`` stores, ``b`` write-back lookups."""
        return f"c{level}{kind}" if self.split else f"c{kind}"

    def _run(self, resource: str, ready: _Ready, occupancy: int, latency: int, cat: str) -> _Op:
        start = max(ready.t, self.free.get(resource, 0))
        self.free[resource] = start + occupancy
        return _Op(start, start + latency, cat, ready.op)

    def schedule(self, request_id: int, kind: str, issue: int, events: Sequence) -> RequestTiming:
        if kind == "read":
            done, terms = self._read(issue, events)
        else:
            done, terms = self._write(issue, events)
        timing = RequestTiming(request_id, kind, issue, max(done.t, issue), terms=terms)
        parts = {MEM: 0, HASH: 0, CACHE: 0, STALL: 0}
        t = timing.completion
        op = done.op
        while op is not None:
            parts[STALL] += t - op.end
            parts[op.cat] += op.end - op.start
            t = op.start
            op = op.pred
        parts[STALL] += t - issue
        timing.mem, timing.hash, timing.cache, timing.stall = parts[MEM], parts[HASH], parts[CACHE], parts[STALL]
        return timing

    # -- write-back episodes -------------------------------------------------

    def _writeback(self, events: Sequence, pos: int, start: _Ready) -> int:
        """Schedule one write-back episode starting at ``events[pos]``; return the next position.

        Write-backs are posted: they hold resources and publish node times but
        do not delay the request that caused them.
        """
        p = self.p
        group = events[pos].group
        chain = _Ready(start.t, start.op)
        lookups: dict = {}
        reads: dict = {}
        while pos < len(events) and events[pos].group == group:
            ev = events[pos]
            node = (ev.level, ev.index)
            k = ev.kind
            if k == "hash":
                op = self._run(f"wb{ev.level}", _Ready(chain.t, chain.op).op_end(reads.get(node)), p.t_hash, p.t_hash, HASH)
                chain = _Ready(op.end, op)
            elif k == "lookup":
                op = self._run(self._port(ev.level, "b"), _Ready(start.t, start.op), 1, p.t_cache, CACHE)
                lookups[node] = op
            elif k == "cache_update":
                ready = _Ready(chain.t, chain.op).op_end(lookups.get(node))
                ready.add(self.avail.get(node, 0))
                op = self._run(self._port(ev.level, "w"), ready, 1, p.t_cache, CACHE)
                self.avail[node] = self.trusted[node] = op.end
                chain = _Ready(op.end, op)
            elif k == "mem_read":
                ready = _Ready(start.t, start.op).op_end(lookups.get(node))
                ready.add(self.mem_visible.get(node, 0))
                reads[node] = self._run("memr", ready, p.mem_occupancy, p.t_mem, MEM)
            elif k == "mem_write":
                ready = _Ready(chain.t, chain.op).op_end(reads.get(node))
                op = self._run("memw", ready, p.mem_occupancy, p.t_mem, MEM)
                self.mem_visible[node] = op.start + 1
                self.posted_end = max(self.posted_end, op.end)
            elif k == "root_update":
                op = self._run("root", _Ready(chain.t, chain.op), 1, 1, CACHE)
                self.root_ready = max(self.root_ready, op.end)
                chain = _Ready(op.end, op)
            pos += 1
        self.posted_end = max(self.posted_end, chain.t)
        return pos

    # -- reads -----------------------------------------------------------------

    def _read(self, issue: int, events: Sequence) -> tuple:
        p = self.p
        lookup_done: dict = {}
        data: dict = {}
        hashes: list = []
        term_usable: Optional[_Op] = None
        term_trusted = 0
        root_terminated = True
        verify: Optional[_Op] = None
        stores: list = []
        fetch_end = issue
        pos = 0
        n = len(events)
        while pos < n:
            ev = events[pos]
            if ev.group:
                pos = self._writeback(events, pos, _Ready(issue))
                continue
            k = ev.kind
            node = (ev.level, ev.index)
            if k == "lookup":
                op = self._run(self._port(ev.level, "r"), _Ready(issue), 1, p.t_cache, CACHE)
                lookup_done[ev.level] = op
                if ev.flag == "hit":
                    root_terminated = False
                    avail = self.avail.get(node, 0)
                    term_usable = op if op.end >= avail else _Op(op.end, avail, STALL, op)
                    term_trusted = self.trusted.get(node, 0)
            elif k == "mem_read":
                ready = _Ready(issue)
                for level in range(1, ev.level + 1):
                    ready.op_end(lookup_done.get(level))
                ready.add(self.mem_visible.get(node, 0))
                op = self._run("memr", ready, p.mem_occupancy, p.t_mem, MEM)
                data[ev.level] = op
                fetch_end = max(fetch_end, op.end)
            elif k == "hash":
                op = self._run(f"h{ev.level}", _Ready(issue).op_end(data.get(ev.level)), p.t_hash, p.t_hash, HASH)
                hashes.append(op)
            elif k == "verify":
                ready = _Ready(issue)
                for op in hashes:
                    ready.op_end(op)
                for op in data.values():
                    ready.op_end(op)
                ready.op_end(term_usable)
                if root_terminated:
                    ready.add(self.root_ready)
                verify = self._run("pvu", ready, 1, 1, CACHE)
            elif k == "cache_insert":
                # stores overlap verification; the line only counts as trusted once verified
                fetched = data.get(ev.level)
                op = self._run(self._port(ev.level, "w"), _Ready(issue).op_end(fetched), 1, p.t_cache, CACHE)
                stores.append(op)
                if p.speculative_sharing and fetched is not None:
                    self.avail[node] = fetched.end
                else:
                    self.avail[node] = max(op.end, verify.end if verify else 0)
                self.trusted[node] = max(op.end, verify.end if verify else 0)
            elif k == "evict" and ev.flag == "dirty":
                last = stores[-1] if stores else None
                pos += 1
                if pos < n and events[pos].group:
                    pos = self._writeback(events, pos, _Ready(issue).op_end(last))
                continue
            pos += 1
        done = _Ready(issue).op_end(verify)
        for op in stores:
            done.op_end(op)
        if term_trusted > done.t:
            done.add(term_trusted, _Op(done.t, term_trusted, STALL, done.op))
        verify_end = verify.end if verify else issue
        store_end = max((op.end for op in stores), default=fetch_end)
        terms = {
            "noderd": fetch_end - issue,
            "verify": max(verify_end - fetch_end, 0),
            "nodestore": max(store_end - fetch_end, 0),
            "wb": 0,
        }
        return done, terms

    # -- writes ----------------------------------------------------------------

    def _write(self, issue: int, events: Sequence) -> tuple:
        p = self.p
        chain = _Ready(issue)
        lookups: dict = {}
        reads: dict = {}
        ctr_done = issue
        done = _Ready(issue)
        ended_in = "mem"
        # lookups and ancestor reads are issued up front so the posted
        # counter write does not hold the memory channel ahead of them
        first = [ev for ev in events if ev.kind in ("lookup", "mem_read")]
        rest = [ev for ev in events if ev.kind not in ("lookup", "mem_read")]
        for ev in first + rest:
            k = ev.kind
            node = (ev.level, ev.index)
            if k == "mem_read":
                if ev.level == 0:
                    ready = _Ready(issue)
                else:
                    ready = _Ready(issue).op_end(lookups.get(node))
                ready.add(self.mem_visible.get(node, 0))
                op = self._run("memr", ready, p.mem_occupancy, p.t_mem, MEM)
                reads[node] = op
                if ev.level == 0:
                    chain = _Ready(op.end, op)
                    ctr_done = op.end
            elif k == "mem_write":
                op = self._run("memw", _Ready(chain.t, chain.op).op_end(reads.get(node)), p.mem_occupancy, p.t_mem, MEM)
                self.mem_visible[node] = op.start + 1
                self.posted_end = max(self.posted_end, op.end)
            elif k == "hash":
                ready = _Ready(chain.t, chain.op)
                if ev.level > 0:
                    ready.op_end(reads.get(node))
                op = self._run(f"h{ev.level}", ready, p.t_hash, p.t_hash, HASH)
                chain = _Ready(op.end, op)
            elif k == "lookup":
                lookups[node] = self._run(self._port(ev.level, "r"), _Ready(issue), 1, p.t_cache, CACHE)
            elif k == "cache_update":
                ready = _Ready(chain.t, chain.op).op_end(lookups.get(node))
                ready.add(self.avail.get(node, 0))
                ready.add(self.trusted.get(node, 0))
                op = self._run(self._port(ev.level, "w"), ready, 1, p.t_cache, CACHE)
                self.avail[node] = self.trusted[node] = op.end
                chain = _Ready(op.end, op)
                done = _Ready(op.end, op)
                ended_in = "cache"
            elif k == "root_update":
                op = self._run("root", _Ready(chain.t, chain.op), 1, 1, CACHE)
                self.root_ready = max(self.root_ready, op.end)
                chain = _Ready(op.end, op)
                done = _Ready(op.end, op)
                ended_in = "mem"
        update = done.t - ctr_done
        terms = {
            "noderd": ctr_done - issue,
            "sbupdate": 0,
            "cacheupdate": update if ended_in == "cache" else 0,
            "memupdate": update if ended_in == "mem" else 0,
        }
        return done, terms


class InsecureScheduler:
    """One pipelined memory access per request."""

    def __init__(self, params: LatencyParams):
        self.p = params
        self.free = 0

    def schedule(self, request_id: int, kind: str, issue: int, events: Sequence) -> RequestTiming:
        start = max(issue, self.free)
        self.free = start + self.p.mem_occupancy
        end = start + self.p.t_mem
        return RequestTiming(request_id, kind, issue, end, mem=self.p.t_mem, stall=start - issue)


def simulate_controller(
    controller: Controller, trace: Sequence[Request], params: LatencyParams, keep_events: bool = False
) -> TraceTiming:
    """Run ``trace`` on ``controller`` and time it.

    With ``keep_events`` the result carries each request's event list.
    """
    params.validate()
    if controller.events is None:
        controller.events = []
    policy = controller.policy
    timings = []
    values = []
    per_request = []
    logs = []
    completions: list = []
    issues: list = []
    if policy == HMT:
        sched = HmtScheduler(params, controller.cache is None or controller.cache.split)
    elif policy == INSECURE:
        sched = InsecureScheduler(params)
    else:
        sched = None
    clock = 0
    for i, req in enumerate(trace):
        controller.events = []
        values.append(controller.execute(req))
        per_request.append(controller.last)
        events = controller.events
        if keep_events:
            logs.append(events)
        if sched is None:
            t = serial_timing(i, req.kind, clock, events, params)
            clock = t.completion
        else:
            issue = issues[i - params.issue_width] + 1 if i >= params.issue_width else 0
            if i >= params.max_inflight:
                issue = max(issue, completions[i - params.max_inflight])
            t = sched.schedule(i, req.kind, issue, events)
        issues.append(t.issue)
        completions.append(t.completion)
        timings.append(t)
    controller.events = []
    makespan = max(completions, default=0)
    if sched is not None and hasattr(sched, "posted_end"):
        makespan = max(makespan, sched.posted_end)
    return TraceTiming(timings, makespan, values, per_request, logs)


def simulate_trace(
    trace: Sequence[Request],
    policy: str,
    params: LatencyParams,
    cache_config: Optional[CacheConfig],
    geometry: Optional[TreeGeometry] = None,
    initial_counters: Sequence[int] = (),
) -> TraceTiming:
    """Build a fresh tree, run ``trace`` functionally under ``policy`` and time it."""
    geometry = geometry or TreeGeometry()
    memory, root = build_tree(initial_counters, geometry)
    ctl = make_controller(policy, geometry, memory, root, cache_config, record_events=True)
    return simulate_controller(ctl, trace, params)


SCENARIOS = ("mt0", "mt1", "mt2", "all_miss")


def _seed_cache(ctl: Controller, block_index: int, first_cached: int) -> None:
    """Make the path of ``block_index`` resident from ``first_cached`` up to level N."""
    g = ctl.geometry
    idx = block_index
    nodes = []
    for level in range(1, g.levels + 1):
        idx //= g.arity
        if level >= first_cached:
            nodes.append((level, idx))
    for node in reversed(nodes):
        ctl.cache.insert(node, ctl.memory.peek(node), False)


def scenario_latency(
    hit_level: str,
    policy: str,
    params: LatencyParams = LatencyParams(),
    geometry: Optional[TreeGeometry] = None,
    cache_config: Optional[CacheConfig] = None,
    counter: int = 0,
) -> tuple[int, int]:
    """Single-request (read, write) latency with the walk ending at ``hit_level``.

    ``mtK`` caches the path from level K+1 upward, so the first hit is at
    level K+1; ``all_miss`` caches nothing and the walk ends at the root.
    """
    geometry = geometry or TreeGeometry()
    cache_config = cache_config or CacheConfig.split((1024, 448, 64))
    if hit_level == "all_miss":
        first = geometry.levels + 1
    elif hit_level.startswith("mt") and hit_level[2:].isdigit():
        first = int(hit_level[2:]) + 1
        if first > geometry.levels:
            raise ValueError(f"{hit_level} needs more than {geometry.levels} levels")
    else:
        raise ValueError(f"unknown scenario {hit_level!r}")
    out = []
    for req in (Request.read(counter), Request.write(counter, 1)):
        memory, root = build_tree([], geometry)
        ctl = make_controller(policy, geometry, memory, root, cache_config, record_events=True)
        _seed_cache(ctl, counter // geometry.counters_per_block, first)
        out.append(simulate_controller(ctl, [req], params).timings[0].latency)
    return out[0], out[1]


@dataclass(frozen=True)
class ChainProfile:
    """Component latencies for the closed-form speedup model.

    Unprimed fields describe the lazy controller, primed (``h_``) ones HMT.
    """

    noderd: float
    verify: float
    nodestore: float
    wb: float
    verify_update: float = 0.0
    h_noderd: float = 0.0
    h_verify: float = 0.0
    h_nodestore: float = 0.0
    h_wb: float = 0.0
    h_sbupdate: float = 0.0
    h_cacheupdate: float = 0.0
    h_memupdate: float = 0.0

    @classmethod
    def from_read_timings(cls, lazy: RequestTiming, hmt: RequestTiming) -> "ChainProfile":
        lt, ht = lazy.terms, hmt.terms
        return cls(
            noderd=lt["noderd"],
            verify=lt["verify"],
            nodestore=lt["nodestore"],
            wb=lt["wb"],
            h_noderd=ht["noderd"],
            h_verify=ht["verify"],
            h_nodestore=ht["nodestore"],
            h_wb=ht["wb"],
        )

    @classmethod
    def from_write_timings(cls, lazy: RequestTiming, hmt: RequestTiming) -> "ChainProfile":
        lt, ht = lazy.terms, hmt.terms
        return cls(
            noderd=lt["noderd"],
            verify=0.0,
            nodestore=lt["nodestore"],
            wb=lt["wb"],
            verify_update=lt["verify"] + lt["update"],
            h_noderd=ht["noderd"],
            h_sbupdate=ht["sbupdate"],
            h_cacheupdate=ht["cacheupdate"],
            h_memupdate=ht["memupdate"],
        )


def speedup_model(params: LatencyParams, profile: ChainProfile) -> tuple[float, float]:
    """(read, write) latency ratios HMT/lazy; below 1 means HMT is faster.

    Raises ZeroDivisionError when the lazy-side terms are all zero.
    """
    read_num = profile.h_noderd + max(profile.h_nodestore, profile.h_verify) + profile.h_wb
    read_den = profile.noderd + profile.verify + profile.nodestore + profile.wb
    write_num = profile.h_noderd + max(profile.h_sbupdate, profile.h_cacheupdate, profile.h_memupdate)
    write_den = profile.noderd + max(profile.verify_update, profile.nodestore) + profile.wb
    return read_num / read_den, write_num / write_den


def system_latency(params: LatencyParams, tree_read: float, tree_write: float) -> tuple[float, float]:
    """(read, write) latency of a full secure-memory access around the tree.

    Reads pay decryption and MAC check in series with the tree; writes
    overlap encryption with MAC generation.
    """
    return params.t_aes + params.t_hmac + tree_read, max(params.t_aes, params.t_hmac) + tree_write
