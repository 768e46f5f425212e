"""Request traces: RST stride sweeps, random fuzz, and adversarial bound-stress traces.

Every random choice goes through numpy's PCG64 generator seeded from the
run's 64-bit seed, so traces are reproducible across machines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cache import CacheConfig
from .controllers import HMT, LAZY, Request, RequestStats, make_controller
from .merkle import TreeGeometry, build_tree

MASK64 = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


@dataclass(frozen=True)
class RstSpec:
    """Repetitive sequential traversal: ``base + i * stride`` bytes, wrapped to the address space."""

    stride: int
    count: int
    read_fraction: float = 1.0
    base: int = 0
    bytes_per_counter: int = 512
    address_space: int = 2 * 1024 * 1024

    def validate(self, geometry: TreeGeometry) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be in [0, 1]")
        if self.address_space // self.bytes_per_counter > geometry.num_counters:
            raise ValueError("address space needs more counters than the tree holds")


def gen_rst_trace(spec: RstSpec, geometry: TreeGeometry, seed: int = 0) -> list[Request]:
    spec.validate(geometry)
    rng = make_rng(seed)
    if spec.count == 0:
        return []
    i = np.arange(spec.count, dtype=np.int64)
    addresses = (spec.base + i * spec.stride) % spec.address_space
    counters = addresses // spec.bytes_per_counter
    reads = rng.random(spec.count) < spec.read_fraction
    values = rng.integers(0, 1 << 63, size=spec.count, dtype=np.int64)
    out = []
    for a, c, r, v in zip(addresses.tolist(), counters.tolist(), reads.tolist(), values.tolist()):
        out.append(Request("read", c, 0, a) if r else Request("write", c, v, a))
    return out


def gen_fuzz_trace(
    geometry: TreeGeometry,
    count: int,
    rng: np.random.Generator,
    pool: Optional[int] = None,
    write_fraction: float = 0.5,
) -> list[Request]:
    """Random reads/writes; ``pool`` restricts them to that many random counter blocks."""
    cpb = geometry.counters_per_block
    if pool is None:
        counters = rng.integers(0, geometry.num_counters, size=count)
    else:
        blocks = rng.integers(0, geometry.counter_blocks, size=pool)
        counters = blocks[rng.integers(0, pool, size=count)] * cpb + rng.integers(0, cpb, size=count)
    writes = rng.random(count) < write_fraction
    values = rng.integers(0, 1 << 63, size=count, dtype=np.int64)
    return [
        Request("write", c, v) if w else Request("read", c)
        for c, w, v in zip(counters.tolist(), writes.tolist(), values.tolist())
    ]


TRACE_FIELDS = ("kind", "counter", "value", "address")


def save_trace(path: Path | str, requests: list[Request]) -> None:
    """Write a trace as CSV with a ``kind,counter,value,address`` header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in requests:
            w.writerow((r.kind, r.counter, r.value, r.address))


def load_trace(path: Path | str) -> list[Request]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                kind = row["kind"].strip()
                counter = int(row["counter"])
                value = int(row.get("value") or 0)
                address = int(row.get("address") or -1)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace row {row!r}") from exc
            if kind == "read":
                out.append(Request.read(counter, address))
            elif kind == "write":
                out.append(Request.write(counter, value, address))
            else:
                raise ValueError(f"{path}:{lineno}: unknown request kind {kind!r}")
    return out


@dataclass
class StressTrace:
    """An adversarial trace and where its worst request sits."""

    requests: list[Request]
    target: int
    achieved: int
    method: str


def stress_metric(policy: str) -> Callable[[RequestStats], int]:
    if policy == HMT:
        return lambda st: st.dirty_writebacks
    return lambda st: st.writeback_chains


def replay_stress(policy: str, geometry: TreeGeometry, cache_config: CacheConfig, requests: list[Request]) -> list[int]:
    """Per-request stress metric for ``requests`` on a fresh all-zero tree."""
    memory, root = build_tree([], geometry)
    ctl = make_controller(policy, geometry, memory, root, cache_config)
    metric = stress_metric(policy)
    out = []
    for req in requests:
        ctl.execute(req)
        out.append(metric(ctl.last))
    return out


def _cascade_links(geometry: TreeGeometry, sets: int) -> list[int]:
    """Level-1 nodes forming the longest eviction cascade found in a direct-mapped cache.

    Link x sits in set x mod S.  Making its parent resident puts the parent in
    set (x // arity) mod S, which must hold the next dirty link.  Sets below the
    level-3 node count are kept free for the level-3 grandparents, which stay
    resident and stop every parent fetch after one level.
    """
    arity = geometry.arity
    n1 = geometry.nodes_at(1)
    low = geometry.nodes_at(min(3, geometry.levels))

    def successors(s: int) -> list[tuple[int, int]]:
        out = []
        for x in range(s, n1, sets):
            nxt = (x // arity) % sets
            if nxt >= low:
                out.append((nxt, x))
        return out

    best: list[int] = []
    for start in range(low, sets):
        seen = {start}
        links = []
        cur = start
        while True:
            cands = [(s, x) for s, x in successors(cur) if s not in seen]
            if not cands:
                break
            # prefer the successor with the fewest onward options (Warnsdorff's rule)
            cands.sort(key=lambda c: (sum(1 for t, _ in successors(c[0]) if t not in seen), c[0]))
            nxt, x = cands[0]
            links.append(x)
            seen.add(nxt)
            cur = nxt
        if len(links) > len(best):
            best = links
    return best


def gen_lazy_cascade(geometry: TreeGeometry, cache_config: CacheConfig) -> StressTrace:
    """Lazy-policy chain attack on a direct-mapped unified cache.

    Writes dirty the cascade links in order (each write leaves the previous
    link's parent behind, which the next link then evicts cleanly), then one
    read evicts the first link and sets off the whole cascade.
    """
    if cache_config.mode != "unified" or cache_config.ways != 1:
        raise ValueError("the cascade construction needs a direct-mapped unified cache")
    if geometry.levels < 3:
        raise ValueError("the cascade construction needs at least three levels")
    sets = cache_config.total_bytes // cache_config.line_size
    arity = geometry.arity
    cpb = geometry.counters_per_block
    links = _cascade_links(geometry, sets)
    if not links:
        raise ValueError("no cascade fits this cache")
    prime = [Request.write(x * arity * cpb, 1) for x in links]
    first = links[0] % sets
    candidates = [t for t in range(first, geometry.nodes_at(1), sets) if t != links[0]]
    for p in range(first, geometry.nodes_at(2), sets):
        if p != links[0] // arity:
            candidates.extend(p * arity + r for r in range(arity) if p * arity + r < geometry.nodes_at(1))
    best = None
    for t in candidates:
        trial = prime + [Request.read(t * arity * cpb)]
        achieved = replay_stress(LAZY, geometry, cache_config, trial)[-1]
        if best is None or achieved > best.achieved:
            best = StressTrace(trial, len(trial) - 1, achieved, "cascade")
        if achieved >= len(links):
            break
    return best


def search_stress(
    policy: str,
    geometry: TreeGeometry,
    cache_config: CacheConfig,
    seed: int,
    rounds: int = 8,
    length: int = 2000,
    pool: int = 8,
    write_fraction: float = 0.6,
    reads_only: bool = False,
) -> StressTrace:
    """Seeded random search; returns the prefix ending at the worst request seen."""
    rng = make_rng(seed)
    metric = stress_metric(policy)
    best = StressTrace([], -1, -1, "search")
    for _ in range(rounds):
        trace = gen_fuzz_trace(geometry, length, rng, pool=pool, write_fraction=write_fraction)
        memory, root = build_tree([], geometry)
        ctl = make_controller(policy, geometry, memory, root, cache_config)
        for i, req in enumerate(trace):
            ctl.execute(req)
            if reads_only and not req.is_read:
                continue
            v = metric(ctl.last)
            if v > best.achieved:
                best = StressTrace(trace[: i + 1], i, v, "search")
    return best


def gen_bound_stress(
    policy: str, geometry: TreeGeometry, cache_config: CacheConfig, seed: int = 0, **search_args
) -> StressTrace:
    """Trace built to maximise write-backs within one request.

    Lazy on a direct-mapped unified cache uses the designed cascade; every
    other combination uses seeded search.  For HMT only reads are scored.
    """
    if policy == LAZY and cache_config.mode == "unified" and cache_config.ways == 1 and geometry.levels >= 3:
        return gen_lazy_cascade(geometry, cache_config)
    return search_stress(policy, geometry, cache_config, seed, reads_only=(policy == HMT), **search_args)
