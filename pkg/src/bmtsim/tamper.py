"""Randomised tamper campaigns: corrupt a node the next read must fetch, then check detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cache import CacheConfig
from .controllers import EAGER, INSECURE, Controller, IntegrityViolation, make_controller
from .memory import Replay, Splice, Spoof, TamperAction
from .merkle import NodeId, RootRegister, TreeGeometry, build_tree, decode_counter
from .workloads import gen_fuzz_trace, make_rng

TAMPER_KINDS = ("replay", "spoof", "splice")


@dataclass
class TamperOutcome:
    trial: int
    policy: str
    kind: str
    target: NodeId
    detected: bool
    reported: Optional[NodeId] = None


def fetched_nodes(ctl: Controller, counter: int) -> list[NodeId]:
    """Nodes the next read of ``counter`` will take from memory, bottom up.

    Looks at cache residency only, so it leaves recency and stats alone.
    """
    g = ctl.geometry
    idx = counter // g.counters_per_block
    out = [NodeId(0, idx)]
    cache = ctl.cache
    for level in range(1, g.levels + 1):
        idx //= g.arity
        resident = cache is not None and cache.contains((level, idx))
        if ctl.policy == EAGER:
            if not resident:
                out.append(NodeId(level, idx))
        elif resident:
            break
        else:
            out.append(NodeId(level, idx))
    return out


def _random_block(rng: np.random.Generator, size: int, avoid: bytes) -> bytes:
    while True:
        block = rng.bytes(size)
        if block != avoid:
            return block


def _splice_source(rng: np.random.Generator, ctl: Controller, target: NodeId) -> NodeId:
    """A node whose bytes differ from the target's, preferring the target's own level."""
    g = ctl.geometry
    memory = ctl.memory
    current = memory.peek(target)
    for attempt in range(200):
        level = target.level if attempt < 100 and g.nodes_at(target.level) > 1 else int(rng.integers(0, g.levels + 1))
        source = NodeId(level, int(rng.integers(0, g.nodes_at(level))))
        if source != target and memory.peek(source) != current:
            return source
    raise RuntimeError(f"no splice source differs from {target}")


def make_action(
    kind: str, rng: np.random.Generator, ctl: Controller, target: NodeId, snapshots: dict
) -> TamperAction:
    if kind == "replay":
        return Replay(target, snapshots[target])
    if kind == "spoof":
        return Spoof(target, _random_block(rng, ctl.geometry.node_size, ctl.memory.peek(target)))
    if kind == "splice":
        return Splice(target, _splice_source(rng, ctl, target))
    raise ValueError(f"unknown tamper kind {kind!r}")


def run_trial(
    trial: int,
    policy: str,
    kind: str,
    geometry: TreeGeometry,
    cache_config: Optional[CacheConfig],
    base: tuple,
    rng: np.random.Generator,
    warmup: int = 32,
) -> TamperOutcome:
    """One trial on a fresh copy of the ``base`` (memory, root) image.

    The probe counter's path is snapshotted, then changed in memory by a
    write and a flush, so every replayed block is genuinely stale.  Random
    reads then warm the cache so the walk stops at varying levels.
    """
    g = geometry
    memory = base[0].copy()
    root = RootRegister(base[1].digest)
    ctl = make_controller(policy, g, memory, root, cache_config)
    counter = int(rng.integers(0, g.num_counters))
    block = counter // g.counters_per_block
    snapshots = {}
    for level in range(g.levels + 1):
        node = NodeId(level, block // g.arity**level)
        snapshots[node] = memory.snapshot(node)
    for req in gen_fuzz_trace(g, warmup, rng):
        ctl.execute(req)
    old = ctl.read_counter(counter)
    value = old
    while value in (old, decode_counter(base[0].peek((0, block)), counter % g.counters_per_block)):
        value = int(rng.integers(1, 1 << 63))
    ctl.write_counter(counter, value)
    ctl.flush()
    for req in gen_fuzz_trace(g, int(rng.integers(0, warmup + 1)), rng, write_fraction=0.0):
        ctl.execute(req)
    candidates = fetched_nodes(ctl, counter)
    target = candidates[int(rng.integers(0, len(candidates)))]
    action = make_action(kind, rng, ctl, target, snapshots)
    memory.apply_tamper(action)
    try:
        ctl.read_counter(counter)
    except IntegrityViolation as exc:
        return TamperOutcome(trial, policy, kind, target, True, exc.node)
    return TamperOutcome(trial, policy, kind, target, False)


def run_campaign(
    policy: str,
    geometry: TreeGeometry,
    cache_config: Optional[CacheConfig],
    trials: int,
    seed: int,
    kinds: Sequence[str] = TAMPER_KINDS,
    warmup: int = 32,
) -> list[TamperOutcome]:
    """``trials`` independent tamper trials, cycling through ``kinds``."""
    if policy == INSECURE:
        raise ValueError("the insecure baseline has no integrity tree to tamper with")
    for kind in kinds:
        if kind not in TAMPER_KINDS:
            raise ValueError(f"unknown tamper kind {kind!r}")
    rng = make_rng(seed)
    base = build_tree([], geometry)
    return [
        run_trial(t, policy, kinds[t % len(kinds)], geometry, cache_config, base, rng, warmup)
        for t in range(trials)
    ]

