"""Eager, lazy and HMT verification/update policies over one memory, cache and root.

All controllers are sequential state machines: each request runs to
completion before the next starts.  When ``record_events`` is set they log
every cache, memory and hash operation so the timing model can replay them.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .cache import CacheConfig, EvictionRecord, MetadataCache
from .memory import MainMemory
from .merkle import (
    Blake2bHasher,
    Hasher,
    NodeId,
    RootRegister,
    TreeGeometry,
    decode_counter,
    get_slot,
    replace_counter,
    set_slot,
)

EAGER, LAZY, HMT, INSECURE = "eager", "lazy", "hmt", "insecure"
POLICIES = (EAGER, LAZY, HMT, INSECURE)

_MASK64 = 0xFFFFFFFFFFFFFFFF


class IntegrityViolation(Exception):
    """A fetched block does not match the digest its trusted parent holds for it."""

    def __init__(self, level: int, index: int):
        super().__init__(f"integrity violation at level {level}, index {index}")
        self.level = level
        self.index = index

    @property
    def node(self) -> NodeId:
        return NodeId(self.level, self.index)


class ControllerPoisoned(RuntimeError):
    """Raised for requests issued after a violation and before ``reset``."""


@dataclass(frozen=True)
class Request:
    kind: str
    counter: int
    value: int = 0
    address: int = -1

    @classmethod
    def read(cls, counter: int, address: int = -1) -> "Request":
        return cls("read", counter, 0, address)

    @classmethod
    def write(cls, counter: int, value: int, address: int = -1) -> "Request":
        return cls("write", counter, value & _MASK64, address)

    @property
    def is_read(self) -> bool:
        return self.kind == "read"


class Event(NamedTuple):
    """One logged operation.

    ``phase`` says which part of the request issued it (walk, fetch, verify,
    promote, wb, ctr, update); ``group`` numbers write-back episodes so the
    timing model can keep their operations together.
    """

    kind: str
    level: int
    index: int
    phase: str
    group: int
    flag: str

    def format(self) -> str:
        return f"{self.kind} {self.level} {self.index} {self.phase} {self.group} {self.flag}".rstrip()


class RequestStats:
    __slots__ = (
        "kind",
        "counter",
        "writeback_chains",
        "dirty_writebacks",
        "evictions",
        "mem_reads",
        "mem_writes",
        "hash_ops",
        "max_chain_depth",
    )

    def __init__(self, kind: str = "", counter: int = -1):
        self.kind = kind
        self.counter = counter
        self.writeback_chains = 0
        self.dirty_writebacks = 0
        self.evictions = 0
        self.mem_reads = 0
        self.mem_writes = 0
        self.hash_ops = 0
        self.max_chain_depth = 0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__slots__}

    def __repr__(self) -> str:
        return f"RequestStats({self.as_dict()})"


_TOTALS = ("writeback_chains", "dirty_writebacks", "evictions", "mem_reads", "mem_writes", "hash_ops")


@dataclass
class ControllerStats:
    requests: int = 0
    reads: int = 0
    writes: int = 0
    totals: dict = field(default_factory=lambda: dict.fromkeys(_TOTALS, 0))
    max_read: dict = field(default_factory=lambda: dict.fromkeys(_TOTALS + ("max_chain_depth",), 0))
    max_write: dict = field(default_factory=lambda: dict.fromkeys(_TOTALS + ("max_chain_depth",), 0))
    violations: int = 0

    def record(self, st: RequestStats) -> None:
        self.requests += 1
        if st.kind == "read":
            self.reads += 1
            peak = self.max_read
        else:
            self.writes += 1
            peak = self.max_write
        totals = self.totals
        for name in _TOTALS:
            v = getattr(st, name)
            totals[name] += v
            if v > peak[name]:
                peak[name] = v
        if st.max_chain_depth > peak["max_chain_depth"]:
            peak["max_chain_depth"] = st.max_chain_depth

    def peak(self, name: str) -> int:
        return max(self.max_read[name], self.max_write[name])

    def as_dict(self) -> dict:
        return {
            "requests": self.requests,
            "reads": self.reads,
            "writes": self.writes,
            "violations": self.violations,
            "totals": dict(self.totals),
            "max_per_read": dict(self.max_read),
            "max_per_write": dict(self.max_write),
        }


@dataclass
class VerificationJob:
    """Everything one verification needs, one list entry per level from ``base`` up.

    ``data[k]`` is present wherever ``mask[k]`` is set and at the terminator
    (the cached level, if any).  ``terminator`` is the index into the lists of
    the cached level, or None when the walk reached the root register.
    """

    base: int
    nodes: list
    data: list
    offsets: list
    mask: list
    hits: list
    terminator: Optional[int] = None


def verify_parallel(job: VerificationJob, hasher: Hasher, root_digest: bytes, width: int, order=None) -> int:
    """Check every masked level against the slot its parent holds for it.

    All comparisons are independent; the result does not depend on ``order``.
    On mismatch raises for the highest failing level, which is the first
    block that disagrees with trusted data.  Returns the number of hashes.
    """
    top = len(job.nodes) - 1
    positions = range(len(job.nodes)) if order is None else order
    failed = []
    hashes = 0
    for k in positions:
        if not job.mask[k]:
            continue
        level, index = job.nodes[k]
        digest = hasher(level, index, job.data[k])
        hashes += 1
        if k == top:
            expected = root_digest
        else:
            expected = get_slot(job.data[k + 1], job.offsets[k], width)
        if digest != expected:
            failed.append(k)
    if failed:
        level, index = job.nodes[max(failed)]
        raise IntegrityViolation(level, index)
    return hashes


class SpeculativeBuffer:
    """Fetched-but-unverified nodes of the in-flight verification."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict = {}
        self.peak = 0

    def put(self, node, data: bytes) -> None:
        if node not in self.entries and len(self.entries) >= self.capacity:
            raise OverflowError("speculative buffer full")
        self.entries[node] = data
        if len(self.entries) > self.peak:
            self.peak = len(self.entries)

    def get(self, node) -> Optional[bytes]:
        return self.entries.get(node)

    def mirror(self, node, data: bytes) -> None:
        """Keep a buffered copy in step with an in-memory update of the same node."""
        if node in self.entries:
            self.entries[node] = data

    def pop(self, node) -> bytes:
        return self.entries.pop(node)

    def drop_all(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, node) -> bool:
        return node in self.entries


class Controller:
    policy = ""

    def __init__(
        self,
        geometry: TreeGeometry,
        memory: MainMemory,
        root: RootRegister,
        cache: Optional[MetadataCache],
        hasher: Optional[Hasher] = None,
        record_events: bool = False,
    ):
        self.geometry = geometry
        self.memory = memory
        self.root = root
        self.cache = cache
        self.hasher = hasher or Blake2bHasher(digest_size=geometry.digest_size)
        self.stats = ControllerStats()
        self.flush_stats = RequestStats("flush")
        self.last: RequestStats = RequestStats()
        self.poisoned = False
        self.events: Optional[list] = [] if record_events else None
        self._phase = ""
        self._group = 0
        self._next_group = 0
        self._st = self.last
        self._N = geometry.levels
        self._arity = geometry.arity
        self._width = geometry.digest_size
        self._cpb = geometry.counters_per_block

    # -- bookkeeping helpers -------------------------------------------------

    def _emit(self, kind: str, level: int = -1, index: int = -1, flag: str = "") -> None:
        self.events.append(Event(kind, level, index, self._phase, self._group, flag))

    def _mread(self, level: int, index: int) -> bytes:
        self._st.mem_reads += 1
        if self.events is not None:
            self._emit("mem_read", level, index)
        return self.memory.read_block((level, index))

    def _mwrite(self, level: int, index: int, block: bytes) -> None:
        self._st.mem_writes += 1
        if self.events is not None:
            self._emit("mem_write", level, index)
        self.memory.write_block((level, index), block)

    def _hash(self, level: int, index: int, block: bytes) -> bytes:
        self._st.hash_ops += 1
        if self.events is not None:
            self._emit("hash", level, index)
        return self.hasher(level, index, block)

    def _lookup(self, level: int, index: int) -> Optional[bytes]:
        data = self.cache.lookup((level, index))
        if self.events is not None:
            self._emit("lookup", level, index, "miss" if data is None else "hit")
        return data

    def _set_root(self, digest: bytes) -> None:
        self.root.digest = digest
        if self.events is not None:
            self._emit("root_update", self._N + 1, 0)

    def _check_counter(self, counter: int) -> None:
        if self.poisoned:
            raise ControllerPoisoned("controller halted after an integrity violation; call reset()")
        if not 0 <= counter < self.geometry.num_counters:
            raise IndexError(f"counter {counter} out of range")

    def _begin(self, kind: str, counter: int) -> None:
        self._check_counter(counter)
        self._st = RequestStats(kind, counter)
        self._group = 0
        self._next_group = 0
        self._phase = ""

    def _end(self) -> None:
        self.last = self._st
        self.stats.record(self._st)

    def _open_group(self) -> tuple:
        saved = (self._phase, self._group)
        self._next_group += 1
        self._group = self._next_group
        return saved

    def _fail(self, exc: IntegrityViolation) -> None:
        self.poisoned = True
        self.stats.violations += 1
        self.last = self._st

    # -- public interface ----------------------------------------------------

    def read_counter(self, counter: int) -> int:
        self._begin("read", counter)
        try:
            value = self._read(counter)
        except IntegrityViolation as exc:
            self._fail(exc)
            raise
        self._end()
        return value

    def write_counter(self, counter: int, value: int) -> None:
        self._begin("write", counter)
        try:
            self._write(counter, value & _MASK64)
        except IntegrityViolation as exc:
            self._fail(exc)
            raise
        self._end()

    def execute(self, request: Request) -> Optional[int]:
        if request.kind == "read":
            return self.read_counter(request.counter)
        self.write_counter(request.counter, request.value)
        return None

    def flush(self) -> None:
        """Write every dirty line back so memory and the root register agree."""
        if self.poisoned:
            raise ControllerPoisoned("controller halted after an integrity violation; call reset()")
        self._st = self.flush_stats
        self._phase = "flush"
        try:
            self._flush()
        except IntegrityViolation as exc:
            self._fail(exc)
            raise
        finally:
            self._phase = ""

    def reset(self, memory: Optional[MainMemory] = None, root: Optional[RootRegister] = None) -> None:
        """Clear the poisoned state and drop all on-chip state without write-back."""
        if memory is not None:
            self.memory = memory
        if root is not None:
            self.root = root
        if self.cache is not None:
            self.cache.clear()
        self.poisoned = False
        self._reset_extra()

    def take_events(self) -> list:
        out = self.events
        self.events = []
        return out

    def _reset_extra(self) -> None:
        pass

    def _flush(self) -> None:
        pass

    def _read(self, counter: int) -> int:
        raise NotImplementedError

    def _write(self, counter: int, value: int) -> None:
        raise NotImplementedError


class InsecureController(Controller):
    """Direct counter access with no integrity tree; the throughput ceiling.

    Writes are modelled as a single masked store of the counter.
    """

    policy = INSECURE

    def __init__(self, geometry, memory, root, cache=None, hasher=None, record_events=False):
        super().__init__(geometry, memory, root, None, hasher, record_events)

    def _read(self, counter: int) -> int:
        block = self._mread(0, counter // self._cpb)
        return decode_counter(block, counter % self._cpb)

    def _write(self, counter: int, value: int) -> None:
        b = counter // self._cpb
        block = self.memory.peek((0, b))
        self._mwrite(0, b, replace_counter(block, counter % self._cpb, value))


class EagerController(Controller):
    """Verifies the whole path on every access and rewrites every ancestor on writes.

    With a cache attached, cached copies replace memory reads but are still
    hashed and checked; the cache is write-through and never holds dirty lines.
    """

    policy = EAGER

    def _path(self, block_index: int) -> list:
        path = []
        idx = block_index
        self._phase = "fetch"
        data = self._mread(0, idx)
        path.append((0, idx, data))
        cache = self.cache
        for level in range(1, self._N + 1):
            idx //= self._arity
            data = None
            if cache is not None:
                data = self._lookup(level, idx)
            if data is None:
                data = self._mread(level, idx)
            path.append((level, idx, data))
        self._phase = "verify"
        width = self._width
        for k in range(self._N, -1, -1):
            level, idx, data = path[k]
            digest = self._hash(level, idx, data)
            if k == self._N:
                expected = self.root.digest
            else:
                expected = get_slot(path[k + 1][2], idx % self._arity, width)
            if digest != expected:
                raise IntegrityViolation(level, idx)
        if cache is not None:
            self._phase = "promote"
            for level, idx, data in reversed(path[1:]):
                if not cache.contains((level, idx)):
                    rec = cache.insert((level, idx), data, False)
                    if self.events is not None:
                        self._emit("cache_insert", level, idx)
                    if rec is not None:
                        self._st.evictions += 1
                        if self.events is not None:
                            self._emit("evict", rec.victim.level, rec.victim.index, "clean")
        return path

    def _read(self, counter: int) -> int:
        path = self._path(counter // self._cpb)
        return decode_counter(path[0][2], counter % self._cpb)

    def _write(self, counter: int, value: int) -> None:
        path = self._path(counter // self._cpb)
        self._phase = "update"
        cache = self.cache
        _, idx, block = path[0]
        new = replace_counter(block, counter % self._cpb, value)
        for k in range(self._N + 1):
            level, idx, _ = path[k]
            digest = self._hash(level, idx, new)
            self._mwrite(level, idx, new)
            if cache is not None and level >= 1 and cache.contains((level, idx)):
                cache.insert((level, idx), new, False)
                if self.events is not None:
                    self._emit("cache_update", level, idx)
            if k == self._N:
                self._set_root(digest)
            else:
                new = set_slot(path[k + 1][2], idx % self._arity, digest)


class LazyController(Controller):
    """Write-back cache with recursive eviction chains.

    Verification stops at the first trusted node: a cache hit, a victim whose
    write-back is still in progress, or the root register.  A dirty eviction
    must first make its parent resident (which may evict again) before the
    parent's slot can be updated and the victim written out.
    """

    policy = LAZY

    def __init__(self, geometry, memory, root, cache, hasher=None, record_events=False):
        if cache is None:
            raise ValueError("the lazy policy needs a cache")
        super().__init__(geometry, memory, root, cache, hasher, record_events)
        self._pending: dict = {}
        self._epoch = 0
        self._written: dict = {}
        self._depth = 0
        limit = 50 * (sum(len(c.sets) * c.ways for c in cache.caches) + 100)
        if sys.getrecursionlimit() < limit:
            sys.setrecursionlimit(limit)

    def _reset_extra(self) -> None:
        self._pending.clear()
        self._written.clear()
        self._depth = 0

    def _mwrite(self, level: int, index: int, block: bytes) -> None:
        self._epoch += 1
        self._written[(level, index)] = self._epoch
        super()._mwrite(level, index, block)

    def _trusted(self, level: int, index: int) -> Optional[bytes]:
        node = (level, index)
        data = self._pending.get(node)
        if data is not None:
            if self.events is not None:
                self._emit("lookup", level, index, "pending")
            return data
        return self._lookup(level, index)

    def _fetch_verified(self, level: int, index: int) -> tuple:
        """Fetch a node and its untrusted ancestors, then verify them top-down."""
        epoch = self._epoch
        arity = self._arity
        top = self._N
        self._phase = "fetch"
        fetched = [(level, index, self._mread(level, index))]
        anchor = None
        while level < top:
            level += 1
            index //= arity
            anchor = self._trusted(level, index)
            if anchor is not None:
                break
            fetched.append((level, index, self._mread(level, index)))
        width = self._width
        upper = anchor
        self._phase = "verify"
        for k in range(len(fetched) - 1, -1, -1):
            lvl, idx, data = fetched[k]
            digest = self._hash(lvl, idx, data)
            if upper is None:
                expected = self.root.digest
            else:
                expected = get_slot(upper, idx % arity, width)
            if digest != expected:
                raise IntegrityViolation(lvl, idx)
            upper = data
        return fetched, epoch

    def _install(self, fetched: list, epoch: int) -> None:
        cache = self.cache
        pending = self._pending
        written = self._written
        self._phase = "promote"
        for level, index, data in reversed(fetched):
            if level == 0:
                continue
            node = (level, index)
            if node in pending or cache.contains(node):
                continue
            if written.get(node, 0) > epoch:
                # rewritten by a chain since we fetched it; our copy is stale
                continue
            rec = cache.insert(node, data, False)
            if self.events is not None:
                self._emit("cache_insert", level, index)
            if rec is not None:
                self._st.evictions += 1
                if self.events is not None:
                    self._emit("evict", rec.victim.level, rec.victim.index, "dirty" if rec.dirty else "clean")
                if rec.dirty:
                    self._write_back(rec.victim, rec.data)

    def _ensure_resident(self, level: int, index: int) -> None:
        node = (level, index)
        for _ in range(10_000):
            if node in self._pending or self._lookup(level, index) is not None:
                return
            fetched, epoch = self._fetch_verified(level, index)
            self._install(fetched, epoch)
        raise RuntimeError(f"could not keep {node} resident")

    def _update_parent(self, level: int, index: int, digest: bytes) -> None:
        """Write ``digest`` into the (resident) parent of (level, index), marking it dirty."""
        parent = (level + 1, index // self._arity)
        offset = index % self._arity
        pdata = self._pending.get(parent)
        if pdata is not None:
            self._pending[parent] = set_slot(pdata, offset, digest)
        else:
            cache = self.cache
            cache.update_in_place(parent, set_slot(cache.peek(parent), offset, digest))
        if self.events is not None:
            self._emit("cache_update", parent[0], parent[1])

    def _write_back(self, victim: NodeId, data: bytes) -> None:
        st = self._st
        st.writeback_chains += 1
        st.dirty_writebacks += 1
        self._depth += 1
        if self._depth > st.max_chain_depth:
            st.max_chain_depth = self._depth
        saved = self._open_group()
        self._phase = "wb"
        level, index = victim
        self._pending[victim] = data
        if level == self._N:
            self._set_root(self._hash(level, index, data))
        else:
            self._ensure_resident(level + 1, index // self._arity)
            self._phase = "wb"
            data = self._pending[victim]
            self._update_parent(level, index, self._hash(level, index, data))
        self._phase = "wb"
        self._mwrite(level, index, self._pending.pop(victim))
        self._depth -= 1
        self._phase, self._group = saved

    def _read(self, counter: int) -> int:
        b = counter // self._cpb
        fetched, epoch = self._fetch_verified(0, b)
        self._install(fetched, epoch)
        return decode_counter(fetched[0][2], counter % self._cpb)

    def _write(self, counter: int, value: int) -> None:
        b = counter // self._cpb
        fetched, epoch = self._fetch_verified(0, b)
        self._install(fetched, epoch)
        self._phase = "update"
        self._ensure_resident(1, b // self._arity)
        self._phase = "update"
        new = replace_counter(fetched[0][2], counter % self._cpb, value)
        self._update_parent(0, b, self._hash(0, b, new))
        self._phase = "store"
        self._mwrite(0, b, new)

    def _flush(self) -> None:
        cache = self.cache
        while True:
            records = cache.flush_all()
            if not records:
                return
            for rec in records:
                self._pending[rec.victim] = rec.data
            for rec in records:
                data = self._pending.pop(rec.victim)
                self._write_back(rec.victim, data)


class HmtController(Controller):
    """Decoupled verification and update.

    Reads verify all missing levels at once against the first cached ancestor
    (or the root register) and only then promote the fetched nodes.  Updates
    and dirty evictions climb through memory until they meet a cached
    ancestor, so handling an eviction never allocates a line and never causes
    another eviction.
    """

    policy = HMT

    def __init__(self, geometry, memory, root, cache, hasher=None, record_events=False, sb_capacity=None):
        if cache is None:
            raise ValueError("the HMT policy needs a cache")
        super().__init__(geometry, memory, root, cache, hasher, record_events)
        self.sb = SpeculativeBuffer(sb_capacity or geometry.levels)
        self._pending: Optional[dict] = None

    def _reset_extra(self) -> None:
        self.sb.drop_all()
        self._pending = None

    def build_job(self, block_index: int) -> VerificationJob:
        arity = self._arity
        idx = block_index
        self._phase = "walk"
        nodes = [(0, idx)]
        data = [None]
        offsets = [idx % arity]
        mask = [True]
        hits = [False]
        terminator = None
        for level in range(1, self._N + 1):
            idx //= arity
            cached = self._lookup(level, idx)
            nodes.append((level, idx))
            offsets.append(idx % arity)
            if cached is not None:
                data.append(cached)
                mask.append(False)
                hits.append(True)
                terminator = level
                break
            data.append(None)
            mask.append(True)
            hits.append(False)
        self._phase = "fetch"
        for k, (level, idx) in enumerate(nodes):
            if mask[k]:
                block = self._mread(level, idx)
                data[k] = block
                if level:
                    self.sb.put((level, idx), block)
        return VerificationJob(0, nodes, data, offsets, mask, hits, terminator)

    def _verify(self, job: VerificationJob) -> None:
        self._phase = "verify"
        try:
            hashes = verify_parallel(job, self.hasher, self.root.digest, self._width)
        except IntegrityViolation:
            self.sb.drop_all()
            raise
        finally:
            self._st.hash_ops += sum(job.mask)
        if self.events is not None:
            for k, (level, idx) in enumerate(job.nodes):
                if job.mask[k]:
                    self._emit("hash", level, idx)
            self._emit("verify", job.nodes[-1][0], job.nodes[-1][1])
        return hashes

    def _ascend(self, level: int, index: int, digest: bytes, offset: int) -> None:
        """Store ``digest`` at ``offset`` of node (level, index), climbing through memory until a hit."""
        arity = self._arity
        cache = self.cache
        pending = self._pending
        while True:
            node = (level, index)
            if pending is not None and node in pending:
                pending[node] = set_slot(pending[node], offset, digest)
                if self.events is not None:
                    self._emit("cache_update", level, index, "pending")
                return
            cached = self._lookup(level, index)
            if cached is not None:
                cache.update_in_place(node, set_slot(cached, offset, digest))
                if self.events is not None:
                    self._emit("cache_update", level, index)
                return
            new = set_slot(self._mread(level, index), offset, digest)
            self._mwrite(level, index, new)
            self.sb.mirror(node, new)
            digest = self._hash(level, index, new)
            if level == self._N:
                self._set_root(digest)
                return
            offset = index % arity
            index //= arity
            level += 1

    def _write_back(self, victim: NodeId, data: bytes) -> None:
        st = self._st
        st.writeback_chains += 1
        st.dirty_writebacks += 1
        if st.max_chain_depth < 1:
            st.max_chain_depth = 1
        saved = self._open_group()
        self._phase = "wb"
        level, index = victim
        digest = self._hash(level, index, data)
        if level == self._N:
            self._set_root(digest)
        else:
            self._ascend(level + 1, index // self._arity, digest, index % self._arity)
        self._mwrite(level, index, data)
        self._phase, self._group = saved

    def _read(self, counter: int) -> int:
        job = self.build_job(counter // self._cpb)
        self._verify(job)
        self._phase = "promote"
        cache = self.cache
        for k in range(len(job.nodes) - 1, 0, -1):
            if not job.mask[k]:
                continue
            node = job.nodes[k]
            block = self.sb.pop(node)
            rec = cache.insert(node, block, False)
            if self.events is not None:
                self._emit("cache_insert", node[0], node[1])
            if rec is not None:
                self._st.evictions += 1
                if self.events is not None:
                    self._emit("evict", rec.victim.level, rec.victim.index, "dirty" if rec.dirty else "clean")
                if rec.dirty:
                    self._write_back(rec.victim, rec.data)
        return decode_counter(job.data[0], counter % self._cpb)

    def _write(self, counter: int, value: int) -> None:
        b = counter // self._cpb
        self._phase = "ctr"
        new = replace_counter(self._mread(0, b), counter % self._cpb, value)
        self._mwrite(0, b, new)
        self._phase = "update"
        digest = self._hash(0, b, new)
        self._ascend(1, b // self._arity, digest, b % self._arity)

    def _flush(self) -> None:
        records = self.cache.flush_all()
        self._pending = {rec.victim: rec.data for rec in records}
        try:
            for rec in records:
                data = self._pending.pop(rec.victim)
                self._write_back(rec.victim, data)
        finally:
            self._pending = None


_CLASSES = {EAGER: EagerController, LAZY: LazyController, HMT: HmtController, INSECURE: InsecureController}


def make_controller(
    policy: str,
    geometry: TreeGeometry,
    memory: MainMemory,
    root: RootRegister,
    cache_config: Optional[CacheConfig],
    hasher: Optional[Hasher] = None,
    record_events: bool = False,
) -> Controller:
    try:
        cls = _CLASSES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}") from None
    cache = None
    if cache_config is not None and policy != INSECURE:
        cache = MetadataCache(cache_config, geometry)
    return cls(geometry, memory, root, cache, hasher, record_events)
