"""Set-associative write-back metadata cache, unified or split per tree level."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional, Sequence

from .merkle import NodeId, TreeGeometry


class EvictionRecord(NamedTuple):
    victim: NodeId
    data: bytes
    dirty: bool


class CacheLevelError(ValueError):
    """Raised for nodes outside the cacheable levels 1..N."""


@dataclass(frozen=True)
class CacheConfig:
    mode: str = "split"
    total_bytes: int = 0
    per_level_bytes: tuple[int, ...] = (1024, 448, 64)
    ways: int = 4
    line_size: int = 64

    @classmethod
    def unified(cls, total_bytes: int, ways: int = 4, line_size: int = 64) -> "CacheConfig":
        return cls("unified", total_bytes, (), ways, line_size)

    @classmethod
    def split(cls, per_level_bytes: Sequence[int], ways: int = 4, line_size: int = 64) -> "CacheConfig":
        return cls("split", 0, tuple(per_level_bytes), ways, line_size)

    def validate(self, geometry: TreeGeometry) -> None:
        if self.mode not in ("unified", "split"):
            raise ValueError(f"unknown cache mode {self.mode!r}")
        if self.line_size != geometry.node_size:
            raise ValueError("line_size must equal node_size")
        if self.ways < 1:
            raise ValueError("ways must be >= 1")
        if self.mode == "split":
            if len(self.per_level_bytes) != geometry.levels:
                raise ValueError(
                    f"split cache needs {geometry.levels} sizes, got {len(self.per_level_bytes)}"
                )
            sizes = self.per_level_bytes
        else:
            sizes = (self.total_bytes,)
        for size in sizes:
            if size < self.line_size:
                raise ValueError(f"cache of {size} bytes holds no {self.line_size}-byte line")

    def lines(self) -> list[int]:
        sizes = self.per_level_bytes if self.mode == "split" else (self.total_bytes,)
        return [size // self.line_size for size in sizes]


class SetAssocCache:
    """One physical cache: LRU sets keyed by NodeId.

    Each set is a dict in recency order (oldest first).  A cache with fewer
    lines than ways, or a line count not divisible by ways, is fully
    associative.
    """

    def __init__(self, lines: int, ways: int):
        if lines < 1:
            raise ValueError("cache needs at least one line")
        if lines < ways or lines % ways:
            self.num_sets, self.ways = 1, lines
        else:
            self.num_sets, self.ways = lines // ways, ways
        self.lines = lines
        self.sets: list[dict] = [{} for _ in range(self.num_sets)]

    def set_of(self, node) -> dict:
        return self.sets[node[1] % self.num_sets]

    def __len__(self) -> int:
        return sum(len(s) for s in self.sets)

    def __iter__(self) -> Iterator[tuple[NodeId, bytes, bool]]:
        for s in self.sets:
            for key, line in s.items():
                yield key, line[0], line[1]


class MetadataCache:
    """Routes nodes to one unified cache or to one cache per level, and keeps stats.

    Stats are lists indexed by level (index 0 unused).
    """

    def __init__(self, config: CacheConfig, geometry: TreeGeometry):
        config.validate(geometry)
        self.config = config
        self.geometry = geometry
        levels = geometry.levels
        lines = config.lines()
        if config.mode == "split":
            self.caches = [SetAssocCache(n, config.ways) for n in lines]
            self._route = [None] + self.caches
        else:
            shared = SetAssocCache(lines[0], config.ways)
            self.caches = [shared]
            self._route = [None] + [shared] * levels
        self.split = config.mode == "split"
        self.hits = [0] * (levels + 1)
        self.misses = [0] * (levels + 1)
        self.insertions = [0] * (levels + 1)
        self.evictions = [0] * (levels + 1)
        self.dirty_evictions = [0] * (levels + 1)

    def _cache(self, node) -> SetAssocCache:
        level = node[0]
        if 1 <= level < len(self._route):
            return self._route[level]
        raise CacheLevelError(f"level {level} is not cacheable")

    def lookup(self, node) -> Optional[bytes]:
        """Return the cached block and refresh its recency, or None on a miss."""
        cache = self._cache(node)
        s = cache.sets[node[1] % cache.num_sets]
        line = s.pop(node, None)
        if line is None:
            self.misses[node[0]] += 1
            return None
        s[node] = line
        self.hits[node[0]] += 1
        return line[0]

    def peek(self, node) -> Optional[bytes]:
        """Cached block without touching recency or stats."""
        cache = self._cache(node)
        line = cache.sets[node[1] % cache.num_sets].get(node)
        return None if line is None else line[0]

    def contains(self, node) -> bool:
        cache = self._cache(node)
        return node in cache.sets[node[1] % cache.num_sets]

    def is_dirty(self, node) -> bool:
        cache = self._cache(node)
        line = cache.sets[node[1] % cache.num_sets].get(node)
        return line is not None and line[1]

    def insert(self, node, data: bytes, dirty: bool = False) -> Optional[EvictionRecord]:
        """Make ``node`` resident as most recent; return the LRU victim if the set was full.

        Re-inserting a resident node replaces its data and ORs the dirty bit.
        """
        cache = self._cache(node)
        s = cache.sets[node[1] % cache.num_sets]
        old = s.pop(node, None)
        if old is not None:
            s[node] = [data, dirty or old[1]]
            return None
        self.insertions[node[0]] += 1
        record = None
        if len(s) >= cache.ways:
            victim = next(iter(s))
            vdata, vdirty = s.pop(victim)
            self.evictions[victim[0]] += 1
            if vdirty:
                self.dirty_evictions[victim[0]] += 1
            record = EvictionRecord(NodeId(*victim), vdata, vdirty)
        s[node] = [data, dirty]
        return record

    def update_in_place(self, node, data: bytes) -> bool:
        """Overwrite a resident line and mark it dirty; never allocates.

        The line becomes most recently used.
        """
        cache = self._cache(node)
        s = cache.sets[node[1] % cache.num_sets]
        line = s.pop(node, None)
        if line is None:
            return False
        line[0] = data
        line[1] = True
        s[node] = line
        return True

    def invalidate(self, node) -> Optional[EvictionRecord]:
        cache = self._cache(node)
        line = cache.sets[node[1] % cache.num_sets].pop(node, None)
        if line is None:
            return None
        return EvictionRecord(NodeId(*node), line[0], line[1])

    def flush_all(self) -> list[EvictionRecord]:
        """Empty every cache; return the dirty lines ordered by (level, index)."""
        records = []
        for cache in self.caches:
            for s in cache.sets:
                for node, (data, dirty) in s.items():
                    if dirty:
                        records.append(EvictionRecord(NodeId(*node), data, True))
                s.clear()
        records.sort(key=lambda r: (r.victim.level, r.victim.index))
        return records

    def clear(self) -> None:
        for cache in self.caches:
            for s in cache.sets:
                s.clear()

    def resident(self) -> list[NodeId]:
        out = []
        for cache in self.caches:
            for s in cache.sets:
                out.extend(NodeId(*k) for k in s)
        return sorted(out)

    def recency(self, node) -> list[NodeId]:
        """Keys of the set ``node`` maps to, least recent first."""
        return [NodeId(*k) for k in self._cache(node).set_of(node)]

    def stats(self) -> dict:
        return {
            "hits": sum(self.hits),
            "misses": sum(self.misses),
            "insertions": sum(self.insertions),
            "evictions": sum(self.evictions),
            "dirty_evictions": sum(self.dirty_evictions),
            "per_level": {
                name: list(getattr(self, name)[1:])
                for name in ("hits", "misses", "insertions", "evictions", "dirty_evictions")
            },
        }
