"""Untrusted main memory with traffic accounting and an adversary interface."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .merkle import NodeId, TreeGeometry


@dataclass
class MemStats:
    reads_per_level: list[int]
    writes_per_level: list[int]

    @classmethod
    def zeros(cls, levels: int) -> "MemStats":
        return cls([0] * (levels + 1), [0] * (levels + 1))

    @property
    def reads(self) -> int:
        return sum(self.reads_per_level)

    @property
    def writes(self) -> int:
        return sum(self.writes_per_level)


@dataclass(frozen=True)
class Replay:
    target: NodeId
    snapshot_id: int


@dataclass(frozen=True)
class Spoof:
    target: NodeId
    data: bytes


@dataclass(frozen=True)
class Splice:
    target: NodeId
    source: NodeId


TamperAction = Union[Replay, Spoof, Splice]


class InvalidTamper(ValueError):
    pass


class MainMemory:
    """Per-level block store for counter blocks (level 0) and BMT nodes (1..N)."""

    def __init__(self, geometry: TreeGeometry, regions: list[list[bytes]]):
        if len(regions) != geometry.levels + 1:
            raise ValueError("need one region per level 0..N")
        for level, region in enumerate(regions):
            if len(region) != geometry.nodes_at(level):
                raise ValueError(f"region {level} has {len(region)} blocks")
            for block in region:
                if len(block) != geometry.node_size:
                    raise ValueError("block size mismatch")
        self.geometry = geometry
        self.regions = regions
        self.stats = MemStats.zeros(geometry.levels)
        self._snapshots: dict[int, tuple[NodeId, bytes]] = {}
        self._next_snapshot = 0

    def _check(self, node) -> None:
        level, index = node
        if not 0 <= level <= self.geometry.levels:
            raise IndexError(f"level {level} is not stored in memory")
        if not 0 <= index < len(self.regions[level]):
            raise IndexError(f"index {index} out of range at level {level}")

    def read_block(self, node) -> bytes:
        level, index = node
        if level < 0 or index < 0:
            self._check(node)
        try:
            block = self.regions[level][index]
        except IndexError:
            self._check(node)
            raise
        self.stats.reads_per_level[level] += 1
        return block

    def write_block(self, node, block: bytes) -> None:
        self._check(node)
        if len(block) != self.geometry.node_size:
            raise ValueError(f"block must be {self.geometry.node_size} bytes")
        self.stats.writes_per_level[node[0]] += 1
        self.regions[node[0]][node[1]] = bytes(block)

    def peek(self, node) -> bytes:
        """Read without counting traffic (oracles and the adversary use this)."""
        self._check(node)
        return self.regions[node[0]][node[1]]

    def poke(self, node, block: bytes) -> None:
        self._check(node)
        if len(block) != self.geometry.node_size:
            raise ValueError(f"block must be {self.geometry.node_size} bytes")
        self.regions[node[0]][node[1]] = bytes(block)

    def snapshot(self, node) -> int:
        self._check(node)
        sid = self._next_snapshot
        self._next_snapshot += 1
        self._snapshots[sid] = (NodeId(*node), self.regions[node[0]][node[1]])
        return sid

    def restore_snapshot(self, snapshot_id: int) -> None:
        try:
            node, block = self._snapshots[snapshot_id]
        except KeyError:
            raise KeyError(f"unknown snapshot {snapshot_id}") from None
        self.regions[node.level][node.index] = block

    def apply_tamper(self, action: TamperAction) -> None:
        if isinstance(action, Replay):
            entry = self._snapshots.get(action.snapshot_id)
            if entry is None:
                raise InvalidTamper(f"unknown snapshot {action.snapshot_id}")
            if entry[0] != tuple(action.target):
                raise InvalidTamper("snapshot was taken of a different node")
            self.restore_snapshot(action.snapshot_id)
        elif isinstance(action, Spoof):
            self.poke(action.target, action.data)
        elif isinstance(action, Splice):
            if tuple(action.source) == tuple(action.target):
                raise InvalidTamper("splice source and target must differ")
            self.poke(action.target, self.peek(action.source))
        else:
            raise InvalidTamper(f"unknown tamper action {action!r}")

    def image(self) -> list[list[bytes]]:
        return [list(region) for region in self.regions]

    def copy(self) -> "MainMemory":
        return MainMemory(self.geometry, self.image())

    def dump(self, path: Path | str) -> None:
        """Write the image as raw blocks, level 0 first."""
        Path(path).write_bytes(b"".join(b"".join(region) for region in self.regions))

    @classmethod
    def load(cls, path: Path | str, geometry: TreeGeometry) -> "MainMemory":
        raw = Path(path).read_bytes()
        size = geometry.node_size
        expected = geometry.total_nodes() * size
        if len(raw) != expected:
            raise ValueError(f"image is {len(raw)} bytes, expected {expected}")
        regions = []
        pos = 0
        for level in range(geometry.levels + 1):
            region = []
            for _ in range(geometry.nodes_at(level)):
                region.append(raw[pos : pos + size])
                pos += size
            regions.append(region)
        return cls(geometry, regions)
