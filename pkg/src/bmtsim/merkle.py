"""Tree geometry, node arithmetic, digests and tree construction.

Levels are numbered from the leaves up: level 0 holds the counter blocks,
levels 1..N are the BMT levels and level N+1 is the root.  Level N always has
exactly one node; the root register stores that node's digest.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, NamedTuple, Sequence

if TYPE_CHECKING:
    from .memory import MainMemory

NodeBlock = bytes
Digest = bytes
Hasher = Callable[[int, int, bytes], bytes]

COUNTER_BYTES = 8
_U64 = struct.Struct("<Q")
_POSITION = struct.Struct("<QQ")


class NoParent(ValueError):
    """Raised when asking for the parent of the root."""


class NodeId(NamedTuple):
    level: int
    index: int


@dataclass(frozen=True)
class TreeGeometry:
    arity: int = 8
    levels: int = 3
    node_size: int = 64
    counter_blocks: int | None = None
    level_sizes: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.arity < 2:
            raise ValueError("arity must be >= 2")
        if self.node_size % self.arity:
            raise ValueError("node_size must be a multiple of arity")
        if self.node_size % COUNTER_BYTES:
            raise ValueError("node_size must hold whole 64-bit counters")
        full = self.arity**self.levels
        blocks = full if self.counter_blocks is None else self.counter_blocks
        if not 1 <= blocks <= full:
            raise ValueError(f"counter_blocks must be in [1, {full}], got {blocks}")
        object.__setattr__(self, "counter_blocks", blocks)
        sizes = []
        for level in range(self.levels + 1):
            span = self.arity**level
            sizes.append(-(-blocks // span))
        object.__setattr__(self, "level_sizes", tuple(sizes))

    @property
    def digest_size(self) -> int:
        return self.node_size // self.arity

    @property
    def counters_per_block(self) -> int:
        return self.node_size // COUNTER_BYTES

    @property
    def num_counters(self) -> int:
        return self.counter_blocks * self.counters_per_block

    @property
    def root_level(self) -> int:
        return self.levels + 1

    def nodes_at(self, level: int) -> int:
        if level == self.levels + 1:
            return 1
        return self.level_sizes[level]

    def check(self, node: NodeId) -> None:
        level, index = node
        if not 0 <= level <= self.levels + 1:
            raise IndexError(f"level {level} outside 0..{self.levels + 1}")
        if not 0 <= index < self.nodes_at(level):
            raise IndexError(f"index {index} outside level {level} (size {self.nodes_at(level)})")

    def total_nodes(self) -> int:
        return sum(self.level_sizes)


def parent_of(node: NodeId, geometry: TreeGeometry) -> NodeId:
    geometry.check(node)
    if node.level > geometry.levels:
        raise NoParent(f"{node} is the root")
    return NodeId(node.level + 1, node.index // geometry.arity)


def child_offset(node: NodeId, geometry: TreeGeometry) -> int:
    """Digest-slot position of ``node`` inside its parent."""
    geometry.check(node)
    if node.level > geometry.levels:
        raise NoParent(f"{node} is the root")
    return node.index % geometry.arity


def path_to_root(block_index: int, geometry: TreeGeometry) -> list[tuple[NodeId, int]]:
    """Nodes from counter block ``block_index`` up to the root's child.

    Each entry pairs the node with its slot offset in the parent.
    """
    if not 0 <= block_index < geometry.counter_blocks:
        raise IndexError(f"counter block {block_index} out of range")
    path = []
    index = block_index
    for level in range(geometry.levels + 1):
        path.append((NodeId(level, index), index % geometry.arity))
        index //= geometry.arity
    return path


class Blake2bHasher:
    """Keyed BLAKE2b over ``pack('<QQ', level, index) + data``, truncated to the digest width.

    Prefixing the node position makes a block copied to a different position
    hash differently, which is what catches splicing.
    """

    def __init__(self, key: bytes = b"bmtsim", digest_size: int = 8):
        if len(key) > hashlib.blake2b.MAX_KEY_SIZE:
            raise ValueError("key too long for BLAKE2b")
        self.key = bytes(key)
        self.digest_size = digest_size
        # the keyed state is copied per call instead of re-keying each time
        self._base = hashlib.blake2b(digest_size=digest_size, key=self.key)

    def __call__(self, level: int, index: int, data: bytes) -> bytes:
        h = self._base.copy()
        h.update(_POSITION.pack(level, index) + data)
        return h.digest()


def digest_of(block: NodeBlock, node: NodeId, key: bytes, digest_size: int = 8) -> Digest:
    return Blake2bHasher(key, digest_size)(node.level, node.index, block)


class RootRegister:
    """On-chip root digest. Never stored in memory or cache."""

    __slots__ = ("digest",)

    def __init__(self, digest: Digest):
        self.digest = digest

    def __repr__(self) -> str:
        return f"RootRegister({self.digest.hex()})"


def get_slot(block: bytes, offset: int, width: int) -> bytes:
    start = offset * width
    return block[start : start + width]


def set_slot(block: bytes, offset: int, value: bytes) -> bytes:
    start = offset * len(value)
    return block[:start] + value + block[start + len(value) :]


def encode_counters(values: Sequence[int], geometry: TreeGeometry) -> NodeBlock:
    per = geometry.counters_per_block
    if len(values) > per:
        raise ValueError(f"at most {per} counters per block")
    padded = list(values) + [0] * (per - len(values))
    return struct.pack(f"<{per}Q", *padded)


def decode_counter(block: NodeBlock, slot: int) -> int:
    return _U64.unpack_from(block, slot * COUNTER_BYTES)[0]


def replace_counter(block: NodeBlock, slot: int, value: int) -> NodeBlock:
    start = slot * COUNTER_BYTES
    return block[:start] + _U64.pack(value & 0xFFFFFFFFFFFFFFFF) + block[start + COUNTER_BYTES :]


def build_tree(
    initial_counters: Sequence[int],
    geometry: TreeGeometry,
    key: bytes = b"bmtsim",
    hasher: Hasher | None = None,
) -> tuple["MainMemory", RootRegister]:
    """Lay out a consistent memory image for ``initial_counters``.

    Missing counters are zero; slots for children beyond a partial tree are
    zero-filled.
    """
    from .memory import MainMemory

    if len(initial_counters) > geometry.num_counters:
        raise ValueError(
            f"{len(initial_counters)} counters exceed capacity {geometry.num_counters}"
        )
    hasher = hasher or Blake2bHasher(key, geometry.digest_size)
    per = geometry.counters_per_block
    counters = list(initial_counters)
    regions: list[list[bytes]] = []
    leaves = []
    for b in range(geometry.counter_blocks):
        leaves.append(encode_counters(counters[b * per : (b + 1) * per], geometry))
    regions.append(leaves)

    empty_slot = bytes(geometry.digest_size)
    below = leaves
    for level in range(1, geometry.levels + 1):
        child_level = level - 1
        digests = [hasher(child_level, i, blk) for i, blk in enumerate(below)]
        nodes = []
        for idx in range(geometry.nodes_at(level)):
            chunk = digests[idx * geometry.arity : (idx + 1) * geometry.arity]
            chunk += [empty_slot] * (geometry.arity - len(chunk))
            nodes.append(b"".join(chunk))
        regions.append(nodes)
        below = nodes
    root = RootRegister(hasher(geometry.levels, 0, below[0]))
    return MainMemory(geometry, regions), root


def check_consistency(
    memory: "MainMemory", root: RootRegister, geometry: TreeGeometry, hasher: Hasher
) -> list[NodeId]:
    """Recompute every digest from scratch; return the nodes whose parent slot disagrees.

    Reads go through ``peek`` so the traffic counters are left alone.
    """
    bad = []
    width = geometry.digest_size
    empty = bytes(width)
    for level in range(geometry.levels + 1):
        for idx in range(geometry.nodes_at(level)):
            digest = hasher(level, idx, memory.peek((level, idx)))
            if level == geometry.levels:
                expected = root.digest
            else:
                parent = memory.peek((level + 1, idx // geometry.arity))
                expected = get_slot(parent, idx % geometry.arity, width)
            if digest != expected:
                bad.append(NodeId(level, idx))
    for level in range(1, geometry.levels + 1):
        children = geometry.nodes_at(level - 1)
        for idx in range(geometry.nodes_at(level)):
            block = memory.peek((level, idx))
            for off in range(geometry.arity):
                if idx * geometry.arity + off >= children and get_slot(block, off, width) != empty:
                    bad.append(NodeId(level, idx))
                    break
    return bad
