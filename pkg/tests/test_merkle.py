import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bmtsim.controllers import IntegrityViolation, make_controller
from bmtsim.merkle import (
    Blake2bHasher,
    NodeId,
    NoParent,
    TreeGeometry,
    build_tree,
    check_consistency,
    child_offset,
    decode_counter,
    digest_of,
    encode_counters,
    get_slot,
    parent_of,
    path_to_root,
    replace_counter,
)

KEY = b"bmtsim"


def full_layout(arity, levels):
    """Explicit parent table for a full tree, built by enumerating children."""
    parents = {}
    for level in range(1, levels + 1):
        for p in range(arity ** (levels - level)):
            for k in range(arity):
                parents[(level - 1, p * arity + k)] = ((level, p), k)
    return parents


def digits(n, base, count):
    out = []
    for _ in range(count):
        out.append(n % base)
        n //= base
    return out


# -- geometry ---------------------------------------------------------------


def test_default_geometry():
    g = TreeGeometry()
    assert (g.arity, g.levels, g.node_size) == (8, 3, 64)
    assert g.digest_size == 8
    assert g.arity * g.digest_size == g.node_size
    assert g.counter_blocks == 512
    assert g.level_sizes == (512, 64, 8, 1)
    assert g.num_counters == 4096


@pytest.mark.parametrize(
    "kwargs",
    [dict(levels=0), dict(arity=1), dict(counter_blocks=513), dict(counter_blocks=0), dict(arity=7)],
)
def test_geometry_rejects_inconsistent_sizes(kwargs):
    with pytest.raises(ValueError):
        TreeGeometry(**kwargs)


def test_partial_geometry_rounds_level_sizes_up():
    g = TreeGeometry(levels=3, counter_blocks=100)
    assert g.level_sizes == (100, 13, 2, 1)


# -- index arithmetic -----------------------------------------------------------


@pytest.mark.parametrize(
    "node, parent",
    [((0, 0), (1, 0)), ((0, 9), (1, 1)), ((1, 63), (2, 7))],
)
def test_parent_of_examples(node, parent):
    assert parent_of(NodeId(*node), TreeGeometry()) == parent


def test_parent_of_matches_enumerated_layout():
    g = TreeGeometry()
    for child, (parent, offset) in full_layout(8, 3).items():
        assert parent_of(NodeId(*child), g) == parent
        assert child_offset(NodeId(*child), g) == offset


def test_parent_of_root_raises():
    g = TreeGeometry()
    with pytest.raises(NoParent):
        parent_of(NodeId(4, 0), g)
    with pytest.raises(IndexError):
        parent_of(NodeId(1, 64), g)


@pytest.mark.parametrize("index, offset", [(0, 0), (9, 1), (63, 7)])
def test_child_offset_examples(index, offset):
    assert child_offset(NodeId(1, index), TreeGeometry()) == offset


def test_path_to_root_leftmost():
    assert path_to_root(0, TreeGeometry()) == [
        (NodeId(0, 0), 0),
        (NodeId(1, 0), 0),
        (NodeId(2, 0), 0),
        (NodeId(3, 0), 0),
    ]


def test_path_to_root_block_9():
    assert path_to_root(9, TreeGeometry()) == [
        (NodeId(0, 9), 1),
        (NodeId(1, 1), 1),
        (NodeId(2, 0), 0),
        (NodeId(3, 0), 0),
    ]


def test_path_to_root_rightmost():
    path = path_to_root(511, TreeGeometry())
    # the single level-N node sits at offset 0 of the root register
    assert [off for _, off in path] == [7, 7, 7, 0]
    assert [n.index for n, _ in path] == [511, 63, 7, 0]


def test_path_to_root_out_of_range():
    with pytest.raises(IndexError):
        path_to_root(512, TreeGeometry())
    with pytest.raises(IndexError):
        path_to_root(-1, TreeGeometry())


@given(st.integers(1, 4), st.sampled_from([2, 4, 8]), st.data())
def test_path_offsets_are_base_arity_digits(levels, arity, data):
    g = TreeGeometry(arity=arity, levels=levels)
    block = data.draw(st.integers(0, g.counter_blocks - 1))
    path = path_to_root(block, g)
    assert len(path) == levels + 1
    assert [n.level for n, _ in path] == list(range(levels + 1))
    assert [off for _, off in path] == digits(block, arity, levels + 1)


@given(st.integers(1, 4), st.data())
def test_parent_chain_reaches_root_in_n_plus_1_steps(levels, data):
    g = TreeGeometry(levels=levels)
    node = NodeId(0, data.draw(st.integers(0, g.counter_blocks - 1)))
    steps = 0
    while node.level <= g.levels:
        node = parent_of(node, g)
        steps += 1
    assert steps == levels + 1
    assert node == NodeId(levels + 1, 0)


# -- digests ------------------------------------------------------------------------


def test_digest_is_deterministic():
    block = bytes(range(64))
    assert digest_of(block, NodeId(1, 3), KEY) == digest_of(block, NodeId(1, 3), KEY)
    assert len(digest_of(block, NodeId(1, 3), KEY)) == 8


def test_single_bit_flips_change_digest():
    rng = random.Random(11)
    hasher = Blake2bHasher(KEY)
    for _ in range(10_000):
        block = bytearray(rng.randbytes(64))
        level, index = rng.randrange(4), rng.randrange(512)
        before = hasher(level, index, bytes(block))
        bit = rng.randrange(512)
        block[bit // 8] ^= 1 << (bit % 8)
        assert hasher(level, index, bytes(block)) != before


def test_digest_binds_position():
    rng = random.Random(12)
    hasher = Blake2bHasher(KEY)
    for _ in range(10_000):
        block = rng.randbytes(64)
        a = (rng.randrange(4), rng.randrange(512))
        b = (rng.randrange(4), rng.randrange(512))
        if a != b:
            assert hasher(*a, block) != hasher(*b, block)


def test_digest_key_matters():
    block = bytes(64)
    assert digest_of(block, NodeId(0, 0), b"a") != digest_of(block, NodeId(0, 0), b"b")


def test_no_collisions_in_100k_random_inputs():
    rng = random.Random(13)
    hasher = Blake2bHasher(KEY)
    seen = set()
    for _ in range(100_000):
        seen.add(hasher(rng.randrange(4), rng.randrange(1 << 20), rng.randbytes(64)))
    assert len(seen) == 100_000


# -- counter blocks -------------------------------------------------------------------


def test_counter_block_layout_little_endian():
    g = TreeGeometry()
    block = encode_counters([1, 2, 3], g)
    assert len(block) == 64
    assert block[:8] == (1).to_bytes(8, "little")
    assert [decode_counter(block, i) for i in range(8)] == [1, 2, 3, 0, 0, 0, 0, 0]
    block = replace_counter(block, 7, 2**64 - 1)
    assert decode_counter(block, 7) == 2**64 - 1
    assert decode_counter(block, 0) == 1


# -- tree construction ------------------------------------------------------------------


def test_build_all_zero_tree():
    g = TreeGeometry()
    memory, root = build_tree([], g)
    leaves = memory.image()[0]
    assert len(set(leaves)) == 1
    node = memory.peek((1, 0))
    slots = [get_slot(node, i, 8) for i in range(8)]
    assert len(set(slots)) == 8
    assert root.digest == Blake2bHasher(KEY)(3, 0, memory.peek((3, 0)))


def test_fresh_tree_is_consistent_and_every_counter_verifies():
    g = TreeGeometry()
    rng = random.Random(14)
    values = [rng.getrandbits(64) for _ in range(g.num_counters)]
    memory, root = build_tree(values, g)
    assert check_consistency(memory, root, g, Blake2bHasher(KEY)) == []
    ctl = make_controller("eager", g, memory, root, None)
    for c in range(g.num_counters):
        assert ctl.read_counter(c) == values[c]


def test_partial_tree_zero_fills_missing_slots():
    g = TreeGeometry(levels=3, counter_blocks=100)
    memory, root = build_tree(list(range(800)), g)
    assert check_consistency(memory, root, g, Blake2bHasher(KEY)) == []
    last = memory.peek((1, 12))
    assert get_slot(last, 4, 8) == bytes(8)
    assert get_slot(last, 3, 8) != bytes(8)


def test_build_tree_overflow():
    g = TreeGeometry(levels=1)
    with pytest.raises(ValueError):
        build_tree([0] * 65, g)


def test_byte_flip_in_any_level2_node_is_caught():
    g = TreeGeometry()
    base, root = build_tree([], g)
    hasher = Blake2bHasher(KEY)
    for idx in range(g.nodes_at(2)):
        for pos in range(0, 64, 7):
            memory = base.copy()
            block = bytearray(memory.peek((2, idx)))
            block[pos] ^= 0x5A
            memory.poke((2, idx), bytes(block))
            assert NodeId(2, idx) in check_consistency(memory, root, g, hasher)
            ctl = make_controller("eager", g, memory, root, None)
            counter = idx * 64 * 8 + pos % 64
            with pytest.raises(IntegrityViolation) as info:
                ctl.read_counter(counter)
            assert info.value.level == 2
