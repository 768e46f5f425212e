import pytest
from hypothesis import given
from hypothesis import strategies as st

from bmtsim import CacheConfig, IntegrityViolation, make_controller
from bmtsim.memory import InvalidTamper, MainMemory, Replay, Splice, Spoof
from bmtsim.merkle import NodeId, TreeGeometry, build_tree
from bmtsim.workloads import gen_fuzz_trace, make_rng


@pytest.fixture
def tree():
    g = TreeGeometry()
    memory, root = build_tree(list(range(100)), g)
    return g, memory, root


def test_read_returns_built_content_and_counts(tree):
    g, memory, _ = tree
    first = memory.read_block((1, 0))
    assert first == memory.peek((1, 0))
    assert memory.read_block((1, 0)) == first
    assert memory.stats.reads == 2
    assert memory.stats.reads_per_level == [0, 2, 0, 0]


def test_write_then_read(tree):
    _, memory, _ = tree
    memory.write_block((0, 3), b"\x01" * 64)
    assert memory.read_block((0, 3)) == b"\x01" * 64
    assert memory.stats.writes == 1
    assert memory.stats.writes_per_level[0] == 1


@pytest.mark.parametrize("node", [(0, 512), (1, 64), (4, 0), (-1, 0), (0, -1)])
def test_out_of_range_blocks(tree, node):
    _, memory, _ = tree
    with pytest.raises(IndexError):
        memory.read_block(node)
    with pytest.raises(IndexError):
        memory.write_block(node, bytes(64))


def test_block_size_enforced(tree):
    _, memory, _ = tree
    with pytest.raises(ValueError):
        memory.write_block((0, 0), bytes(63))


def test_snapshot_restore(tree):
    _, memory, _ = tree
    old = memory.peek((2, 1))
    sid = memory.snapshot((2, 1))
    memory.write_block((2, 1), bytes(64))
    before = (memory.stats.reads, memory.stats.writes)
    memory.restore_snapshot(sid)
    assert memory.peek((2, 1)) == old
    assert (memory.stats.reads, memory.stats.writes) == before
    with pytest.raises(KeyError):
        memory.restore_snapshot(999)


def test_adversary_leaves_stats_alone(tree):
    _, memory, _ = tree
    sid = memory.snapshot((1, 1))
    memory.apply_tamper(Spoof(NodeId(1, 2), b"\xff" * 64))
    memory.apply_tamper(Splice(NodeId(1, 3), NodeId(1, 4)))
    memory.apply_tamper(Replay(NodeId(1, 1), sid))
    assert memory.stats.reads == 0 and memory.stats.writes == 0
    assert memory.peek((1, 3)) == memory.peek((1, 4))


def test_invalid_tamper_actions(tree):
    _, memory, _ = tree
    sid = memory.snapshot((1, 1))
    with pytest.raises(InvalidTamper):
        memory.apply_tamper(Replay(NodeId(1, 2), sid))
    with pytest.raises(InvalidTamper):
        memory.apply_tamper(Replay(NodeId(1, 1), 77))
    with pytest.raises(InvalidTamper):
        memory.apply_tamper(Splice(NodeId(1, 1), NodeId(1, 1)))
    with pytest.raises(InvalidTamper):
        memory.apply_tamper("spoof")


def test_noop_replay_still_verifies(tree):
    g, memory, root = tree
    sid = memory.snapshot((1, 0))
    memory.apply_tamper(Replay(NodeId(1, 0), sid))
    ctl = make_controller("lazy", g, memory, root, CacheConfig.split((1024, 448, 64)))
    assert ctl.read_counter(5) == 5


@pytest.mark.parametrize("policy", ["eager", "lazy", "hmt"])
def test_replay_of_stale_node_is_caught(policy):
    g = TreeGeometry()
    cfg = CacheConfig.split((1024, 448, 64))
    for level in range(g.levels + 1):
        memory, root = build_tree([], g)
        node = NodeId(level, 0)
        sid = memory.snapshot(node)
        ctl = make_controller(policy, g, memory, root, cfg)
        ctl.write_counter(0, 42)
        ctl.flush()
        assert memory.peek(node) != memory._snapshots[sid][1]
        memory.restore_snapshot(sid)
        ctl.reset()
        with pytest.raises(IntegrityViolation):
            ctl.read_counter(0)


def test_pairwise_splices_on_small_tree_are_caught():
    g = TreeGeometry(levels=2)
    base, root = build_tree(list(range(g.num_counters)), g)
    for level in range(g.levels):
        for target in range(g.nodes_at(level)):
            for source in range(g.nodes_at(level)):
                if source == target:
                    continue
                memory = base.copy()
                memory.apply_tamper(Splice(NodeId(level, target), NodeId(level, source)))
                ctl = make_controller("eager", g, memory, root, None)
                with pytest.raises(IntegrityViolation):
                    ctl.read_counter(target * 8 ** (level + 1))


def test_tamper_off_the_verified_path_goes_unnoticed(tree):
    g, memory, root = tree
    memory.apply_tamper(Spoof(NodeId(0, 400), b"\x00" * 64))
    ctl = make_controller("hmt", g, memory, root, CacheConfig.split((1024, 448, 64)))
    assert ctl.read_counter(9) == 9


@given(st.integers(0, 2**32))
def test_stats_match_controller_traffic(seed):
    g = TreeGeometry()
    rng = make_rng(seed)
    for policy in ("eager", "lazy", "hmt", "insecure"):
        memory, root = build_tree([], g)
        ctl = make_controller(policy, g, memory, root, CacheConfig.split((1024, 448, 64)))
        reads = writes = 0
        for req in gen_fuzz_trace(g, 40, rng, pool=6):
            ctl.execute(req)
            reads += ctl.last.mem_reads
            writes += ctl.last.mem_writes
        assert memory.stats.reads == reads
        assert memory.stats.writes == writes
        assert memory.stats.reads == sum(memory.stats.reads_per_level)


def test_dump_and_load_round_trip(tmp_path, tree):
    g, memory, _ = tree
    path = tmp_path / "image.bin"
    memory.dump(path)
    assert path.stat().st_size == g.total_nodes() * 64
    loaded = MainMemory.load(path, g)
    assert loaded.image() == memory.image()
    # level-major: the first block is counter block 0, little-endian counters
    assert path.read_bytes()[:16] == (0).to_bytes(8, "little") + (1).to_bytes(8, "little")
    with pytest.raises(ValueError):
        MainMemory.load(path, TreeGeometry(levels=2))
