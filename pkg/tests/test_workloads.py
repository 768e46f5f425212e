import pytest

from bmtsim import CacheConfig, Request, TreeGeometry, build_tree, make_controller
from bmtsim.workloads import (
    RstSpec,
    gen_bound_stress,
    gen_fuzz_trace,
    gen_rst_trace,
    load_trace,
    make_rng,
    replay_stress,
    save_trace,
)

G = TreeGeometry()
DEFAULT_CACHE = CacheConfig.split((1024, 448, 64))


def run(policy, trace, cache=DEFAULT_CACHE):
    memory, root = build_tree([], G)
    ctl = make_controller(policy, G, memory, root, cache)
    stats = []
    for req in trace:
        ctl.execute(req)
        stats.append(ctl.last)
    return ctl, stats


def test_stride_one_hits_level1_after_first():
    # bytes_per_counter=1 makes each step the next counter in the same block
    trace = gen_rst_trace(RstSpec(stride=1, count=8, bytes_per_counter=1, address_space=4096), G)
    assert [r.counter for r in trace] == list(range(8))
    ctl, _ = run("lazy", trace)
    assert ctl.cache.hits[1] == 7
    assert ctl.cache.misses[1] == 1


def test_stride_one_default_units_stays_on_one_counter():
    trace = gen_rst_trace(RstSpec(stride=1, count=8), G)
    assert {r.counter for r in trace} == {0}


def test_wide_stride_misses_levels_below_the_top():
    span = G.arity ** (G.levels - 1) * G.counters_per_block * 512
    assert span == 1 << 18
    trace = gen_rst_trace(RstSpec(stride=span, count=64), G)
    ctl, _ = run("hmt", trace)
    for level in range(1, G.levels):
        assert ctl.cache.hits[level] == 0
    # the single top-level node stays resident after the first request
    assert ctl.cache.evictions[G.levels] == 0


@pytest.mark.parametrize("stride", [1 << k for k in range(0, 17)])
def test_larger_strides_never_raise_level1_hit_rate(stride):
    trace = gen_rst_trace(RstSpec(stride=stride, count=2000), G)
    wider = gen_rst_trace(RstSpec(stride=stride * 2, count=2000), G)
    a, _ = run("lazy", trace)
    b, _ = run("lazy", wider)
    assert b.cache.hits[1] <= a.cache.hits[1]


def test_empty_trace():
    assert gen_rst_trace(RstSpec(stride=64, count=0), G) == []


def test_rst_is_deterministic_and_seeded():
    spec = RstSpec(stride=4096, count=500, read_fraction=0.5)
    assert gen_rst_trace(spec, G, seed=9) == gen_rst_trace(spec, G, seed=9)
    assert gen_rst_trace(spec, G, seed=9) != gen_rst_trace(spec, G, seed=10)
    kinds = {r.kind for r in gen_rst_trace(spec, G, seed=9)}
    assert kinds == {"read", "write"}


@pytest.mark.parametrize(
    "spec",
    [RstSpec(stride=0, count=1), RstSpec(stride=1, count=-1), RstSpec(stride=1, count=1, read_fraction=1.5),
     RstSpec(stride=1, count=1, address_space=1 << 30)],
)
def test_rst_validation(spec):
    with pytest.raises(ValueError):
        gen_rst_trace(spec, G)


def test_fuzz_trace_pool_and_determinism():
    a = gen_fuzz_trace(G, 1000, make_rng(1), pool=4)
    assert a == gen_fuzz_trace(G, 1000, make_rng(1), pool=4)
    assert len({r.counter // 8 for r in a}) <= 4


def test_trace_round_trip(tmp_path):
    trace = gen_fuzz_trace(G, 200, make_rng(2)) + [Request.read(3, address=1536)]
    path = tmp_path / "t.csv"
    save_trace(path, trace)
    assert path.read_text().splitlines()[0] == "kind,counter,value,address"
    assert load_trace(path) == trace


def test_trace_load_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("kind,counter,value,address\nread,1,0,-1\nfetch,2,0,-1\n")
    with pytest.raises(ValueError, match=":3:"):
        load_trace(path)
    path.write_text("kind,counter,value,address\nread,x,0,-1\n")
    with pytest.raises(ValueError, match=":2:"):
        load_trace(path)


def test_lazy_unified_cascade_exceeds_split_bound():
    g = TreeGeometry(levels=5)
    cfg = CacheConfig.unified(16 * 1024, ways=1)
    stress = gen_bound_stress("lazy", g, cfg)
    assert stress.method == "cascade"
    assert stress.achieved > 2 ** (g.levels - 1) - 1
    assert replay_stress("lazy", g, cfg, stress.requests)[stress.target] == stress.achieved


def test_hmt_search_reaches_n_on_unified_cache():
    cfg = CacheConfig.unified(64 * 3, ways=1)
    stress = gen_bound_stress("hmt", G, cfg, seed=0, rounds=4, length=2000, pool=8, write_fraction=0.5)
    assert stress.achieved == G.levels
    assert stress.requests[stress.target].is_read


def test_cascade_needs_direct_mapped_unified_cache():
    from bmtsim.workloads import gen_lazy_cascade

    with pytest.raises(ValueError):
        gen_lazy_cascade(G, DEFAULT_CACHE)
