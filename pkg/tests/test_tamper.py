import pytest

from bmtsim import CacheConfig, NodeId, TreeGeometry, build_tree, make_controller
from bmtsim.config import ConfigError, RunConfig
from bmtsim.tamper import TAMPER_KINDS, fetched_nodes, run_campaign

G = TreeGeometry()
DEFAULT_CACHE = CacheConfig.split((1024, 448, 64))


@pytest.mark.parametrize("policy", ["eager", "lazy", "hmt"])
def test_small_campaign_catches_everything_at_the_target(policy):
    outcomes = run_campaign(policy, G, DEFAULT_CACHE, 60, seed=1)
    assert {o.kind for o in outcomes} == set(TAMPER_KINDS)
    assert all(o.detected for o in outcomes)
    assert all(o.reported == o.target for o in outcomes)


def test_campaign_is_deterministic():
    a = run_campaign("hmt", G, DEFAULT_CACHE, 20, seed=3)
    b = run_campaign("hmt", G, DEFAULT_CACHE, 20, seed=3)
    assert [(o.kind, o.target) for o in a] == [(o.kind, o.target) for o in b]


def test_campaign_rejects_bad_input():
    with pytest.raises(ValueError):
        run_campaign("insecure", G, DEFAULT_CACHE, 1, seed=0)
    with pytest.raises(ValueError):
        run_campaign("lazy", G, DEFAULT_CACHE, 1, seed=0, kinds=("rowhammer",))


def test_fetched_nodes_stop_at_first_resident_level():
    memory, root = build_tree([], G)
    lazy = make_controller("lazy", G, memory, root, DEFAULT_CACHE)
    assert fetched_nodes(lazy, 0) == [NodeId(0, 0), NodeId(1, 0), NodeId(2, 0), NodeId(3, 0)]
    lazy.read_counter(64)
    # (2, 0) and (3, 0) are now cached; (1, 0) is not
    assert fetched_nodes(lazy, 0) == [NodeId(0, 0), NodeId(1, 0)]


def test_config_defaults_describe_the_reference_tree():
    cfg = RunConfig.load(None, [])
    assert (cfg.geometry().arity, cfg.geometry().levels) == (8, 3)
    cache = cfg.cache_config()
    assert (cache.mode, cache.per_level_bytes, cache.ways) == ("split", (1024, 448, 64), 4)
    assert cfg.latency().t_mem == 100


@pytest.mark.parametrize(
    "override",
    ["ways=3x", "policy=fast", "hit_level=mt9", "tamper_kinds=replay,melt", "cache_mode=banked", "flush=maybe"],
)
def test_config_rejects_bad_values(override):
    with pytest.raises(ConfigError):
        RunConfig.load(None, [override])
