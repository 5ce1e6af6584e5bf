# gridos/tests/test_net_model.py
import math
import random

import numpy as np
import pytest

from conftest import FIG_LINKS
from core.errors import EmptyCandidateSet, InvalidLinkMetrics, InvalidSpec, UnknownLink
from core.net_model import (LinkMetrics, NetworkTopology, RankCriterion, TopologyGenSpec,
                            estimate_bandwidth, generate_topology, nearest_peer, rank_peers,
                            transfer_latency)

NEIGHBOURS = sorted(FIG_LINKS)


def test_bandwidth_upper_bound_formula():
    link = LinkMetrics(rtt=0.02, packet_loss=0.0025, mss=1460)
    assert estimate_bandwidth(link) == pytest.approx(1460 / 0.02 / 0.05)


def test_zero_loss_uses_floor():
    link = LinkMetrics(rtt=0.01, packet_loss=0.0)
    bw = estimate_bandwidth(link, loss_floor=1e-6)
    assert math.isfinite(bw)
    assert bw == pytest.approx(1460 / 0.01 / 1e-3)


def test_bandwidth_monotone_on_random_grid():
    rng = random.Random(5)
    for _ in range(500):
        rtt = rng.uniform(0.001, 1.0)
        loss = rng.uniform(1e-5, 0.5)
        mss = rng.randint(100, 9000)
        bw = estimate_bandwidth(LinkMetrics(rtt=rtt, packet_loss=loss, mss=mss))
        assert estimate_bandwidth(LinkMetrics(rtt=rtt * 1.01, packet_loss=loss, mss=mss)) < bw
        assert estimate_bandwidth(LinkMetrics(rtt=rtt, packet_loss=loss * 1.01, mss=mss)) < bw
        assert estimate_bandwidth(LinkMetrics(rtt=rtt, packet_loss=loss, mss=mss + 1)) > bw


@pytest.mark.parametrize("rtt,loss,mss", [(0.0, 0.1, 1460), (-1.0, 0.1, 1460),
                                           (0.01, 1.5, 1460), (0.01, -0.1, 1460),
                                           (0.01, 0.1, 0)])
def test_invalid_link_metrics(rtt, loss, mss):
    with pytest.raises(InvalidLinkMetrics):
        LinkMetrics(rtt=rtt, packet_loss=loss, mss=mss)


def test_transfer_latency_adds_serialisation_time():
    link = LinkMetrics(rtt=0.04, packet_loss=0.01)
    assert transfer_latency(link, 0) == pytest.approx(0.02)
    assert transfer_latency(link, 36500) == pytest.approx(0.02 + 36500 / estimate_bandwidth(link))


def test_rank_by_rtt(star):
    assert rank_peers(0, NEIGHBOURS, star, RankCriterion.BY_RTT) == [6, 4, 2, 5, 3, 1]


def test_rank_by_bandwidth(star):
    assert rank_peers(0, NEIGHBOURS, star, RankCriterion.BY_BANDWIDTH) == [4, 6, 1, 5, 2, 3]


def test_nearest_is_highest_bandwidth_not_lowest_rtt(star):
    assert nearest_peer(0, NEIGHBOURS, star) == 4


def test_nearest_tie_breaks_on_lowest_id(uniform4):
    assert nearest_peer(1, [4, 3, 2], uniform4) == 2
    assert rank_peers(1, [4, 3, 2], uniform4) == [2, 3, 4]


@pytest.mark.parametrize("seed", range(10))
def test_rank_head_is_nearest_on_random_topologies(seed):
    topo = generate_topology(TopologyGenSpec(peers=12, model="uniform"), seed)
    rng = random.Random(seed)
    for source in topo.peers:
        others = [p for p in topo.peers if p != source]
        candidates = rng.sample(others, rng.randint(1, len(others)))
        ranked = rank_peers(source, candidates, topo, RankCriterion.BY_BANDWIDTH)
        assert ranked[0] == nearest_peer(source, candidates, topo)
        assert sorted(ranked) == sorted(candidates)


def test_empty_candidates(star):
    with pytest.raises(EmptyCandidateSet):
        nearest_peer(0, [], star)
    with pytest.raises(EmptyCandidateSet):
        rank_peers(0, [], star)


def test_unknown_link(star):
    with pytest.raises(UnknownLink):
        star.bandwidth(0, 99)


def test_topology_requires_every_pair():
    with pytest.raises(InvalidSpec):
        NetworkTopology(peers=(1, 2, 3), links={(1, 2): LinkMetrics(0.01, 0.01)})


def test_latency_same_node_is_zero(uniform4):
    assert uniform4.latency(2, 2, 10_000) == 0.0
    assert uniform4.latency(1, 2) == pytest.approx(0.01)


def test_bandwidth_matrix_symmetric(star):
    matrix, index = star.bandwidth_matrix()
    assert matrix.shape == (7, 7)
    assert np.allclose(matrix, matrix.T)
    assert np.all(np.diag(matrix) == 0)
    assert matrix[index[0], index[4]] == pytest.approx(star.bandwidth(0, 4))


@pytest.mark.parametrize("model", ["geometric", "uniform"])
def test_generate_is_deterministic(model):
    spec = TopologyGenSpec(peers=10, model=model)
    a = generate_topology(spec, seed=3)
    b = generate_topology(spec, seed=3)
    c = generate_topology(spec, seed=4)
    assert a.peers == tuple(range(1, 11))
    assert a.links == b.links
    assert a.links != c.links


def test_generated_links_respect_ranges():
    spec = TopologyGenSpec(peers=8, rtt_range=(0.01, 0.1), loss_range=(0.001, 0.02))
    topo = generate_topology(spec, seed=0)
    for link in topo.links.values():
        assert 0.01 <= link.rtt <= 0.1
        assert 0.001 <= link.packet_loss <= 0.02


@pytest.mark.parametrize("kwargs", [{'peers': 0}, {'peers': 3, 'rtt_range': (0.0, 0.1)},
                                    {'peers': 3, 'loss_range': (0.2, 0.1)},
                                    {'peers': 3, 'model': 'ring'}])
def test_invalid_generation_spec(kwargs):
    with pytest.raises(InvalidSpec):
        generate_topology(TopologyGenSpec(**kwargs), seed=0)


def test_two_peers_with_fixed_metrics():
    spec = TopologyGenSpec(peers=2, rtt_range=(0.05, 0.05), loss_range=(0.01, 0.01), mss=1000)
    for seed in (0, 7, 123):
        topo = generate_topology(spec, seed)
        assert topo.peers == (1, 2)
        assert topo.link(1, 2) == LinkMetrics(rtt=0.05, packet_loss=0.01, mss=1000)
