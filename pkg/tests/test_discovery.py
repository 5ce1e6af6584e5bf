# gridos/tests/test_discovery.py
import pytest

from conftest import FAR, NEAR, cluster_topology
from core.discovery import (OverlayState, deliver_propagation, elect_master, find_nearest_subgrid,
                            form_overlay, handle_master_failure, handle_peer_failure,
                            handle_subgrid_announcement, join_peer, propagate,
                            register_resources, resource_view, send_round, views_converged)
from core.errors import (AlreadyJoined, MasterNotFailed, NoSlaves, NoSubGrids, NotJoined,
                         UnknownPeer, UnknownSubGrid)
from core.events import EventKind
from core.net_model import LinkMetrics, NetworkTopology
from core.resources import ResourceAdvertisement


def adv(peer, timestamp=0.0, cpu=4.0):
    return ResourceAdvertisement(origin=peer, cpu_capacity=4.0, cpu_available=cpu,
                                 mem_total=8.0, mem_available=8.0, storage_available=10.0,
                                 timestamp=timestamp)


def kinds(events):
    return [e.kind for e in events]


def settle(state, topology, now=0.0, max_rounds=10):
    """传播直到一轮没有消息，返回轮数"""
    for rounds in range(1, max_rounds + 1):
        if not propagate(state, topology, now):
            return rounds - 1
    raise AssertionError("传播没有停止")


def formed(topology, lim, peers=None):
    state, _ = form_overlay(topology, peers, lim=lim)
    return state


def test_first_join_creates_root(two_clusters):
    state = OverlayState(lim=3)
    events = join_peer(state, 1, two_clusters)
    assert kinds(events) == [EventKind.ROOT_GRID_CREATED, EventKind.SUBGRID_CREATED,
                             EventKind.PEER_JOINED]
    assert events[-1].payload['role'] == 'master'
    assert state.root_exists
    assert state.is_master(1)


def test_join_nearest_until_full_then_new_subgrid(two_clusters):
    state = OverlayState(lim=3)
    for peer in (1, 2, 3):
        join_peer(state, peer, two_clusters)
    events = join_peer(state, 4, two_clusters)
    announced = [e for e in events if e.kind == EventKind.SUBGRID_ANNOUNCED]
    assert sorted(e.payload['peer'] for e in announced) == [1, 2, 3]
    assert state.is_master(4)
    assert state.partition() == {1: [1, 2, 3], 2: [4]}


def test_clusters_become_subgrids(two_clusters):
    state = formed(two_clusters, lim=3)
    assert state.partition() == {1: [1, 2, 3], 2: [4, 5, 6]}
    state.check_invariants()


def test_lim_one_gives_singletons(two_clusters):
    state = formed(two_clusters, lim=1)
    assert all(len(members) == 1 for members in state.partition().values())
    assert len(state.subgrids) == 6
    state.check_invariants()


def test_slave_moves_to_much_closer_subgrid():
    topo = cluster_topology([[1, 2], [3, 4]])
    state, events = form_overlay(topo, [1, 3, 2, 4], lim=3)
    moved = [e for e in events if e.kind == EventKind.PEER_MOVED]
    assert [(e.payload['peer'], e.payload['from_subgrid'], e.payload['to_subgrid'])
            for e in moved] == [(3, 1, 2)]
    assert state.partition() == {1: [1, 2], 2: [3, 4]}


def test_hysteresis_blocks_equal_bandwidth_moves(uniform4):
    _, events = form_overlay(uniform4, lim=2)
    assert not [e for e in events if e.kind == EventKind.PEER_MOVED]


@pytest.mark.parametrize("rtt_new,moves", [(0.1 / 1.05, False), (0.05, True)])
def test_hysteresis_small_gain_stays_large_gain_moves(rtt_new, moves):
    links = {(1, 2): LinkMetrics(rtt=0.1, packet_loss=0.01),
             (1, 3): LinkMetrics(rtt=0.2, packet_loss=0.01),
             (2, 3): LinkMetrics(rtt=rtt_new, packet_loss=0.01)}
    topo = NetworkTopology(peers=(1, 2, 3), links=links)
    state = OverlayState(lim=2, hysteresis=0.10)
    join_peer(state, 1, topo)
    join_peer(state, 2, topo)
    new_sg = [e for e in join_peer(state, 3, topo)
              if e.kind == EventKind.SUBGRID_CREATED][0].payload['subgrid']
    assert topo.bandwidth(2, 3) / topo.bandwidth(2, 1) == pytest.approx(0.1 / rtt_new)

    events = handle_subgrid_announcement(state, 2, new_sg, topo)
    assert kinds(events) == ([EventKind.PEER_MOVED] if moves else [])
    assert state.master_of(2) == (3 if moves else 1)


def test_join_errors(two_clusters):
    state = OverlayState(lim=3)
    join_peer(state, 1, two_clusters)
    with pytest.raises(AlreadyJoined):
        join_peer(state, 1, two_clusters)
    with pytest.raises(UnknownPeer):
        join_peer(state, 42, two_clusters)


def test_nearest_subgrid_requires_one(two_clusters):
    with pytest.raises(NoSubGrids):
        find_nearest_subgrid(OverlayState(), 1, two_clusters)


def test_failed_peer_cannot_rejoin(two_clusters):
    state = formed(two_clusters, lim=3)
    handle_peer_failure(state, 2, two_clusters, now=1.0)
    with pytest.raises(AlreadyJoined):
        join_peer(state, 2, two_clusters)


def test_slave_failure_leaves_subgrid(two_clusters):
    state = formed(two_clusters, lim=3)
    events = handle_peer_failure(state, 5, two_clusters, now=2.0)
    assert kinds(events) == [EventKind.PEER_LEFT]
    assert state.partition()[2] == [4, 6]
    assert state.resource_views[4][5].is_tombstone
    state.check_invariants()


def test_master_failover_elects_slave(two_clusters):
    state = formed(two_clusters, lim=3)
    events = handle_peer_failure(state, 1, two_clusters, now=2.0)
    assert kinds(events) == [EventKind.MASTER_FAILED, EventKind.MASTER_ELECTED]
    elected = events[-1].payload
    assert elected['old_master'] == 1
    assert elected['new_master'] == 2       # 对称时取 ID 最小者
    assert elected['members'] == [2, 3]
    state.check_invariants()


def test_election_prefers_best_connected_slave():
    peers = (1, 2, 3, 4)
    links = {(a, b): FAR for i, a in enumerate(peers) for b in peers[i + 1:]}
    links[(2, 3)] = NEAR
    links[(3, 4)] = NEAR
    topo = NetworkTopology(peers=peers, links=links)
    state = formed(topo, lim=4)
    assert state.partition() == {1: [1, 2, 3, 4]}
    assert elect_master(state, 1, topo) == 3


def test_single_member_failure_dissolves_subgrid(two_clusters):
    state = formed(two_clusters, lim=1)
    events = handle_peer_failure(state, 3, two_clusters, now=1.0)
    assert kinds(events) == [EventKind.MASTER_FAILED, EventKind.SUBGRID_DISSOLVED]
    assert 3 not in state.partition()
    assert state.root_exists


def test_dissolved_master_known_by_nearest_master_first(two_clusters):
    state = formed(two_clusters, lim=1)
    for peer in state.live_peers():
        register_resources(state, peer, adv(peer))
    settle(state, two_clusters)

    handle_peer_failure(state, 3, two_clusters, now=10.0)
    # 1 和 2 到 3 的带宽相同，取 ID 小者
    assert state.resource_views[1][3].is_tombstone
    assert not any(state.resource_views[p][3].is_tombstone for p in (2, 4, 5, 6))
    assert 3 in {a.origin for a in resource_view(state, 5)}

    propagate(state, two_clusters, now=11.0)
    assert all(3 not in {a.origin for a in resource_view(state, p)} for p in state.live_peers())


def test_master_with_only_failed_slaves_dissolves(two_clusters):
    state = formed(two_clusters, lim=3)
    state.failed.update({1, 2, 3})
    events = handle_master_failure(state, 1, two_clusters, now=4.0)
    assert kinds(events) == [EventKind.SUBGRID_DISSOLVED]
    assert state.partition() == {2: [4, 5, 6]}
    assert state.resource_views[4][1].is_tombstone
    state.check_invariants()


def test_last_peer_failure_removes_root(uniform4):
    state = formed(uniform4, lim=1, peers=[1])
    handle_peer_failure(state, 1, uniform4, now=1.0)
    assert not state.subgrids
    assert not state.root_exists
    state.check_invariants()


def test_election_errors(two_clusters):
    state = formed(two_clusters, lim=1)
    with pytest.raises(NoSlaves):
        elect_master(state, 1, two_clusters)
    with pytest.raises(UnknownSubGrid):
        elect_master(state, 99, two_clusters)
    with pytest.raises(MasterNotFailed):
        handle_master_failure(state, 1, two_clusters)


def test_register_requires_membership(two_clusters):
    state = formed(two_clusters, lim=3, peers=[1, 2])
    with pytest.raises(NotJoined):
        register_resources(state, 5, adv(5))
    with pytest.raises(ValueError):
        register_resources(state, 2, adv(3))


def test_register_last_writer_wins(two_clusters):
    state = formed(two_clusters, lim=3)
    register_resources(state, 2, adv(2, timestamp=5.0, cpu=1.0))
    events = register_resources(state, 2, adv(2, timestamp=3.0, cpu=3.0))
    assert events[0].payload['accepted'] is False
    assert state.resource_views[1][2].advertisement.cpu_available == 1.0


def test_propagation_converges_in_two_rounds(two_clusters):
    state = formed(two_clusters, lim=3)
    for peer in state.live_peers():
        register_resources(state, peer, adv(peer))
    first = propagate(state, two_clusters, now=1.0)
    assert {e.payload['stage'] for e in first} == {'master', 'slave'}
    assert {a.origin for a in resource_view(state, 4)} == {1, 2, 3, 4, 5, 6}
    # Slave 只能拿到 Master 发送时已有的条目
    assert {a.origin for a in resource_view(state, 5)} == {4, 5, 6}

    assert propagate(state, two_clusters, now=2.0)
    assert views_converged(state)
    assert len(resource_view(state, 5)) == 6
    assert propagate(state, two_clusters, now=3.0) == []


def test_fresh_registration_reaches_masters_then_slaves(two_clusters):
    state = formed(two_clusters, lim=3)
    for peer in state.live_peers():
        register_resources(state, peer, adv(peer))
    settle(state, two_clusters)

    register_resources(state, 2, adv(2, timestamp=20.0, cpu=0.5))
    propagate(state, two_clusters, now=21.0)
    assert all(state.resource_views[m][2].timestamp == 20.0 for m in state.masters())
    propagate(state, two_clusters, now=22.0)
    assert all(state.resource_views[p][2].timestamp == 20.0 for p in state.live_peers())


# ---- 传播延迟 ----

def lim1_triangle():
    topo = NetworkTopology.uniform([1, 2, 3], LinkMetrics(rtt=0.4, packet_loss=0.01))
    return topo, formed(topo, lim=1)


def test_view_unchanged_until_delivery():
    topo, state = lim1_triangle()
    register_resources(state, 3, adv(3, timestamp=5.0))
    deliveries = send_round(state, topo, now=5.0)

    assert sorted((d.src, d.dst) for d in deliveries) == [(3, 1), (3, 2)]
    assert all(d.deliver_at == pytest.approx(5.2) for d in deliveries)
    assert {a.origin for a in resource_view(state, 1)} == set()

    events = deliver_propagation(state, deliveries[0])
    assert events[0].kind == EventKind.INFO_PROPAGATED
    assert events[0].time == pytest.approx(5.2)
    assert events[0].payload['changed'] == 1
    assert 3 in {a.origin for a in resource_view(state, deliveries[0].dst)}


def test_in_flight_entries_not_resent():
    topo, state = lim1_triangle()
    register_resources(state, 3, adv(3, timestamp=5.0))
    send_round(state, topo, now=5.0)
    assert send_round(state, topo, now=5.1) == []


def test_delivery_to_failed_peer_dropped():
    topo, state = lim1_triangle()
    register_resources(state, 3, adv(3, timestamp=5.0))
    to_one = [d for d in send_round(state, topo, now=5.0) if d.dst == 1][0]
    handle_peer_failure(state, 1, topo, now=5.1)
    events = deliver_propagation(state, to_one)
    assert kinds(events) == [EventKind.MESSAGE_DROPPED]
    assert events[0].payload['message'] == 'propagation'
    assert 1 not in state.resource_views


def test_quiescent_view_is_silent(two_clusters):
    state = formed(two_clusters, lim=3)
    for peer in state.live_peers():
        register_resources(state, peer, adv(peer))
    settle(state, two_clusters)
    assert propagate(state, two_clusters, now=9.0) == []


def test_views_drop_failed_master_after_failover(two_clusters):
    state = formed(two_clusters, lim=3)
    for peer in state.live_peers():
        register_resources(state, peer, adv(peer))
    settle(state, two_clusters)

    handle_peer_failure(state, 1, two_clusters, now=10.0)
    rounds = settle(state, two_clusters, now=11.0)
    assert rounds <= 2
    assert views_converged(state)
    origins = {a.origin for a in resource_view(state, 6)}
    assert origins == {2, 3, 4, 5, 6}


def test_moved_peer_registration_follows():
    topo = cluster_topology([[1, 2], [3, 4]])
    state = OverlayState(lim=3)
    for peer in (1, 3, 2):
        join_peer(state, peer, topo)
    register_resources(state, 3, adv(3))
    events = join_peer(state, 4, topo)
    new_sg = [e for e in events if e.kind == EventKind.SUBGRID_CREATED][0].payload['subgrid']
    handle_subgrid_announcement(state, 3, new_sg, topo)
    assert state.master_of(3) == 4
    assert state.resource_views[4][3].advertisement == adv(3)


def test_snapshot_is_independent(two_clusters):
    state = formed(two_clusters, lim=3)
    copy = state.snapshot()
    handle_peer_failure(state, 6, two_clusters)
    assert 6 in copy.membership
    assert 6 not in state.membership
