# gridos/core/discovery.py
"""
P2P 发现服务
RootGrid / subGrid 自组织、最近 subGrid 表、Master-Slave 资源传播和 Master 故障切换

所有操作都是对 OverlayState 的确定性原地状态转移，返回本次产生的事件列表。
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from config import config
from .errors import (AlreadyJoined, InvariantViolation, MasterNotFailed, NoSlaves, NoSubGrids,
                     NotJoined, UnknownPeer, UnknownSubGrid)
from .events import EventKind, GridEvent
from .net_model import NetworkTopology, PeerId
from .resources import ResourceAdvertisement

logger = logging.getLogger(__name__)

SubGridId = int
Version = Tuple[float, bool]

DEFAULT_LIM = config.get('discovery.lim', 8)
DEFAULT_HYSTERESIS = config.get('discovery.hysteresis', 0.10)


@dataclass
class SubGrid:
    """subGrid：一个 Master 加若干 Slave，容量受 lim 限制"""
    id: SubGridId
    master: PeerId
    slaves: Set[PeerId] = field(default_factory=set)
    lim: int = DEFAULT_LIM

    @property
    def size(self) -> int:
        return 1 + len(self.slaves)

    def has_room(self) -> bool:
        return self.size < self.lim

    def members(self) -> List[PeerId]:
        return sorted({self.master} | self.slaves)


@dataclass(frozen=True)
class ViewEntry:
    """
    资源视图条目
    advertisement 为 None 表示墓碑（该节点已失效）
    """
    origin: PeerId
    timestamp: float
    advertisement: Optional[ResourceAdvertisement] = None

    @property
    def is_tombstone(self) -> bool:
        return self.advertisement is None

    @property
    def version(self) -> Version:
        # 时间戳相同时墓碑优先
        return (self.timestamp, self.is_tombstone)


@dataclass
class OverlayState:
    """覆盖网络状态"""
    lim: int = DEFAULT_LIM
    hysteresis: float = DEFAULT_HYSTERESIS
    root_exists: bool = False
    subgrids: Dict[SubGridId, SubGrid] = field(default_factory=dict)
    membership: Dict[PeerId, SubGridId] = field(default_factory=dict)
    nearest_tables: Dict[PeerId, List[Tuple[SubGridId, float]]] = field(default_factory=dict)
    resource_views: Dict[PeerId, Dict[PeerId, ViewEntry]] = field(default_factory=dict)
    failed: Set[PeerId] = field(default_factory=set)
    next_subgrid_id: SubGridId = 1
    # (发送方, 接收方) -> {origin: 已知接收方持有的版本}
    sent_versions: Dict[Tuple[PeerId, PeerId], Dict[PeerId, Version]] = field(default_factory=dict)
    propagation_round: int = 0

    def __post_init__(self):
        if self.lim < 1:
            raise ValueError(f"lim 必须 >= 1: {self.lim}")
        if self.hysteresis < 0:
            raise ValueError(f"hysteresis 不能为负: {self.hysteresis}")

    def is_joined(self, peer: PeerId) -> bool:
        return peer in self.membership

    def is_master(self, peer: PeerId) -> bool:
        sgid = self.membership.get(peer)
        return sgid is not None and self.subgrids[sgid].master == peer

    def master_of(self, peer: PeerId) -> PeerId:
        if peer not in self.membership:
            raise NotJoined(f"节点未加入: {peer}")
        return self.subgrids[self.membership[peer]].master

    def masters(self) -> List[PeerId]:
        return sorted(sg.master for sg in self.subgrids.values())

    def live_peers(self) -> List[PeerId]:
        return sorted(self.membership)

    def partition(self) -> Dict[SubGridId, List[PeerId]]:
        """当前划分：subGrid -> 成员列表"""
        return {sgid: sg.members() for sgid, sg in sorted(self.subgrids.items())}

    def snapshot(self) -> 'OverlayState':
        """深拷贝，可交给其他线程只读分析"""
        return copy.deepcopy(self)

    def check_invariants(self) -> None:
        """检查成员划分不变量，失败抛出 InvariantViolation"""
        seen: Dict[PeerId, SubGridId] = {}
        for sgid, sg in self.subgrids.items():
            if sg.id != sgid:
                raise InvariantViolation(f"subGrid 编号不一致: {sgid} != {sg.id}")
            if sg.master in sg.slaves:
                raise InvariantViolation(f"subGrid {sgid} 的 Master 同时是 Slave")
            if sg.size > self.lim:
                raise InvariantViolation(f"subGrid {sgid} 超出容量: {sg.size} > {self.lim}")
            for peer in sg.members():
                if peer in seen:
                    raise InvariantViolation(f"节点 {peer} 同时属于 {seen[peer]} 和 {sgid}")
                if peer in self.failed:
                    raise InvariantViolation(f"已失效节点 {peer} 仍在 subGrid {sgid} 中")
                seen[peer] = sgid
        if seen != self.membership:
            raise InvariantViolation("membership 与 subgrids 不一致")
        if self.subgrids and not self.root_exists:
            raise InvariantViolation("存在 subGrid 但 RootGrid 不存在")


def _event(kind: EventKind, now: float, **payload) -> GridEvent:
    return GridEvent(kind=kind, time=now, payload=payload)


def _merge(view: Dict[PeerId, ViewEntry], entry: ViewEntry) -> bool:
    """最后写入者胜出，返回视图是否改变"""
    current = view.get(entry.origin)
    if current is None or entry.version > current.version:
        view[entry.origin] = entry
        return True
    return False


def _note_version(state: OverlayState, sender: PeerId, receiver: PeerId, entry: ViewEntry) -> None:
    known = state.sent_versions.setdefault((sender, receiver), {})
    previous = known.get(entry.origin)
    if previous is None or entry.version > previous:
        known[entry.origin] = entry.version


def _forget_peer(state: OverlayState, peer: PeerId) -> None:
    state.resource_views.pop(peer, None)
    state.nearest_tables.pop(peer, None)
    for key in [k for k in state.sent_versions if peer in k]:
        del state.sent_versions[key]


def _tombstone(state: OverlayState, holder: PeerId, dead: PeerId, now: float) -> None:
    view = state.resource_views.setdefault(holder, {})
    current = view.get(dead)
    timestamp = max(now, current.timestamp) if current is not None else now
    _merge(view, ViewEntry(origin=dead, timestamp=timestamp))


def _create_subgrid(state: OverlayState, master: PeerId) -> SubGrid:
    sg = SubGrid(id=state.next_subgrid_id, master=master, lim=state.lim)
    state.next_subgrid_id += 1
    state.subgrids[sg.id] = sg
    state.membership[master] = sg.id
    return sg


def compute_nearest_table(state: OverlayState, peer: PeerId,
                          topology: NetworkTopology) -> List[Tuple[SubGridId, float]]:
    """按到 Master 的估计带宽降序排列其他 subGrid，同带宽按编号升序"""
    table = [
        (sgid, topology.bandwidth(peer, sg.master))
        for sgid, sg in state.subgrids.items()
        if sg.master != peer
    ]
    table.sort(key=lambda item: (-item[1], item[0]))
    return table


def _refresh_all_tables(state: OverlayState, topology: NetworkTopology) -> None:
    for peer in state.live_peers():
        state.nearest_tables[peer] = compute_nearest_table(state, peer, topology)


def find_nearest_subgrid(state: OverlayState, peer: PeerId, topology: NetworkTopology) -> SubGridId:
    """
    最近 subGrid：Master 到 peer 估计带宽最大者，平局取编号最小者

    Raises:
        NoSubGrids: 没有可选的 subGrid
    """
    table = compute_nearest_table(state, peer, topology)
    if not table:
        raise NoSubGrids(f"节点 {peer} 找不到可加入的 subGrid")
    return table[0][0]


def join_peer(state: OverlayState, peer: PeerId, topology: NetworkTopology,
              now: float = 0.0) -> List[GridEvent]:
    """
    节点加入
    RootGrid 不存在时创建 RootGrid 和以该节点为 Master 的 subGrid；
    否则加入最近的 subGrid，若已满则新建 subGrid 并通知所有节点
    """
    if not topology.has_peer(peer):
        raise UnknownPeer(f"拓扑中不存在节点: {peer}")
    if peer in state.membership or peer in state.failed:
        raise AlreadyJoined(f"节点已加入过: {peer}")

    events: List[GridEvent] = []
    state.resource_views.setdefault(peer, {})

    if not state.root_exists or not state.subgrids:
        if not state.root_exists:
            state.root_exists = True
            events.append(_event(EventKind.ROOT_GRID_CREATED, now, peer=peer))
            logger.info(f"节点 {peer} 创建 RootGrid")
        sg = _create_subgrid(state, peer)
        events.append(_event(EventKind.SUBGRID_CREATED, now, subgrid=sg.id, master=peer))
        events.append(_event(EventKind.PEER_JOINED, now, peer=peer, subgrid=sg.id, role="master"))
        state.nearest_tables[peer] = []
        return events

    nearest = find_nearest_subgrid(state, peer, topology)
    target = state.subgrids[nearest]
    if target.has_room():
        target.slaves.add(peer)
        state.membership[peer] = nearest
        events.append(_event(EventKind.PEER_JOINED, now, peer=peer, subgrid=nearest, role="slave"))
        logger.debug(f"节点 {peer} 加入 subGrid {nearest} (Master {target.master})")
    else:
        sg = _create_subgrid(state, peer)
        events.append(_event(EventKind.SUBGRID_CREATED, now, subgrid=sg.id, master=peer))
        events.append(_event(EventKind.PEER_JOINED, now, peer=peer, subgrid=sg.id, role="master"))
        for other in state.live_peers():
            if other != peer:
                events.append(_event(EventKind.SUBGRID_ANNOUNCED, now,
                                     subgrid=sg.id, master=peer, peer=other))
        logger.debug(f"subGrid {nearest} 已满，节点 {peer} 新建 subGrid {sg.id}")

    state.nearest_tables[peer] = compute_nearest_table(state, peer, topology)
    return events


def handle_subgrid_announcement(state: OverlayState, peer: PeerId, new_subgrid: SubGridId,
                                topology: NetworkTopology, now: float = 0.0) -> List[GridEvent]:
    """
    处理新 subGrid 通知
    重算最近表；只有带宽提升超过滞后系数且新 subGrid 有空位时才迁入，Master 不移动
    """
    if new_subgrid not in state.subgrids:
        raise UnknownSubGrid(f"未知 subGrid: {new_subgrid}")
    if peer not in state.membership:
        raise NotJoined(f"节点未加入: {peer}")

    state.nearest_tables[peer] = compute_nearest_table(state, peer, topology)
    current_id = state.membership[peer]
    current = state.subgrids[current_id]
    if current.master == peer or current_id == new_subgrid:
        return []

    candidate = state.subgrids[new_subgrid]
    bw_current = topology.bandwidth(peer, current.master)
    bw_new = topology.bandwidth(peer, candidate.master)
    if bw_new <= bw_current * (1.0 + state.hysteresis) or not candidate.has_room():
        return []

    current.slaves.discard(peer)
    candidate.slaves.add(peer)
    state.membership[peer] = new_subgrid

    # 本节点的资源登记随迁移交给新 Master
    own = state.resource_views.get(peer, {}).get(peer)
    if own is not None:
        _merge(state.resource_views.setdefault(candidate.master, {}), own)
        _note_version(state, candidate.master, peer, own)

    logger.debug(f"节点 {peer} 从 subGrid {current_id} 迁入 {new_subgrid}: "
                 f"{bw_current:.0f} -> {bw_new:.0f} B/s")
    return [_event(EventKind.PEER_MOVED, now, peer=peer, from_subgrid=current_id,
                   to_subgrid=new_subgrid, bw_from=bw_current, bw_to=bw_new)]


def settle_announcement(state: OverlayState, new_subgrid: SubGridId, topology: NetworkTopology,
                        now: float = 0.0) -> List[GridEvent]:
    """同步通知所有存活节点（不经消息延迟）"""
    if new_subgrid not in state.subgrids:
        raise UnknownSubGrid(f"未知 subGrid: {new_subgrid}")
    master = state.subgrids[new_subgrid].master
    events: List[GridEvent] = []
    for peer in state.live_peers():
        if peer != master:
            events.extend(handle_subgrid_announcement(state, peer, new_subgrid, topology, now))
    return events


def elect_master(state: OverlayState, subgrid: SubGridId, topology: NetworkTopology) -> PeerId:
    """
    选举新 Master：到其他存活成员平均估计带宽最大的 Slave，平局取 ID 最小者
    """
    sg = state.subgrids.get(subgrid)
    if sg is None:
        raise UnknownSubGrid(f"未知 subGrid: {subgrid}")
    candidates = sorted(p for p in sg.slaves if p not in state.failed)
    if not candidates:
        raise NoSlaves(f"subGrid {subgrid} 没有可选的 Slave")

    def performance(peer: PeerId) -> float:
        others = [o for o in candidates if o != peer]
        if not others:
            return 0.0
        return sum(topology.bandwidth(peer, o) for o in others) / len(others)

    return max(candidates, key=lambda p: (performance(p), -p))


def handle_master_failure(state: OverlayState, subgrid: SubGridId, topology: NetworkTopology,
                          now: float = 0.0) -> List[GridEvent]:
    """
    Master 故障切换
    有 Slave 时选举新 Master 并重新登记存活成员的资源；否则解散该 subGrid
    """
    sg = state.subgrids.get(subgrid)
    if sg is None:
        raise UnknownSubGrid(f"未知 subGrid: {subgrid}")
    old = sg.master
    if old not in state.failed:
        raise MasterNotFailed(f"subGrid {subgrid} 的 Master {old} 未失效")

    state.membership.pop(old, None)
    _forget_peer(state, old)
    for slave in sorted(sg.slaves & state.failed):
        sg.slaves.discard(slave)
        state.membership.pop(slave, None)
        _forget_peer(state, slave)

    if not sg.slaves:
        del state.subgrids[subgrid]
        # 只有最近的存活 Master 察觉失效，其余 Master 经传播得知
        survivors = state.masters()
        if survivors:
            nearest = max(survivors, key=lambda m: (topology.bandwidth(old, m), -m))
            _tombstone(state, nearest, old, now)
        if not state.subgrids:
            state.root_exists = False
        _refresh_all_tables(state, topology)
        logger.info(f"subGrid {subgrid} 的唯一节点 {old} 失效，subGrid 解散")
        return [_event(EventKind.SUBGRID_DISSOLVED, now, subgrid=subgrid, master=old)]

    new = elect_master(state, subgrid, topology)
    sg.slaves.discard(new)
    sg.master = new

    view = state.resource_views.setdefault(new, {})
    for member in sg.members():
        own = state.resource_views.get(member, {}).get(member)
        if own is not None:
            _merge(view, own)
            if member != new:
                _note_version(state, new, member, own)
    _tombstone(state, new, old, now)
    _refresh_all_tables(state, topology)

    logger.info(f"subGrid {subgrid} 的 Master {old} 失效，选举 {new} 为新 Master")
    return [_event(EventKind.MASTER_ELECTED, now, subgrid=subgrid, old_master=old,
                   new_master=new, members=sg.members())]


def handle_peer_failure(state: OverlayState, peer: PeerId, topology: NetworkTopology,
                        now: float = 0.0) -> List[GridEvent]:
    """
    节点失效
    Slave 失效时从 subGrid 移除并在 Master 处写入墓碑；Master 失效时触发故障切换
    """
    if peer not in state.membership:
        raise NotJoined(f"节点未加入: {peer}")
    sgid = state.membership[peer]
    sg = state.subgrids[sgid]
    state.failed.add(peer)

    if sg.master == peer:
        events = [_event(EventKind.MASTER_FAILED, now, peer=peer, subgrid=sgid)]
        events.extend(handle_master_failure(state, sgid, topology, now))
        return events

    sg.slaves.discard(peer)
    state.membership.pop(peer)
    _forget_peer(state, peer)
    _tombstone(state, sg.master, peer, now)
    logger.debug(f"Slave {peer} 失效，离开 subGrid {sgid}")
    return [_event(EventKind.PEER_LEFT, now, peer=peer, subgrid=sgid, reason="failed")]


def register_resources(state: OverlayState, peer: PeerId, adv: ResourceAdvertisement,
                       now: float = 0.0) -> List[GridEvent]:
    """
    资源登记：保存在本节点和所在 subGrid 的 Master 处，按时间戳后写胜出
    Master 登记时只存本地，等待传播
    """
    if peer not in state.membership:
        raise NotJoined(f"节点未加入: {peer}")
    if adv.origin != peer:
        raise ValueError(f"广告来源 {adv.origin} 与登记节点 {peer} 不符")

    entry = ViewEntry(origin=peer, timestamp=adv.timestamp, advertisement=adv)
    accepted = _merge(state.resource_views.setdefault(peer, {}), entry)
    master = state.master_of(peer)
    if master != peer:
        _merge(state.resource_views.setdefault(master, {}), entry)
        _note_version(state, master, peer, entry)

    return [_event(EventKind.RESOURCE_REGISTERED, now, peer=peer, master=master,
                   timestamp=adv.timestamp, accepted=accepted)]


def _delta(state: OverlayState, view: Dict[PeerId, ViewEntry], sender: PeerId,
           receiver: PeerId) -> List[ViewEntry]:
    known = state.sent_versions.get((sender, receiver), {})
    return [
        entry for origin, entry in sorted(view.items())
        if origin != receiver and (origin not in known or entry.version > known[origin])
    ]


def _deliver(state: OverlayState, sender: PeerId, receiver: PeerId,
             entries: Iterable[ViewEntry]) -> int:
    view = state.resource_views.setdefault(receiver, {})
    sender_alive = sender in state.membership
    changed = 0
    for entry in entries:
        if _merge(view, entry):
            changed += 1
        if sender_alive:
            _note_version(state, sender, receiver, entry)
            _note_version(state, receiver, sender, entry)
    return changed


@dataclass(frozen=True)
class PendingDelivery:
    """在途的传播消息，deliver_at = sent_at + 链路延迟"""
    src: PeerId
    dst: PeerId
    stage: str
    round: int
    entries: Tuple[ViewEntry, ...]
    sent_at: float
    deliver_at: float

    @property
    def origins(self) -> List[PeerId]:
        return [e.origin for e in self.entries]


def send_round(state: OverlayState, topology: NetworkTopology,
               now: float = 0.0) -> List[PendingDelivery]:
    """
    发出一轮资源信息传播
    Master 把增量发给其他 Master，并把增量转发给各自的 Slave；增量都基于发送时刻的视图。
    消息到达前接收方视图不变，由 deliver_propagation 在 deliver_at 时合并。
    """
    state.propagation_round += 1
    round_no = state.propagation_round
    outgoing: List[Tuple[PeerId, PeerId, str, List[ViewEntry]]] = []
    masters = state.masters()

    for src in masters:
        view = state.resource_views.get(src, {})
        for dst in masters:
            if dst != src:
                entries = _delta(state, view, src, dst)
                if entries:
                    outgoing.append((src, dst, "master", entries))

    for sgid in sorted(state.subgrids):
        sg = state.subgrids[sgid]
        view = state.resource_views.get(sg.master, {})
        for slave in sorted(sg.slaves):
            entries = _delta(state, view, sg.master, slave)
            if entries:
                outgoing.append((sg.master, slave, "slave", entries))

    deliveries = []
    for src, dst, stage, entries in outgoing:
        # 发送方记下已发版本，避免在途期间重复发送
        for entry in entries:
            _note_version(state, src, dst, entry)
        deliveries.append(PendingDelivery(
            src=src, dst=dst, stage=stage, round=round_no, entries=tuple(entries),
            sent_at=now, deliver_at=now + topology.latency(src, dst)))

    if deliveries:
        logger.debug(f"传播第 {round_no} 轮: 发出 {len(deliveries)} 条消息")
    return deliveries


def deliver_propagation(state: OverlayState, delivery: PendingDelivery) -> List[GridEvent]:
    """
    在 deliver_at 时刻把一条传播消息合并进接收方视图
    接收方已失效或已离开覆盖网络时消息丢弃
    """
    at = delivery.deliver_at
    if delivery.dst not in state.membership:
        return [_event(EventKind.MESSAGE_DROPPED, at, message="propagation",
                       src=delivery.src, dest=delivery.dst, round=delivery.round)]
    changed = _deliver(state, delivery.src, delivery.dst, delivery.entries)
    return [_event(
        EventKind.INFO_PROPAGATED, at,
        src=delivery.src, dst=delivery.dst, stage=delivery.stage, round=delivery.round,
        entries=len(delivery.entries), changed=changed, origins=delivery.origins,
        sent_at=delivery.sent_at, latency=at - delivery.sent_at,
    )]


def propagate(state: OverlayState, topology: NetworkTopology, now: float = 0.0) -> List[GridEvent]:
    """
    一轮资源信息传播，发出后按到达时间依次投递
    供分析工具和测试使用；仿真器通过事件队列分别调度每条消息。
    没有增量时不产生任何事件。
    """
    deliveries = send_round(state, topology, now)
    events: List[GridEvent] = []
    for delivery in sorted(deliveries, key=lambda d: (d.deliver_at, d.src, d.dst)):
        events.extend(deliver_propagation(state, delivery))
    return events


def resource_view(state: OverlayState, peer: PeerId) -> FrozenSet[ResourceAdvertisement]:
    """节点当前合并视图中的有效广告（两轮传播之间可能过期）"""
    if peer not in state.membership:
        raise NotJoined(f"节点未加入: {peer}")
    return frozenset(
        entry.advertisement for entry in state.resource_views.get(peer, {}).values()
        if not entry.is_tombstone
    )


def views_converged(state: OverlayState) -> bool:
    """所有存活节点的资源视图是否一致"""
    views = [resource_view(state, p) for p in state.live_peers()]
    return all(v == views[0] for v in views[1:])


def form_overlay(topology: NetworkTopology, peers: Optional[Iterable[PeerId]] = None,
                 lim: int = DEFAULT_LIM,
                 hysteresis: float = DEFAULT_HYSTERESIS) -> Tuple[OverlayState, List[GridEvent]]:
    """
    按顺序加入节点并同步处理每次新 subGrid 通知
    供拓扑分析工具和测试使用
    """
    state = OverlayState(lim=lim, hysteresis=hysteresis)
    events: List[GridEvent] = []
    for peer in (topology.peers if peers is None else peers):
        joined = join_peer(state, peer, topology)
        events.extend(joined)
        announced = sorted({e.payload['subgrid'] for e in joined
                            if e.kind == EventKind.SUBGRID_ANNOUNCED})
        for sgid in announced:
            events.extend(settle_announcement(state, sgid, topology))
    logger.debug(f"覆盖网络形成: {len(state.membership)} 个节点, {len(state.subgrids)} 个 subGrid")
    return state, events
