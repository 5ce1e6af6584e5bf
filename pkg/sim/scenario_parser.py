# gridos/sim/scenario_parser.py
"""
场景文件解析器
解析带版本头的 JSON 场景文件（语法见 README），并校验所有引用
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from config import config
from core.broker import BrokerWeights
from core.discovery import DEFAULT_HYSTERESIS, DEFAULT_LIM
from core.errors import InvalidLinkMetrics, InvalidSpec, ScenarioParseError, ScenarioValidationError
from core.net_model import (DEFAULT_MSS, LinkMetrics, NetworkTopology, TopologyGenSpec,
                            generate_topology)
from core.resources import JobRequirements, ResourceUsage
from core.workloads import TaskSpec, make_task
from security.policy import SharingPolicy, ViolationAction

logger = logging.getLogger(__name__)

SCENARIO_FORMAT = "gridos-scenario"
SCENARIO_VERSION = 1

_MISSING = object()


@dataclass
class TopologySpec:
    """拓扑：随机生成参数，或显式的节点与链路"""
    generate: Optional[TopologyGenSpec] = None
    peers: Tuple[int, ...] = ()
    default_link: Optional[LinkMetrics] = None
    links: Dict[Tuple[int, int], LinkMetrics] = field(default_factory=dict)

    def peer_ids(self) -> Tuple[int, ...]:
        if self.generate is not None:
            return tuple(range(1, self.generate.peers + 1))
        return tuple(sorted(set(self.peers)))

    def build(self, seed: int) -> NetworkTopology:
        """构造拓扑；显式拓扑中未列出的节点对使用 default_link"""
        if self.generate is not None:
            return generate_topology(self.generate, seed)
        peers = self.peer_ids()
        links = {}
        for i, a in enumerate(peers):
            for b in peers[i + 1:]:
                metrics = self.links.get((a, b), self.default_link)
                if metrics is None:
                    raise ScenarioValidationError('topology.links', f"缺少链路 {a}-{b} 且没有 default_link")
                links[(a, b)] = metrics
        return NetworkTopology(peers=peers, links=links)


@dataclass
class PeerSpec:
    """节点：加入时间、资源和共享策略"""
    id: int
    join_time: float = 0.0
    cpu_capacity: float = config.get('peer_defaults.cpu_capacity', 4.0)
    mem_total: float = config.get('peer_defaults.mem_total', 8 * 1024 ** 3)
    storage_total: float = config.get('peer_defaults.storage_total', 100 * 1024 ** 3)
    load: float = config.get('peer_defaults.load', 0.0)
    policy: Optional[SharingPolicy] = None


@dataclass
class TaskRef:
    """内置工作负载引用"""
    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    def build(self) -> TaskSpec:
        return make_task(self.name, self.params)


@dataclass
class JobSpec:
    """作业：提交节点、任务、最低需求和每线程每 tick 的资源消耗"""
    id: str
    submitter: int
    submit_time: float
    task: TaskRef
    requirements: JobRequirements = field(default_factory=JobRequirements)
    demand: ResourceUsage = field(default_factory=ResourceUsage)
    duration: float = 0.0       # 线程最短驻留时间（秒）
    migrations: List[Tuple[float, int, int]] = field(default_factory=list)   # (相对提交时间, 线程序号, 目标)


@dataclass
class FailureSpec:
    peer: int
    time: float


@dataclass
class AccessProbe:
    """探测：host 上的访问者尝试读取某作业线程的受保护区域"""
    time: float
    host: int
    job: str
    thread: int = 0
    accessor_job: Optional[str] = None      # None 表示提供方本地访问者
    accessor_thread: int = 0


@dataclass
class Scenario:
    """完整场景"""
    topology: TopologySpec
    name: str = ""
    seed: int = 0
    duration: float = config.get('simulation.duration', 60.0)
    tick_length: float = config.get('security.tick_length', 1.0)
    propagation_interval: float = config.get('discovery.propagation_interval', 1.0)
    lim: int = DEFAULT_LIM
    hysteresis: float = DEFAULT_HYSTERESIS
    broker_weights: BrokerWeights = field(default_factory=BrokerWeights.from_config)
    peers: List[PeerSpec] = field(default_factory=list)
    jobs: List[JobSpec] = field(default_factory=list)
    failures: List[FailureSpec] = field(default_factory=list)
    access_probes: List[AccessProbe] = field(default_factory=list)

    def roster(self) -> List[PeerSpec]:
        """参与节点；未列出时拓扑中所有节点在 0 时刻以默认资源加入"""
        if self.peers:
            return list(self.peers)
        return [PeerSpec(id=p) for p in self.topology.peer_ids()]


def _field(data: Dict[str, Any], key: str, path: str, kind=None, default=_MISSING):
    """取字段并做类型检查，出错抛出带字段路径的 ScenarioParseError"""
    if not isinstance(data, dict):
        raise ScenarioParseError("应为 JSON 对象", field=path)
    if key not in data:
        if default is _MISSING:
            raise ScenarioParseError("缺少必需字段", field=f"{path}.{key}" if path else key)
        return default
    value = data[key]
    if value is None and default is None:
        return None
    where = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioParseError(f"应为数值: {value!r}", field=where)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioParseError(f"应为整数: {value!r}", field=where)
        return value
    if kind is not None and not isinstance(value, kind):
        raise ScenarioParseError(f"类型错误: {value!r}", field=where)
    return value


class ScenarioParser:
    """场景解析器"""

    @staticmethod
    def load_from_file(file_path: Path) -> Scenario:
        """
        从文件加载场景

        Raises:
            ScenarioParseError: JSON 语法错误（带行号）或字段错误
            ScenarioValidationError: 引用无法解析
        """
        file_path = Path(file_path)
        logger.debug(f"加载场景: {file_path}")
        try:
            text = file_path.read_text(encoding='utf-8')
        except OSError as e:
            raise ScenarioParseError(f"无法读取场景文件 {file_path}: {e}") from e
        scenario = ScenarioParser.load_from_string(text)
        logger.info(f"场景加载成功: {scenario.name or file_path.name} "
                    f"({len(scenario.roster())} 个节点, {len(scenario.jobs)} 个作业)")
        return scenario

    @staticmethod
    def load_from_string(text: str) -> Scenario:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioParseError(f"JSON 语法错误: {e.msg}", line=e.lineno) from e
        return ScenarioParser.from_dict(data)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> Scenario:
        scenario = ScenarioParser._parse_dict(data)
        ScenarioParser.validate(scenario)
        return scenario

    @staticmethod
    def _parse_link(data: Dict[str, Any], path: str) -> LinkMetrics:
        try:
            return LinkMetrics(
                rtt=_field(data, 'rtt', path, float),
                packet_loss=_field(data, 'loss', path, float),
                mss=_field(data, 'mss', path, int, DEFAULT_MSS),
            )
        except InvalidLinkMetrics as e:
            raise ScenarioParseError(str(e), field=path) from e

    @staticmethod
    def _parse_topology(data: Dict[str, Any]) -> TopologySpec:
        path = 'topology'
        if 'generate' in data:
            gen = _field(data, 'generate', path, dict)
            gpath = f'{path}.generate'
            spec = TopologyGenSpec(
                peers=_field(gen, 'peers', gpath, int),
                rtt_range=tuple(_field(gen, 'rtt_range', gpath, list, [0.005, 0.2])),
                loss_range=tuple(_field(gen, 'loss_range', gpath, list, [0.005, 0.05])),
                mss=_field(gen, 'mss', gpath, int, DEFAULT_MSS),
                model=_field(gen, 'model', gpath, str, 'geometric'),
            )
            try:
                spec.validate()
            except (InvalidSpec, TypeError, ValueError) as e:
                raise ScenarioParseError(str(e), field=gpath) from e
            return TopologySpec(generate=spec)

        peers = _field(data, 'peers', path, list)
        for i, peer in enumerate(peers):
            if isinstance(peer, bool) or not isinstance(peer, int):
                raise ScenarioParseError(f"节点 ID 应为整数: {peer!r}", field=f'{path}.peers[{i}]')
        default_link = None
        if 'default_link' in data:
            default_link = ScenarioParser._parse_link(
                _field(data, 'default_link', path, dict), f'{path}.default_link')
        links = {}
        for i, link in enumerate(_field(data, 'links', path, list, [])):
            lpath = f'{path}.links[{i}]'
            a = _field(link, 'a', lpath, int)
            b = _field(link, 'b', lpath, int)
            if a == b:
                raise ScenarioParseError(f"自环链路: {a}", field=lpath)
            links[(min(a, b), max(a, b))] = ScenarioParser._parse_link(link, lpath)
        return TopologySpec(peers=tuple(peers), default_link=default_link, links=links)

    @staticmethod
    def _parse_policy(owner: int, data: Dict[str, Any], path: str) -> SharingPolicy:
        try:
            return SharingPolicy(
                owner=owner,
                cpu_quota=_field(data, 'cpu_quota', path, float, 1.0),
                mem_cap=_field(data, 'mem_cap', path, float, 0.0),
                storage_cap=_field(data, 'storage_cap', path, float, 0.0),
                idle_only=_field(data, 'idle_only', path, bool, False),
                on_violation=_parse_action(_field(data, 'on_violation', path, str, 'throttle'), path),
                protected_cap=_field(data, 'protected_cap', path, int, None),
            )
        except ValueError as e:
            raise ScenarioParseError(str(e), field=path) from e

    @staticmethod
    def _parse_peer(data: Dict[str, Any], path: str) -> PeerSpec:
        peer_id = _field(data, 'id', path, int)
        defaults = PeerSpec(id=peer_id)
        policy = None
        if 'policy' in data and data['policy'] is not None:
            policy = ScenarioParser._parse_policy(peer_id, _field(data, 'policy', path, dict),
                                                  f'{path}.policy')
        return PeerSpec(
            id=peer_id,
            join_time=_field(data, 'join_time', path, float, 0.0),
            cpu_capacity=_field(data, 'cpu_capacity', path, float, defaults.cpu_capacity),
            mem_total=_field(data, 'mem_total', path, float, defaults.mem_total),
            storage_total=_field(data, 'storage_total', path, float, defaults.storage_total),
            load=_field(data, 'load', path, float, defaults.load),
            policy=policy,
        )

    @staticmethod
    def _parse_job(data: Dict[str, Any], path: str) -> JobSpec:
        task = _field(data, 'task', path, dict)
        req = _field(data, 'requirements', path, dict, {})
        demand = _field(data, 'demand', path, dict, {})
        rpath, dpath = f'{path}.requirements', f'{path}.demand'
        try:
            requirements = JobRequirements(
                min_cpu=_field(req, 'min_cpu', rpath, float, 0.0),
                min_mem=_field(req, 'min_mem', rpath, float, 0.0),
                min_storage=_field(req, 'min_storage', rpath, float, 0.0),
                data_size=_field(req, 'data_size', rpath, int, 0),
                interactive=_field(req, 'interactive', rpath, bool, False),
            )
            usage = ResourceUsage(
                cpu=_field(demand, 'cpu', dpath, float, 0.0),
                mem=_field(demand, 'mem', dpath, float, 0.0),
                storage=_field(demand, 'storage', dpath, float, 0.0),
            )
        except ValueError as e:
            raise ScenarioParseError(str(e), field=path) from e

        migrations = []
        for i, item in enumerate(_field(data, 'migrations', path, list, [])):
            mpath = f'{path}.migrations[{i}]'
            migrations.append((_field(item, 'at', mpath, float), _field(item, 'thread', mpath, int),
                               _field(item, 'dest', mpath, int)))
        return JobSpec(
            id=_field(data, 'id', path, str),
            submitter=_field(data, 'submitter', path, int),
            submit_time=_field(data, 'submit_time', path, float, 0.0),
            task=TaskRef(name=_field(task, 'name', f'{path}.task', str),
                         params=_field(task, 'params', f'{path}.task', dict, {})),
            requirements=requirements,
            demand=usage,
            duration=_field(data, 'duration', path, float, 0.0),
            migrations=migrations,
        )

    @staticmethod
    def _parse_dict(data: Dict[str, Any]) -> Scenario:
        """解析字典格式的场景数据"""
        if not isinstance(data, dict):
            raise ScenarioParseError("场景文件顶层应为 JSON 对象")
        if data.get('format') != SCENARIO_FORMAT:
            raise ScenarioParseError(f"不是场景文件（format 应为 {SCENARIO_FORMAT}）", field='format')
        if data.get('version') != SCENARIO_VERSION:
            raise ScenarioParseError(f"不支持的版本: {data.get('version')!r}", field='version')

        weights_data = _field(data, 'broker_weights', '', dict, {})
        try:
            weights = BrokerWeights.from_dict(weights_data)
        except (TypeError, ValueError) as e:
            raise ScenarioParseError(str(e), field='broker_weights') from e

        defaults = Scenario(topology=TopologySpec())
        scenario = Scenario(
            topology=ScenarioParser._parse_topology(_field(data, 'topology', '', dict)),
            name=_field(data, 'name', '', str, ''),
            seed=_field(data, 'seed', '', int, 0),
            duration=_field(data, 'duration', '', float, defaults.duration),
            tick_length=_field(data, 'tick_length', '', float, defaults.tick_length),
            propagation_interval=_field(data, 'propagation_interval', '', float,
                                        defaults.propagation_interval),
            lim=_field(data, 'lim', '', int, defaults.lim),
            hysteresis=_field(data, 'hysteresis', '', float, defaults.hysteresis),
            broker_weights=weights,
        )
        scenario.peers = [ScenarioParser._parse_peer(p, f'peers[{i}]')
                          for i, p in enumerate(_field(data, 'peers', '', list, []))]
        scenario.jobs = [ScenarioParser._parse_job(j, f'jobs[{i}]')
                         for i, j in enumerate(_field(data, 'jobs', '', list, []))]
        scenario.failures = [
            FailureSpec(peer=_field(f, 'peer', f'failures[{i}]', int),
                        time=_field(f, 'time', f'failures[{i}]', float))
            for i, f in enumerate(_field(data, 'failures', '', list, []))
        ]
        probes = []
        for i, p in enumerate(_field(data, 'access_probes', '', list, [])):
            ppath = f'access_probes[{i}]'
            probes.append(AccessProbe(
                time=_field(p, 'time', ppath, float),
                host=_field(p, 'host', ppath, int),
                job=_field(p, 'job', ppath, str),
                thread=_field(p, 'thread', ppath, int, 0),
                accessor_job=_field(p, 'accessor_job', ppath, str, None),
                accessor_thread=_field(p, 'accessor_thread', ppath, int, 0),
            ))
        scenario.access_probes = probes
        return scenario

    @staticmethod
    def validate(scenario: Scenario) -> None:
        """
        校验时间和引用

        Raises:
            ScenarioValidationError: 字段路径指向第一个不合法的值
        """
        if scenario.duration <= 0:
            raise ScenarioValidationError('duration', "必须为正")
        if scenario.tick_length <= 0:
            raise ScenarioValidationError('tick_length', "必须为正")
        if scenario.propagation_interval <= 0:
            raise ScenarioValidationError('propagation_interval', "必须为正")
        if scenario.lim < 1:
            raise ScenarioValidationError('lim', "必须 >= 1")
        if scenario.hysteresis < 0:
            raise ScenarioValidationError('hysteresis', "不能为负")

        topo_peers = set(scenario.topology.peer_ids())
        if not topo_peers:
            raise ScenarioValidationError('topology.peers', "拓扑中没有节点")
        if scenario.topology.generate is None:
            for (a, b) in scenario.topology.links:
                if a not in topo_peers or b not in topo_peers:
                    raise ScenarioValidationError('topology.links', f"链路引用未知节点: {a}-{b}")

        roster = set()
        for i, peer in enumerate(scenario.peers):
            if peer.id not in topo_peers:
                raise ScenarioValidationError(f'peers[{i}].id', f"拓扑中不存在节点 {peer.id}")
            if peer.id in roster:
                raise ScenarioValidationError(f'peers[{i}].id', f"节点重复: {peer.id}")
            if peer.join_time < 0:
                raise ScenarioValidationError(f'peers[{i}].join_time', "时间不能为负")
            roster.add(peer.id)
        if not roster:
            roster = topo_peers

        job_threads: Dict[str, int] = {}
        for i, job in enumerate(scenario.jobs):
            path = f'jobs[{i}]'
            if job.id in job_threads:
                raise ScenarioValidationError(f'{path}.id', f"作业重复: {job.id}")
            if job.submitter not in roster:
                raise ScenarioValidationError(f'{path}.submitter', f"未知节点 {job.submitter}")
            if job.submit_time < 0 or job.duration < 0:
                raise ScenarioValidationError(f'{path}.submit_time', "时间不能为负")
            try:
                task = job.task.build()
            except (TypeError, ValueError) as e:
                raise ScenarioValidationError(f'{path}.task', str(e)) from e
            job_threads[job.id] = task.threads
            for k, (at, thread, dest) in enumerate(job.migrations):
                mpath = f'{path}.migrations[{k}]'
                if at < 0:
                    raise ScenarioValidationError(f'{mpath}.at', "时间不能为负")
                if not 0 <= thread < task.threads:
                    raise ScenarioValidationError(f'{mpath}.thread', f"线程序号越界: {thread}")
                if dest not in roster:
                    raise ScenarioValidationError(f'{mpath}.dest', f"未知节点 {dest}")

        for i, failure in enumerate(scenario.failures):
            if failure.peer not in roster:
                raise ScenarioValidationError(f'failures[{i}].peer', f"未知节点 {failure.peer}")
            if failure.time < 0:
                raise ScenarioValidationError(f'failures[{i}].time', "时间不能为负")

        for i, probe in enumerate(scenario.access_probes):
            path = f'access_probes[{i}]'
            if probe.host not in roster:
                raise ScenarioValidationError(f'{path}.host', f"未知节点 {probe.host}")
            if probe.job not in job_threads:
                raise ScenarioValidationError(f'{path}.job', f"未知作业 {probe.job}")
            if not 0 <= probe.thread < job_threads[probe.job]:
                raise ScenarioValidationError(f'{path}.thread', f"线程序号越界: {probe.thread}")
            if probe.accessor_job is not None:
                if probe.accessor_job not in job_threads:
                    raise ScenarioValidationError(f'{path}.accessor_job', f"未知作业 {probe.accessor_job}")
                if not 0 <= probe.accessor_thread < job_threads[probe.accessor_job]:
                    raise ScenarioValidationError(f'{path}.accessor_thread', "线程序号越界")
            if probe.time < 0:
                raise ScenarioValidationError(f'{path}.time', "时间不能为负")

    @staticmethod
    def save_to_file(scenario: Scenario, file_path: Path) -> None:
        """保存场景到文件"""
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(ScenarioParser.to_dict(scenario), f, indent=2, ensure_ascii=False)

    @staticmethod
    def _link_to_dict(link: LinkMetrics) -> Dict[str, Any]:
        return {'rtt': link.rtt, 'loss': link.packet_loss, 'mss': link.mss}

    @staticmethod
    def to_dict(scenario: Scenario) -> Dict[str, Any]:
        """将 Scenario 转换为字典，重新解析得到相等的对象"""
        topo = scenario.topology
        if topo.generate is not None:
            gen = topo.generate
            topology = {'generate': {'peers': gen.peers, 'rtt_range': list(gen.rtt_range),
                                     'loss_range': list(gen.loss_range), 'mss': gen.mss,
                                     'model': gen.model}}
        else:
            topology = {'peers': list(topo.peers)}
            if topo.default_link is not None:
                topology['default_link'] = ScenarioParser._link_to_dict(topo.default_link)
            topology['links'] = [
                {'a': a, 'b': b, **ScenarioParser._link_to_dict(m)}
                for (a, b), m in sorted(topo.links.items())
            ]

        return {
            'format': SCENARIO_FORMAT,
            'version': SCENARIO_VERSION,
            'name': scenario.name,
            'seed': scenario.seed,
            'duration': scenario.duration,
            'tick_length': scenario.tick_length,
            'propagation_interval': scenario.propagation_interval,
            'lim': scenario.lim,
            'hysteresis': scenario.hysteresis,
            'broker_weights': scenario.broker_weights.to_dict(),
            'topology': topology,
            'peers': [
                {'id': p.id, 'join_time': p.join_time, 'cpu_capacity': p.cpu_capacity,
                 'mem_total': p.mem_total, 'storage_total': p.storage_total, 'load': p.load,
                 'policy': p.policy.to_dict() if p.policy else None}
                for p in scenario.peers
            ],
            'jobs': [
                {'id': j.id, 'submitter': j.submitter, 'submit_time': j.submit_time,
                 'task': {'name': j.task.name, 'params': dict(j.task.params)},
                 'requirements': {'min_cpu': j.requirements.min_cpu,
                                  'min_mem': j.requirements.min_mem,
                                  'min_storage': j.requirements.min_storage,
                                  'data_size': j.requirements.data_size,
                                  'interactive': j.requirements.interactive},
                 'demand': {'cpu': j.demand.cpu, 'mem': j.demand.mem, 'storage': j.demand.storage},
                 'duration': j.duration,
                 'migrations': [{'at': at, 'thread': t, 'dest': d} for at, t, d in j.migrations]}
                for j in scenario.jobs
            ],
            'failures': [{'peer': f.peer, 'time': f.time} for f in scenario.failures],
            'access_probes': [
                {'time': p.time, 'host': p.host, 'job': p.job, 'thread': p.thread,
                 'accessor_job': p.accessor_job, 'accessor_thread': p.accessor_thread}
                for p in scenario.access_probes
            ],
        }


def _parse_action(value: str, path: str) -> ViolationAction:
    try:
        return ViolationAction(value)
    except ValueError:
        raise ScenarioParseError(f"未知违规处理方式: {value}", field=f'{path}.on_violation') from None


def load_scenario(path: Path) -> Scenario:
    return ScenarioParser.load_from_file(path)
