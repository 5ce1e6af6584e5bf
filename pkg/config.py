# gridos/config.py
"""
配置文件 - 仿真默认参数和输出路径
用户配置 DATA_DIR/config.json 按键合并到默认值之上
"""
import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

APP_NAME = 'GridOS'
BASE_DIR = Path(__file__).parent


def user_data_dir(platform: str = sys.platform) -> Path:
    """各平台的用户数据目录"""
    if platform == 'win32':
        return Path.home() / 'AppData' / 'Roaming' / APP_NAME
    if platform == 'darwin':
        return Path.home() / 'Library' / 'Application Support' / APP_NAME
    if platform.startswith('linux'):
        return Path.home() / '.local' / 'share' / APP_NAME
    return BASE_DIR / 'data'


def select_data_dir(base_dir: Path = BASE_DIR, platform: str = sys.platform) -> Path:
    """项目内 data/ 存在时使用它，否则使用用户数据目录（导入时不创建目录）"""
    project = base_dir / 'data'
    if project.exists():
        return project
    return user_data_dir(platform)


DATA_DIR = select_data_dir()

GIB = 1024 ** 3


class Config:
    """配置管理类"""

    DEFAULTS = {
        'network': {
            'mss': 1460,            # 字节
            'loss_floor': 1e-6,     # 丢包率下限，避免除零
        },
        'discovery': {
            'lim': 8,
            'hysteresis': 0.10,
            'propagation_interval': 1.0,
        },
        'broker': {
            'weights': {
                'cpu': 0.4,
                'mem': 0.2,
                'load': 0.1,
                'bandwidth': 0.3,
            },
            't_ref': 1.0,
        },
        'security': {
            'tick_length': 1.0,
        },
        'migration': {
            'max_forward_hops': 16,
        },
        'simulation': {
            'duration': 60.0,
            'check_invariants': False,
            'partition_trials': 20,
            'sweep_workers': 4,
        },
        'peer_defaults': {
            'cpu_capacity': 4.0,
            'mem_total': 8 * GIB,
            'storage_total': 100 * GIB,
            'load': 0.0,
        },
        'output': {
            'formats': ['trace', 'metrics', 'summary', 'audit'],
        },
        'paths': {
            'runs': str(DATA_DIR / 'runs'),
            'logs': str(BASE_DIR / 'logs'),
        },
    }

    def __init__(self, config_path: Optional[Path] = None):
        self.config_path = Path(config_path) if config_path is not None else DATA_DIR / 'config.json'
        self.settings: Dict[str, Any] = copy.deepcopy(self.DEFAULTS)
        self.load()

    def load(self) -> None:
        """合并用户配置；文件不存在时保持默认值"""
        if not self.config_path.exists():
            return
        try:
            overrides = json.loads(self.config_path.read_text(encoding='utf-8'))
        except (json.JSONDecodeError, OSError) as e:
            logger.warning(f"配置文件 {self.config_path} 加载失败，使用默认值: {e}")
            return
        if not isinstance(overrides, dict):
            logger.warning(f"配置文件 {self.config_path} 顶层不是对象，已忽略")
            return
        self._merge(self.settings, overrides)
        logger.debug(f"已加载配置: {self.config_path}")

    @classmethod
    def _merge(cls, target: Dict[str, Any], overrides: Dict[str, Any]) -> None:
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(target.get(key), dict):
                cls._merge(target[key], value)
            else:
                target[key] = value

    def get(self, key: str, default=None) -> Any:
        """按点分路径取值，例如 'broker.weights.cpu'"""
        node: Any = self.settings
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value: Any) -> None:
        """按点分路径设置值，缺少的中间层自动创建"""
        parts = key.split('.')
        node = self.settings
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value

    def save(self) -> None:
        """保存配置文件"""
        try:
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            self.config_path.write_text(
                json.dumps(self.settings, indent=2, ensure_ascii=False), encoding='utf-8')
        except OSError as e:
            logger.error(f"配置文件保存失败: {e}")

    def get_path(self, name: str) -> Path:
        """paths 下的目录，按需创建"""
        path = Path(self.get(f'paths.{name}') or DATA_DIR / name)
        path.mkdir(parents=True, exist_ok=True)
        return path


# 全局配置实例
config = Config()
