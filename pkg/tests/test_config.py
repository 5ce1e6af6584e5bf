# gridos/tests/test_config.py
import json
from pathlib import Path

from config import DATA_DIR, Config, select_data_dir, user_data_dir


def test_missing_file_keeps_defaults(tmp_path):
    cfg = Config(tmp_path / 'config.json')
    assert cfg.get('discovery.lim') == 8
    assert cfg.get('broker.weights.bandwidth') == 0.3
    assert cfg.get('discovery.nothing', 'x') == 'x'


def test_user_file_merges_by_key(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'discovery': {'lim': 3}, 'broker': {'weights': {'cpu': 0.5}}}),
                    encoding='utf-8')
    cfg = Config(path)
    assert cfg.get('discovery.lim') == 3
    assert cfg.get('discovery.hysteresis') == 0.10
    assert cfg.get('broker.weights.cpu') == 0.5
    assert cfg.get('broker.weights.mem') == 0.2


def test_bad_file_keeps_defaults(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('{not json', encoding='utf-8')
    assert Config(path).get('discovery.lim') == 8
    path.write_text('[1, 2]', encoding='utf-8')
    assert Config(path).get('discovery.lim') == 8


def test_set_and_save_round_trip(tmp_path):
    path = tmp_path / 'nested' / 'config.json'
    cfg = Config(path)
    cfg.set('discovery.lim', 5)
    cfg.set('experiment.label', '中文')
    cfg.save()
    assert '中文' in path.read_text(encoding='utf-8')
    reloaded = Config(path)
    assert reloaded.get('discovery.lim') == 5
    assert reloaded.get('experiment.label') == '中文'


def test_environment_does_not_select_config(tmp_path, monkeypatch):
    override = tmp_path / 'other.json'
    override.write_text(json.dumps({'discovery': {'lim': 2}}), encoding='utf-8')
    monkeypatch.setenv('GRIDOS_CONFIG', str(override))
    monkeypatch.setenv('GRIDOS_DATA_DIR', str(tmp_path))
    cfg = Config()
    assert cfg.config_path == DATA_DIR / 'config.json'
    assert cfg.config_path != override


def test_data_dir_prefers_project_directory(tmp_path):
    assert select_data_dir(tmp_path, 'linux') == user_data_dir('linux')
    (tmp_path / 'data').mkdir()
    assert select_data_dir(tmp_path, 'linux') == tmp_path / 'data'


def test_user_data_dir_per_platform():
    home = Path.home()
    assert user_data_dir('linux') == home / '.local' / 'share' / 'GridOS'
    assert user_data_dir('darwin') == home / 'Library' / 'Application Support' / 'GridOS'
    assert user_data_dir('win32') == home / 'AppData' / 'Roaming' / 'GridOS'


def test_get_path_creates_directory(tmp_path):
    cfg = Config(tmp_path / 'config.json')
    cfg.set('paths.runs', str(tmp_path / 'runs'))
    path = cfg.get_path('runs')
    assert path == tmp_path / 'runs'
    assert path.is_dir()
