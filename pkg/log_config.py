# gridos/log_config.py
"""
全局日志配置
"""
import logging
import os
import sys
from pathlib import Path

# 需要输出的日志器：入口和各个包
LOGGER_NAMES = ('gridos', 'config', 'core', 'security', 'sim')


def setup_global_logging():
    """设置全局日志配置"""
    # 获取项目根目录
    root_dir = Path(__file__).parent

    # 创建日志目录
    log_dir = root_dir / 'logs'
    log_dir.mkdir(exist_ok=True)

    # 日志文件
    log_file = log_dir / 'gridos.log'

    # 配置日志格式
    formatter = logging.Formatter(
        '%(asctime)s [%(name)s] %(levelname)s: %(message)s',
        datefmt='%H:%M:%S'
    )

    # 文件处理器
    file_handler = logging.FileHandler(log_file, encoding='utf-8', mode='w')
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)

    # 控制台处理器，级别由 GRIDOS_LOG_LEVEL 决定
    level_name = os.environ.get('GRIDOS_LOG_LEVEL', 'INFO').upper()
    console_level = getattr(logging, level_name, logging.INFO)
    if not isinstance(console_level, int):
        console_level = logging.INFO
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(formatter)

    for name in LOGGER_NAMES:
        package_logger = logging.getLogger(name)
        package_logger.setLevel(logging.DEBUG)
        package_logger.propagate = False
        package_logger.handlers.clear()
        package_logger.addHandler(file_handler)
        package_logger.addHandler(console_handler)

    return logging.getLogger('gridos')


# 创建全局日志器
logger = setup_global_logging()
