"""
CAS检测流水线
负责加载配置、初始化日志，供CLI和库调用方使用
"""

from config.config import get_config
from casdetect.utils.logger import init_logger, get_logger

__version__ = '1.0.0'


def create_app(env=None):
    """
    初始化运行环境

    参数:
        env: 环境名称 ('development', 'testing', 'production')，默认读取CAS_ENV

    返回:
        配置类
    """
    config = get_config(env)
    init_logger(config)
    get_logger('casdetect').debug(f"运行环境初始化完成，环境: {env or 'default'}，日志级别: {config.LOG_LEVEL}")
    return config
