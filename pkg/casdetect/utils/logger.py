"""
日志管理模块
提供统一的日志记录功能，支持文件持久化和按日期切分
控制台输出走stderr，stdout留给命令的JSON响应
"""

import os
import sys
import time
import logging
import functools
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path

LOG_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s] [%(filename)s:%(lineno)d] - %(message)s'

# 训练逐epoch的日志量大，单独成文件
LOG_FILES = {'training': 'training_log'}


class LoggerManager:
    """按名字缓存logger，统一挂控制台和按天滚动的文件handler"""

    def __init__(self, config):
        self.config = config
        self.loggers = {}
        self.formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
        if self.config.LOG_TO_FILE:
            Path(self.config.LOG_DIR).mkdir(parents=True, exist_ok=True)

    def _daily_file(self, file_name, level=None):
        handler = TimedRotatingFileHandler(
            filename=os.path.join(self.config.LOG_DIR, file_name),
            when='midnight',
            backupCount=self.config.LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        handler.suffix = "%Y-%m-%d.log"
        handler.setFormatter(self.formatter)
        if level is not None:
            handler.setLevel(level)
        return handler

    def get_logger(self, name='casdetect', log_file=None):
        """
        获取日志记录器

        参数:
            name: 日志记录器名称
            log_file: 日志文件名（不含路径），默认按 LOG_FILES 或 casdetect_log

        返回:
            Logger对象
        """
        if name in self.loggers:
            return self.loggers[name]

        logger = logging.getLogger(name)
        logger.setLevel(getattr(logging, self.config.LOG_LEVEL.upper()))
        logger.propagate = False
        # 重新初始化时换掉旧配置的handler
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()

        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(self.formatter)
        logger.addHandler(console)

        if self.config.LOG_TO_FILE:
            logger.addHandler(self._daily_file(log_file or LOG_FILES.get(name, 'casdetect_log')))
            logger.addHandler(self._daily_file('error_log', logging.ERROR))

        self.loggers[name] = logger
        return logger


_logger_manager = None


def init_logger(config):
    """按配置重建日志管理器，已创建过的logger一并换成新配置"""
    global _logger_manager
    previous = _logger_manager
    _logger_manager = LoggerManager(config)
    if previous is not None:
        for name in previous.loggers:
            _logger_manager.get_logger(name)
    return _logger_manager


def get_logger(name='casdetect', log_file=None):
    """
    模块级入口，未初始化时按 CAS_ENV 的配置初始化

    参数:
        name: 日志记录器名称
        log_file: 日志文件名
    """
    if _logger_manager is None:
        from config.config import get_config
        init_logger(get_config())
    return _logger_manager.get_logger(name, log_file)


def log_performance(logger_name='casdetect'):
    """耗时装饰器，DEBUG级别"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            result = func(*args, **kwargs)
            get_logger(logger_name).debug(f"{func.__name__} 耗时 {time.perf_counter() - start:.3f}s")
            return result
        return wrapper
    return decorator


class LogContext:
    """
    记录一段操作的起止和耗时，异常照常抛出

        with LogContext('train_fold', 'training', fold=2, variant='MultiPath'):
            ...
    """

    def __init__(self, context_name, logger_name='casdetect', **context_data):
        self.context_name = context_name
        self.context_data = context_data
        self.logger = get_logger(logger_name)
        self.start = None

    def __enter__(self):
        fields = ', '.join(f"{k}={v}" for k, v in self.context_data.items())
        self.logger.info(f"[{self.context_name}] 开始 {fields}")
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        elapsed = time.perf_counter() - self.start
        if exc_type:
            self.logger.error(f"[{self.context_name}] 失败 ({elapsed:.2f}s): {exc_val}")
        else:
            self.logger.info(f"[{self.context_name}] 完成，耗时 {elapsed:.2f}s")
        return False
