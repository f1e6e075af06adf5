"""
配置管理模块
负责管理流水线的所有配置项，支持从环境变量、.env文件和KEY=VALUE配置文件加载
"""

import os
from dotenv import load_dotenv, dotenv_values

# 加载环境变量
load_dotenv()


def _env_float(name, default):
    return float(os.getenv(name, default))


def _env_int(name, default):
    return int(os.getenv(name, default))


def _env_bool(name, default):
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """基础配置类"""

    # 信号输入
    SAMPLE_RATE = _env_int('CAS_SAMPLE_RATE', 4000)
    EXPECTED_DURATION_S = _env_float('CAS_EXPECTED_DURATION_S', 15.0)

    # 预处理: 高通滤波 + STFT
    HIGHPASS_CUTOFF_HZ = _env_float('CAS_HIGHPASS_CUTOFF_HZ', 80.0)
    HIGHPASS_ORDER = _env_int('CAS_HIGHPASS_ORDER', 4)
    N_FFT = _env_int('CAS_N_FFT', 256)
    HOP_LENGTH = _env_int('CAS_HOP_LENGTH', 64)

    # MFCC
    N_MELS = _env_int('CAS_N_MELS', 40)
    MEL_FMIN_HZ = _env_float('CAS_MEL_FMIN_HZ', 0.0)
    MEL_FMAX_HZ = _env_float('CAS_MEL_FMAX_HZ', 2000.0)
    LOG_FLOOR = _env_float('CAS_LOG_FLOOR', 1e-10)
    N_MFCC = _env_int('CAS_N_MFCC', 20)
    DELTA_HALF_WIDTH = _env_int('CAS_DELTA_HALF_WIDTH', 2)

    # 后处理
    MERGE_GAP_S = _env_float('CAS_MERGE_GAP_S', 0.5)
    MERGE_PEAK_HZ = _env_float('CAS_MERGE_PEAK_HZ', 25.0)
    MIN_EVENT_DURATION_S = _env_float('CAS_MIN_EVENT_DURATION_S', 0.05)

    # 训练
    LR0 = _env_float('CAS_LR0', 1e-4)
    DECAY_FACTOR = _env_float('CAS_DECAY_FACTOR', 0.2)
    PLATEAU_PATIENCE = _env_int('CAS_PLATEAU_PATIENCE', 10)
    EARLY_STOP_PATIENCE = _env_int('CAS_EARLY_STOP_PATIENCE', 50)
    N_FOLDS = _env_int('CAS_N_FOLDS', 5)
    BATCH_SIZE = _env_int('CAS_BATCH_SIZE', 16)
    MAX_EPOCHS = _env_int('CAS_MAX_EPOCHS', 200)

    # 模型
    GRU_HIDDEN = _env_int('CAS_GRU_HIDDEN', 256)
    DROPOUT_RATE = _env_float('CAS_DROPOUT_RATE', 0.1)
    WIDTH_SCALE = _env_float('CAS_WIDTH_SCALE', 1.0)

    # 随机种子（所有随机性的根）
    SEED = _env_int('CAS_SEED', 0)

    # 日志配置
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'DEBUG')
    LOG_DIR = os.getenv('LOG_DIR', 'logs')
    LOG_TO_FILE = _env_bool('LOG_TO_FILE', True)
    LOG_BACKUP_COUNT = 30

    # 输出
    OUTPUT_DIR = os.getenv('CAS_OUTPUT_DIR', 'runs')
    BENCHMARK_REPETITIONS = _env_int('CAS_BENCHMARK_REPETITIONS', 30)


class DevelopmentConfig(Config):
    """开发环境配置"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class TestingConfig(Config):
    """测试环境配置，不写日志文件"""
    DEBUG = True
    LOG_LEVEL = 'WARNING'
    LOG_TO_FILE = False


class ProductionConfig(Config):
    """生产环境配置"""
    DEBUG = False
    LOG_LEVEL = 'INFO'

    @classmethod
    def validate(cls):
        """验证生产环境的常量组合是否自洽"""
        if not 0 < cls.DECAY_FACTOR < 1:
            raise ValueError(f"CAS_DECAY_FACTOR 必须在 (0, 1) 内: {cls.DECAY_FACTOR}")
        if cls.PLATEAU_PATIENCE >= cls.EARLY_STOP_PATIENCE:
            raise ValueError("CAS_PLATEAU_PATIENCE 必须小于 CAS_EARLY_STOP_PATIENCE")
        if cls.SAMPLE_RATE <= 2 * cls.HIGHPASS_CUTOFF_HZ:
            raise ValueError("CAS_SAMPLE_RATE 过低，无法使用当前高通截止频率")


# 配置映射
config_map = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}


def get_config(env=None):
    """
    获取配置对象

    参数:
        env: 环境名称，如果不提供则从CAS_ENV环境变量获取

    返回:
        配置类
    """
    if env is None:
        env = os.getenv('CAS_ENV', 'development')

    config_class = config_map.get(env, DevelopmentConfig)

    if env == 'production':
        config_class.validate()

    return config_class


def load_run_config(path):
    """
    读取KEY=VALUE格式的运行配置文件

    参数:
        path: 配置文件路径

    返回:
        dict: 小写键名 -> 字符串值（空值被丢弃）
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    values = dotenv_values(path)
    return {key.strip().lower(): value for key, value in values.items() if value not in (None, '')}
