"""
异常定义
每个异常携带CLI退出码和结构化的details，由main.py统一转换成错误响应
"""


class CasError(Exception):
    """所有流水线错误的基类"""

    exit_code = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        data = {'type': self.__class__.__name__, 'message': self.message}
        if self.details:
            data['details'] = {k: _jsonable(v) for k, v in self.details.items()}
        return data


class UsageError(CasError):
    """参数或配置文件错误"""
    exit_code = 1


class DataError(CasError):
    """输入数据错误：WAV、标签、清单、数据集"""
    exit_code = 2


class ShapeError(DataError):
    """张量或特征矩阵形状不匹配"""

    def __init__(self, message, expected=None, actual=None, **details):
        super().__init__(f"{message}: expected {expected}, got {actual}",
                         expected=expected, actual=actual, **details)


class NumericError(CasError):
    """非有限的损失或梯度"""
    exit_code = 3


class StateError(CasError):
    """调用顺序错误，例如没有前向缓存就做反向"""
    exit_code = 3


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, (str, int, float, bool, list, dict)) or value is None:
        return value
    return str(value)
