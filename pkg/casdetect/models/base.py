"""
基础模型类
所有领域记录类型的基类，提供字典转换和统一的repr
"""

import dataclasses
import enum

import numpy as np


class BaseModel:
    """
    基础模型类
    子类都是dataclass，to_dict用于写JSON报告和日志
    """

    def to_dict(self, exclude=None):
        """
        将模型转换为字典

        参数:
            exclude: 要排除的字段列表

        返回:
            字典格式的模型数据
        """
        if exclude is None:
            exclude = []

        data = {}
        for field in dataclasses.fields(self):
            if field.name in exclude:
                continue
            data[field.name] = _plain(getattr(self, field.name))
        return data

    @classmethod
    def from_dict(cls, data):
        """
        从字典创建实例，忽略未知键

        参数:
            data: 字典数据

        返回:
            模型实例
        """
        names = {field.name for field in dataclasses.fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in names})

    def __repr__(self):
        fields = ', '.join(
            f"{field.name}={_short(getattr(self, field.name))}"
            for field in dataclasses.fields(self) if field.repr
        )
        return f"<{self.__class__.__name__} {fields}>"


def _plain(value):
    # 处理特殊类型
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, BaseModel):
        return value.to_dict()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _short(value):
    if isinstance(value, np.ndarray):
        return f"ndarray{value.shape}"
    if isinstance(value, (list, tuple)) and len(value) > 4:
        return f"[{len(value)} items]"
    return repr(value)
