"""
响应工具模块
为每个CLI命令提供统一的输出格式：成功写stdout，失败写stderr，并返回退出码
"""

import sys
import json
from datetime import datetime


def _emit(payload, stream):
    stream.write(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2))
    stream.write('\n')
    stream.flush()


def success_response(data=None, stream=None):
    """
    成功响应

    参数:
        data: 响应数据（可JSON序列化）
        stream: 输出流，默认stdout

    返回:
        int: 退出码0
    """
    response = {
        'code': 0,
        'message': 'success',
        'data': data,
        'timestamp': int(datetime.now().timestamp())
    }
    _emit(response, stream or sys.stdout)
    return 0


def error_response(code, message, errors=None, stream=None):
    """
    错误响应

    参数:
        code: 退出码 (1 参数错误, 2 数据错误, 3 数值错误)
        message: 错误消息
        errors: 详细错误信息（可选）
        stream: 输出流，默认stderr

    返回:
        int: 退出码
    """
    response = {
        'code': code,
        'message': message,
        'timestamp': int(datetime.now().timestamp())
    }

    if errors:
        response['errors'] = errors

    _emit(response, stream or sys.stderr)
    return code


def write_json_artifact(path, data):
    """
    写入JSON产物，键排序、无时间戳，保证同样输入得到同样的字节

    参数:
        path: 目标路径
        data: 可JSON序列化的数据
    """
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, sort_keys=True, indent=2)
        f.write('\n')
