"""
检查点格式
    8字节魔数 b'CASCKPT1'
    4字节小端头长度
    JSON头: format_version、model_spec、seed、tensors [{name, shape, kind, offset, count}]
    小端float64原始数据
同一种子得到逐字节相同的文件
"""

import json
import struct

import numpy as np

from casdetect.utils.exceptions import DataError

MAGIC = b'CASCKPT1'
FORMAT_VERSION = 1


def save_checkpoint(path, model, extra=None):
    """
    保存模型参数和BatchNorm滑动统计量

    参数:
        path: 目标路径
        model: Model
        extra: 额外写进头部的信息（例如阈值、fold编号）
    """
    entries = [(name, 'param', value) for name, value in sorted(model.named_params().items())]
    entries += [(name, 'state', value) for name, value in sorted(model.named_state().items())]

    index, offset = [], 0
    for name, kind, value in entries:
        index.append({'name': name, 'kind': kind, 'shape': list(value.shape), 'offset': offset, 'count': int(value.size)})
        offset += int(value.size)

    header = {
        'format_version': FORMAT_VERSION,
        'model_spec': model.spec.to_dict(),
        'seed': model.spec.seed,
        'tensors': index,
        'extra': extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', len(header_bytes)))
        f.write(header_bytes)
        for _, _, value in entries:
            f.write(np.ascontiguousarray(value, dtype='<f8').tobytes())


def read_checkpoint_header(path):
    with open(path, 'rb') as f:
        if f.read(8) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file", field='magic')
        (length,) = struct.unpack('<I', f.read(4))
        header = json.loads(f.read(length).decode('utf-8'))
        if header.get('format_version') != FORMAT_VERSION:
            raise DataError(f"{path}: checkpoint version {header.get('format_version')} unsupported",
                            field='format_version')
        return header, f.tell()


def load_checkpoint(path):
    """
    读取检查点并重建模型

    返回:
        (Model, 头部extra字典)
    """
    from casdetect.architectures import ModelSpec, build_model

    header, payload_start = read_checkpoint_header(path)
    model = build_model(ModelSpec(**header['model_spec']))
    payload = np.fromfile(path, dtype='<f8', offset=payload_start)

    expected = set(model.named_params()) | set(model.named_state())
    stored = {entry['name'] for entry in header['tensors']}
    if stored != expected:
        raise DataError(f"{path}: tensor names do not match the model spec",
                        field='tensors', missing=sorted(expected - stored), unexpected=sorted(stored - expected))

    for entry in header['tensors']:
        chunk = payload[entry['offset']:entry['offset'] + entry['count']]
        if chunk.size != entry['count']:
            raise DataError(f"{path}: truncated payload at tensor {entry['name']}", field='payload')
        model.set_tensor(entry['name'], chunk.reshape(entry['shape']).astype(np.float64))
    return model, header.get('extra', {})
