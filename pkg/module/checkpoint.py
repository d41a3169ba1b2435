"""
检查点模块
参数容器（与 .npz 兼容的 zip：每个参数一个小端 float64 数组 + 格式版本条目）和 JSON 侧车文件
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from module.artifacts import atomic_write_bytes, dumps_json, atomic_write_text
from module.errors import ConfigError, SchemaError
from module.nn import ModelConfig, ModelGraph, build_model
from module.tensor import ShapeError
from module.textprep import PreprocessConfig, Vocabulary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FORMAT_VERSION_KEY = "__format_version__"
# 固定的 zip 条目时间，使相同参数得到逐字节相同的文件
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class LoadedModel:
    graph: ModelGraph
    preprocess: PreprocessConfig
    vocab_checksum: str


def _entry(archive: zipfile.ZipFile, name: str, array: np.ndarray):
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, array, allow_pickle=False)
    info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
    info.external_attr = 0o644 << 16
    archive.writestr(info, buffer.getvalue(), compress_type=zipfile.ZIP_STORED)


def parameters_to_bytes(arrays: Dict[str, np.ndarray]) -> bytes:
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        _entry(archive, FORMAT_VERSION_KEY, np.array(FORMAT_VERSION, dtype="<i8"))
        for name, array in arrays.items():
            _entry(archive, name, np.ascontiguousarray(array, dtype="<f8"))
    return buffer.getvalue()


def save_parameters(path: str, arrays: Dict[str, np.ndarray]):
    atomic_write_bytes(path, parameters_to_bytes(arrays))


def load_parameters(path: str) -> Dict[str, np.ndarray]:
    """
    读取参数容器

    Args:
        path: 检查点路径

    Returns:
        参数名 → float64 数组
    """
    try:
        with np.load(path, allow_pickle=False) as container:
            names = list(container.files)
            if FORMAT_VERSION_KEY not in names:
                raise SchemaError(f"检查点缺少格式版本: {path}")
            version = int(container[FORMAT_VERSION_KEY])
            if version != FORMAT_VERSION:
                raise SchemaError(f"不支持的检查点格式版本 {version}: {path}")
            return {
                name: container[name].astype(np.float64)
                for name in names if name != FORMAT_VERSION_KEY
            }
    except FileNotFoundError as e:
        raise ConfigError(f"检查点不存在: {path}") from e
    except (zipfile.BadZipFile, ValueError) as e:
        raise SchemaError(f"检查点文件损坏: {path}") from e


def sidecar_payload(graph: ModelGraph, preprocess: PreprocessConfig, vocab: Vocabulary) -> Dict[str, Any]:
    return {
        "architecture": graph.architecture,
        "format_version": FORMAT_VERSION,
        "model_config": graph.config.to_dict(),
        "parameter_count": graph.parameter_count(),
        "preprocess_config": preprocess.to_dict(),
        "vocab_checksum": vocab.checksum(),
    }


def save_model(graph: ModelGraph, checkpoint_path: str, sidecar_path: str, preprocess: PreprocessConfig, vocab: Vocabulary):
    """写出参数容器与侧车 JSON"""
    save_parameters(checkpoint_path, graph.state_dict())
    atomic_write_text(sidecar_path, dumps_json(sidecar_payload(graph, preprocess, vocab)))
    logger.info(f"模型已保存: {checkpoint_path}（{graph.parameter_count()} 个参数）")


def load_model(checkpoint_path: str, sidecar_path: str) -> LoadedModel:
    """
    按侧车记录的结构重建模型并载入参数，名称与形状必须完全一致

    Args:
        checkpoint_path: 参数容器路径
        sidecar_path: 侧车 JSON 路径

    Returns:
        LoadedModel
    """
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"模型侧车文件不存在: {sidecar_path}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"模型侧车文件不是合法 JSON: {sidecar_path}") from e
    for key in ("architecture", "model_config", "preprocess_config", "vocab_checksum"):
        if key not in sidecar:
            raise SchemaError(f"模型侧车文件缺少字段 {key}: {sidecar_path}")
    try:
        graph = build_model(sidecar["architecture"], ModelConfig(**sidecar["model_config"]))
        preprocess = PreprocessConfig(**sidecar["preprocess_config"])
    except (TypeError, ConfigError) as e:
        raise SchemaError(f"模型侧车文件内容无效: {e}") from e
    try:
        graph.load_state_dict(load_parameters(checkpoint_path))
    except ShapeError as e:
        raise SchemaError(f"检查点与模型结构不一致: {e}") from e
    return LoadedModel(graph=graph, preprocess=preprocess, vocab_checksum=sidecar["vocab_checksum"])
