"""
产物写入模块
所有产物先写临时文件再 os.replace，避免中断时留下半截文件；JSON 产物统一带 schema_version
"""

import json
import os
import tempfile
from typing import Any, Dict, Iterable

SCHEMA_VERSION = 1


def atomic_write_bytes(path: str, data: bytes):
    """原子写入：同目录临时文件 + 重命名"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(payload: Dict[str, Any]) -> str:
    """带 schema_version 的稳定 JSON 文本（键排序，便于逐字节比较）"""
    body = {"schema_version": SCHEMA_VERSION}
    body.update(payload)
    return json.dumps(body, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def write_json(path: str, payload: Dict[str, Any]):
    atomic_write_text(path, dumps_json(payload))


def write_jsonl(path: str, rows: Iterable[Dict[str, Any]]):
    lines = [json.dumps(row, ensure_ascii=False, sort_keys=True) for row in rows]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
