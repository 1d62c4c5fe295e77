#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
输入输出工具
读取 Matrix Market 矩阵、CSV 边际向量、JSONL 选择数据和转移图 JSON，写出确定性的 JSON 报告

文本文件先用 chardet 检测编码，置信度不足时依次尝试配置中的备用编码
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import chardet
import numpy as np
import scipy.io

from core.errors import InvalidInput, InvalidObservation
from core.logger_manager import get_logger
from core.model import BalancingProblem, NonnegMatrix, build_problem
from workflows.choice import ChoiceDataset, ChoiceObservation, TransitionGraph, decompose_ranking

DEFAULT_MIN_CONFIDENCE = 0.7
DEFAULT_FALLBACK_ENCODINGS = ["utf-8", "utf-8-sig", "gbk", "latin1"]

PathLike = Union[str, Path]
logger = get_logger("loaders")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise InvalidInput(f"无法读取文件: {path} - {e}", {"path": str(path)}) from e


def read_text(path: PathLike, config_manager=None) -> str:
    """
    读取文本文件并自动识别编码

    Raises:
        InvalidInput: 文件不存在或无法用任何编码解码
    """
    raw = _read_bytes(path)
    if config_manager is not None:
        min_confidence = config_manager.get_min_confidence()
        fallbacks = config_manager.get_fallback_encodings()
    else:
        min_confidence, fallbacks = DEFAULT_MIN_CONFIDENCE, DEFAULT_FALLBACK_ENCODINGS

    detection = chardet.detect(raw) if raw else None
    if detection and detection.get("encoding") and detection.get("confidence", 0.0) >= min_confidence:
        encoding = detection["encoding"].lower()
        try:
            return raw.decode(encoding)
        except (UnicodeDecodeError, LookupError):
            logger.debug(f"按检测到的编码 {encoding} 解码失败: {path}")

    for encoding in fallbacks:
        try:
            return raw.decode(encoding)
        except (UnicodeDecodeError, LookupError):
            continue
    raise InvalidInput(f"无法识别文件编码: {path}", {"path": str(path)})


def read_matrix(path: PathLike) -> NonnegMatrix:
    """
    读取 Matrix Market 坐标格式的实数矩阵

    Raises:
        InvalidInput: 文件缺失、格式不是 coordinate/real/general，或数值非法
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"矩阵文件不存在: {path}", {"path": str(path)})
    try:
        _, _, _, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except (ValueError, OSError) as e:
        raise InvalidInput(f"无法解析 Matrix Market 头部: {path} - {e}") from e
    if fmt != "coordinate" or field not in ("real", "integer") or symmetry != "general":
        raise InvalidInput(
            f"只支持 coordinate/real/general 格式，实际为 {fmt}/{field}/{symmetry}",
            {"path": str(path)}
        )
    try:
        entries = scipy.io.mmread(str(path))
    except (ValueError, OSError) as e:
        raise InvalidInput(f"读取矩阵失败: {path} - {e}") from e
    return NonnegMatrix(entries.tocsr())


def read_vector(path: PathLike, config_manager=None) -> np.ndarray:
    """
    读取单列 CSV 向量，表头为 value

    Raises:
        InvalidInput: 缺少表头或存在非数值
    """
    text = read_text(path, config_manager)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "value" not in [name.strip() for name in reader.fieldnames]:
        raise InvalidInput(f"CSV 文件缺少 value 表头: {path}", {"path": str(path)})
    values = []
    for line_number, row in enumerate(reader, start=2):
        cell = {k.strip(): v for k, v in row.items() if k is not None}.get("value")
        try:
            values.append(float(cell))
        except (TypeError, ValueError):
            raise InvalidInput(f"第 {line_number} 行不是数值: {cell!r}",
                               {"path": str(path), "line": line_number})
    return np.array(values, dtype=np.float64)


def load_problem(matrix_path: PathLike, row_path: PathLike, col_path: PathLike,
                 config_manager=None) -> BalancingProblem:
    """读取 (A, p, q) 三个文件并构造平衡问题"""
    return build_problem(read_matrix(matrix_path), read_vector(row_path, config_manager),
                         read_vector(col_path, config_manager))


def _parse_choice_line(record: Any, line_number: int) -> List[ChoiceObservation]:
    if not isinstance(record, dict):
        raise InvalidObservation(f"第 {line_number} 行必须是 JSON 对象", {"line": line_number})
    if "ranking" in record:
        return decompose_ranking(record["ranking"])
    if "chosen" in record and "set" in record:
        return [ChoiceObservation(record["chosen"], frozenset(record["set"]))]
    raise InvalidObservation(f"第 {line_number} 行缺少 chosen/set 或 ranking 字段",
                             {"line": line_number})


def read_choice_data(path: PathLike, config_manager=None) -> ChoiceDataset:
    """
    读取 JSONL 选择数据，每行为 {"chosen": x, "set": [...]} 或 {"ranking": [...]}

    全部为排序时保留排序形式

    Raises:
        InvalidObservation: 某一行非法，details 中给出行号
    """
    text = read_text(path, config_manager)
    observations: List[ChoiceObservation] = []
    rankings: List[List[str]] = []
    all_rankings = True
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            observations.extend(_parse_choice_line(record, line_number))
        except json.JSONDecodeError as e:
            raise InvalidObservation(f"第 {line_number} 行不是合法 JSON: {e.msg}",
                                     {"line": line_number}) from e
        except InvalidObservation as e:
            details = dict(e.details, line=line_number)
            raise type(e)(f"第 {line_number} 行: {e.message}", details) from e
        if "ranking" in record:
            rankings.append([str(item) for item in record["ranking"]])
        else:
            all_rankings = False

    logger.info(f"读取选择数据: {path}, 观测 {len(observations)} 条")
    return ChoiceDataset(observations, rankings=rankings if all_rankings and rankings else None)


def read_transition_graph(path: PathLike, config_manager=None) -> TransitionGraph:
    """
    读取转移图 JSON: {"edges": [{"source": a, "target": b, "count": c}, ...]}
    """
    try:
        payload = json.loads(read_text(path, config_manager))
        transitions = [(edge["source"], edge["target"], float(edge.get("count", 0)))
                       for edge in payload["edges"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InvalidInput(f"转移图文件格式错误: {path} - {e}", {"path": str(path)}) from e
    return TransitionGraph.from_transitions(transitions)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value) if isinstance(value, (set, frozenset)) else list(value)
    raise TypeError(f"无法序列化的类型: {type(value).__name__}")


def dumps_json(data: Dict[str, Any]) -> str:
    """确定性 JSON：键排序、两空格缩进、保留非 ASCII 字符"""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default)


def write_json(data: Dict[str, Any], path: Optional[PathLike] = None) -> str:
    """写出 JSON 报告；path 为空时只返回文本"""
    text = dumps_json(data) + "\n"
    if path is not None:
        write_text(text, path)
    return text


def write_text(text: str, path: PathLike):
    """以 UTF-8 写出文本，自动创建父目录"""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except OSError as e:
        raise InvalidInput(f"无法写入文件: {target} - {e}", {"path": str(target)}) from e
