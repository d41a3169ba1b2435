"""
配置模块
读取 TOML（或 JSON）流水线配置，合并 --set 覆盖项与环境变量，校验后得到各阶段的配置对象
"""

import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Dict, List, Optional, Sequence, Tuple

from module.corpus import DEFAULT_TWEET_KEYWORDS
from module.crawler import CrawlPolicy
from module.errors import ConfigError
from module.nn import ModelConfig
from module.seeding import derive_seed, sub_seeds
from module.textprep import PreprocessConfig
from module.train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "TWEETCHECK_OUTPUT_DIR"
DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                   "model_config", "default_config.toml")


@dataclass
class PathsConfig:
    tweets: str = "data/tweets.jsonl"
    trust_list: str = "data/trust_list.csv"
    corpus: str = ""  # 为空时使用 <output_dir>/corpus/labeled.jsonl
    output_dir: str = "out"


@dataclass
class CorpusConfig:
    keywords: List[str] = field(default_factory=lambda: list(DEFAULT_TWEET_KEYWORDS))
    keyword_filter: bool = True
    start_date: str = ""  # YYYY-MM-DD，闭区间
    end_date: str = ""
    dedup: bool = False
    train_ratio: float = 0.7
    cv_folds: int = 10

    def __post_init__(self):
        for name in ("start_date", "end_date"):
            value = getattr(self, name)
            if value:
                try:
                    date.fromisoformat(value)
                except ValueError as e:
                    raise ConfigError(f"corpus.{name} 不是合法日期 (YYYY-MM-DD): {value!r}") from e
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"corpus.train_ratio 必须在 (0, 1) 之间，当前为 {self.train_ratio}")
        if self.cv_folds < 2:
            raise ConfigError(f"corpus.cv_folds 必须 ≥ 2，当前为 {self.cv_folds}")
        if self.keyword_filter and not self.keywords:
            raise ConfigError("启用关键词过滤时 corpus.keywords 不能为空")

    def date_bounds(self):
        return (
            date.fromisoformat(self.start_date) if self.start_date else None,
            date.fromisoformat(self.end_date) if self.end_date else None,
        )


# 各配置节对应的数据类；由流水线推导、不允许在配置文件里出现的键
SECTIONS = {
    "paths": PathsConfig,
    "corpus": CorpusConfig,
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "crawl": CrawlPolicy,
}
DERIVED_KEYS = {
    "model": {"vocab_size", "max_sequence_length"},
    "train": {"seed"},
}


@dataclass
class PipelineConfig:
    seed: int = 42
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    crawl: CrawlPolicy = field(default_factory=CrawlPolicy)

    def sub_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def corpus_path(self) -> str:
        return self.paths.corpus or os.path.join(self.paths.output_dir, "corpus", "labeled.jsonl")

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"seed": self.seed, "sub_seeds": sub_seeds(self.seed)}
        for name in SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            for key in DERIVED_KEYS.get(name, ()):
                section.pop(key, None)
            payload[name] = section
        return payload


def _read_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"配置文件解析失败 {path}: {e}") from e


def _parse_value(text: str) -> Any:
    """按 TOML 值语法解析覆盖项；无法解析时当作普通字符串"""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> Tuple[List[str], Any]:
    if "=" not in item:
        raise ConfigError(f"覆盖项格式应为 section.key=value: {item!r}")
    key, _, value = item.partition("=")
    parts = [p.strip() for p in key.strip().split(".") if p.strip()]
    if not parts or len(parts) > 2:
        raise ConfigError(f"覆盖项格式应为 section.key=value: {item!r}")
    return parts, _parse_value(value.strip())


def _merge(target: Dict[str, Any], source: Dict[str, Any], origin: str):
    for key, value in source.items():
        if key == "seed":
            target["seed"] = value
            continue
        if key not in SECTIONS:
            raise ConfigError(f"{origin}: 未知的配置节 [{key}]")
        if not isinstance(value, dict):
            raise ConfigError(f"{origin}: [{key}] 必须是一个表")
        target.setdefault(key, {}).update(value)


def _coerce(section: str, name: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{name} 必须是布尔值，实际为 {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{name} 必须是整数，实际为 {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{name} 必须是数值，实际为 {value!r}")
        return float(value)
    if isinstance(default, str):
        if isinstance(value, date):
            return value.isoformat()
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{name} 必须是字符串，实际为 {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{section}.{name} 必须是字符串列表，实际为 {value!r}")
        return list(value)
    return value


def _build_section(name: str, values: Dict[str, Any]):
    cls = SECTIONS[name]
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - DERIVED_KEYS.get(name, set())
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"配置节 [{name}] 中未知的键: {key}")
        kwargs[key] = _coerce(name, key, getattr(defaults, key), value)
    return cls(**kwargs)


def load_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    environ: Optional[Dict[str, str]] = None
) -> PipelineConfig:
    """
    加载流水线配置

    优先级：默认值 < 配置文件 < 覆盖项（按给出顺序）< 环境变量 TWEETCHECK_OUTPUT_DIR

    Args:
        path: 配置文件路径（.toml 或 .json），None 时只用默认值
        overrides: "section.key=value" 或 "seed=N" 形式的覆盖项
        environ: 环境变量（默认 os.environ）

    Returns:
        PipelineConfig
    """
    raw: Dict[str, Any] = {}
    if path:
        _merge(raw, _read_file(path), path)
    for item in overrides:
        parts, value = parse_override(item)
        if len(parts) == 1:
            _merge(raw, {parts[0]: value}, "--set")
        else:
            _merge(raw, {parts[0]: {parts[1]: value}}, "--set")
    environ = os.environ if environ is None else environ
    if environ.get(OUTPUT_DIR_ENV):
        raw.setdefault("paths", {})["output_dir"] = environ[OUTPUT_DIR_ENV]

    seed = raw.get("seed", 42)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed 必须是非负整数，实际为 {seed!r}")
    sections = {name: _build_section(name, raw.get(name, {})) for name in SECTIONS}
    config = PipelineConfig(seed=seed, **sections)
    logger.debug(f"有效配置: {json.dumps(config.to_dict(), ensure_ascii=False)}")
    return config
