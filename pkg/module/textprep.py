"""
文本预处理模块
清洗 → 分词 → 去停用词 → 词干化 → 建词表 → 编码 → 填充，输出定长整数序列
"""

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer

from module.artifacts import atomic_write_text
from module.errors import ConfigError, DataError, SchemaError

logger = logging.getLogger(__name__)

PAD_INDEX = 0
OOV_INDEX = 1
VOCAB_SCHEMA_VERSION = 1

RESOURCES_DIR = Path(__file__).resolve().parent.parent / "resources"
DEFAULT_STOPWORDS_PATH = RESOURCES_DIR / "stopwords" / "stopwords_en.txt"
# 随仓库发布的 179 词英文停用词表
SHIPPED_STOPWORDS_SHA256 = "019f104ba2ed07436d05f9cdd3383034ad66014edc27fc651f837e1a038b6451"

_URL_PATTERN = re.compile(r"https?://\S+|\bt\.co/\S*", re.IGNORECASE)
_NON_LETTER = re.compile(r"[^a-z ]")
_WHITESPACE = re.compile(r"\s+")
_HASHTAG = re.compile(r"#(\w+)")

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@dataclass
class PreprocessConfig:
    """预处理配置"""

    max_sequence_length: int = 64
    pad_mode: str = "pre"
    stem: bool = True
    min_token_frequency: int = 2
    max_vocab_size: int = 0  # 0 表示不限
    stopwords_path: str = ""  # 空字符串表示使用随仓库发布的列表

    def __post_init__(self):
        if self.max_sequence_length < 1:
            raise ConfigError(f"preprocess.max_sequence_length 必须 ≥ 1，当前为 {self.max_sequence_length}")
        if self.pad_mode not in ("pre", "post"):
            raise ConfigError(f"preprocess.pad_mode 只能是 pre 或 post，当前为 {self.pad_mode!r}")
        if self.min_token_frequency < 1:
            raise ConfigError("preprocess.min_token_frequency 必须 ≥ 1")
        if self.max_vocab_size < 0:
            raise ConfigError("preprocess.max_vocab_size 不能为负数")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ============================================================================
# 基础步骤
# ============================================================================

def clean_text(raw: str) -> str:
    """
    清洗推文文本

    依次执行：删除 URL（含裸 t.co 短链）→ 小写 → 非 [a-z ] 字符替换为空格 → 合并空白

    Args:
        raw: 原始文本

    Returns:
        只包含小写字母和单个空格的文本
    """
    text = _URL_PATTERN.sub(" ", raw)
    text = text.lower()
    text = _NON_LETTER.sub(" ", text)
    return _WHITESPACE.sub(" ", text).strip()


def tokenize(cleaned: str) -> List[str]:
    return [token for token in cleaned.split(" ") if token]


def remove_stopwords(tokens: Sequence[str], stopword_list: Iterable[str]) -> List[str]:
    stopwords = stopword_list if isinstance(stopword_list, (set, frozenset)) else set(stopword_list)
    return [token for token in tokens if token not in stopwords]


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    """经典 Porter 算法（原始定义）词干化"""
    return _stemmer.stem(token)


def extract_hashtags(text: str) -> List[str]:
    return [tag.lower() for tag in _HASHTAG.findall(text)]


def load_stopwords(path: Optional[str] = None, expected_sha256: Optional[str] = None) -> FrozenSet[str]:
    """
    加载停用词表（每行一个词，UTF-8）

    Args:
        path: 停用词文件路径，None 时使用随仓库发布的列表
        expected_sha256: 期望的校验和；使用内置列表时默认校验

    Returns:
        小写停用词集合
    """
    file_path = Path(path) if path else DEFAULT_STOPWORDS_PATH
    if not file_path.exists():
        raise ConfigError(f"停用词文件不存在: {file_path}")
    content = file_path.read_bytes()
    if expected_sha256 is None and file_path.resolve() == DEFAULT_STOPWORDS_PATH.resolve():
        expected_sha256 = SHIPPED_STOPWORDS_SHA256
    if expected_sha256 is not None:
        actual = hashlib.sha256(content).hexdigest()
        if actual != expected_sha256:
            raise DataError(f"停用词文件校验失败: {file_path}（sha256 {actual}）")
    words = frozenset(
        line.strip().lower() for line in content.decode("utf-8").splitlines() if line.strip()
    )
    logger.debug(f"加载 {len(words)} 个停用词: {file_path}")
    return words


# ============================================================================
# 词表
# ============================================================================

class Vocabulary:
    """token → index 映射；0 = PAD，1 = OOV，其余从 2 开始连续编号。构造后不可修改"""

    def __init__(self, token_to_index: Dict[str, int]):
        expected = set(range(2, 2 + len(token_to_index)))
        if set(token_to_index.values()) != expected:
            raise SchemaError("词表索引必须从 2 开始连续编号")
        self._token_to_index = dict(token_to_index)

    @property
    def token_to_index(self) -> Dict[str, int]:
        return dict(self._token_to_index)

    def __len__(self) -> int:
        return len(self._token_to_index) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._token_to_index == other._token_to_index

    def lookup(self, token: str) -> int:
        return self._token_to_index.get(token, OOV_INDEX)

    def checksum(self) -> str:
        ordered = sorted(self._token_to_index.items(), key=lambda item: item[1])
        payload = "\n".join(f"{token}\t{index}" for token, index in ordered)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json(self) -> Dict[str, Any]:
        return {
            "schema_version": VOCAB_SCHEMA_VERSION,
            "reserved": {"pad": PAD_INDEX, "oov": OOV_INDEX},
            "size": len(self),
            "checksum": self.checksum(),
            "tokens": self.token_to_index,
        }

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "Vocabulary":
        if payload.get("schema_version") != VOCAB_SCHEMA_VERSION:
            raise SchemaError(f"不支持的词表 schema_version: {payload.get('schema_version')}")
        if payload.get("reserved") != {"pad": PAD_INDEX, "oov": OOV_INDEX}:
            raise SchemaError("词表保留索引与约定不符")
        vocab = cls(payload.get("tokens", {}))
        if payload.get("checksum") != vocab.checksum():
            raise SchemaError("词表内容与记录的校验和不一致")
        return vocab

    def save(self, path: str):
        atomic_write_text(path, json.dumps(self.to_json(), ensure_ascii=False, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"词表文件不存在: {file_path}")
        try:
            payload = json.loads(file_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"词表文件不是合法 JSON: {file_path}") from e
        return cls.from_json(payload)


def build_vocab(corpus: Sequence[Sequence[str]], config: PreprocessConfig) -> Vocabulary:
    """
    按 (频次降序, token 升序) 排名建词表

    Args:
        corpus: token 列表的列表
        config: 预处理配置（min_token_frequency、max_vocab_size）

    Returns:
        Vocabulary
    """
    if not corpus:
        raise DataError("建词表需要非空语料")
    counts = Counter(token for tokens in corpus for token in tokens)
    ranked = sorted(
        (item for item in counts.items() if item[1] >= config.min_token_frequency),
        key=lambda item: (-item[1], item[0]),
    )
    if config.max_vocab_size:
        ranked = ranked[:config.max_vocab_size]
    vocab = Vocabulary({token: index + 2 for index, (token, _) in enumerate(ranked)})
    logger.info(f"词表构建完成: {len(vocab)} 个索引（{len(counts)} 个不同 token）")
    return vocab


def encode(tokens: Sequence[str], vocab: Vocabulary) -> List[int]:
    return [vocab.lookup(token) for token in tokens]


def pad(indices: Sequence[int], length: int, mode: str = "pre") -> List[int]:
    """
    填充/截断到固定长度

    pre 模式在前面补 0，过长时保留最后 length 个；post 模式在后面补 0，过长时保留前 length 个
    """
    if length < 1:
        raise ValueError(f"填充长度必须 ≥ 1，当前为 {length}")
    if mode not in ("pre", "post"):
        raise ValueError(f"未知的填充模式: {mode}")
    indices = list(indices)
    if len(indices) >= length:
        return indices[-length:] if mode == "pre" else indices[:length]
    filler = [PAD_INDEX] * (length - len(indices))
    return filler + indices if mode == "pre" else indices + filler


# ============================================================================
# 组合
# ============================================================================

class TextPreprocessor:
    """把配置、停用词和词表绑在一起，训练与推理走同一条路径"""

    def __init__(
        self,
        config: Optional[PreprocessConfig] = None,
        stopwords: Optional[Iterable[str]] = None,
        vocab: Optional[Vocabulary] = None
    ):
        self.config = config or PreprocessConfig()
        if stopwords is None:
            stopwords = load_stopwords(self.config.stopwords_path or None)
        self.stopwords = frozenset(stopwords)
        self.vocab = vocab

    def tokens(self, text: str) -> List[str]:
        """单条文本 → 词干化后的 token 列表（停用词在词干化之前去除）"""
        tokens = remove_stopwords(tokenize(clean_text(text)), self.stopwords)
        if self.config.stem:
            tokens = [stem(token) for token in tokens]
        return tokens

    def fit(self, texts: Sequence[str]) -> Vocabulary:
        self.vocab = build_vocab([self.tokens(text) for text in texts], self.config)
        return self.vocab

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        """
        文本 → [N, max_sequence_length] 的 int64 矩阵

        Args:
            texts: 文本列表

        Returns:
            编码并填充后的索引矩阵
        """
        if self.vocab is None:
            raise DataError("TextPreprocessor 尚未建立词表，请先调用 fit()")
        length = self.config.max_sequence_length
        out = np.zeros((len(texts), length), dtype=np.int64)
        for row, text in enumerate(texts):
            out[row] = pad(encode(self.tokens(text), self.vocab), length, self.config.pad_mode)
        return out

    def fit_transform(self, texts: Sequence[str]) -> np.ndarray:
        self.fit(texts)
        return self.transform(texts)
