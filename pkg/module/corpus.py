"""
语料模块
读取推文归档，按域名信任列表给推文打标签，类别平衡，划分训练/测试集与分层 K 折
"""

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
from urllib.parse import urlsplit

import pandas as pd

from module.artifacts import write_jsonl
from module.seeding import make_rng
from module.errors import ConfigError, DataError, DegenerateCorpusError, MalformedURLError, SchemaError
from module.textprep import clean_text, extract_hashtags

logger = logging.getLogger(__name__)

FAKE = 1
REAL = 0
LABEL_NAMES = {FAKE: "fake", REAL: "real"}

TRUSTWORTHY = "trustworthy"
UNTRUSTWORTHY = "untrustworthy"
TRUST_TO_LABEL = {UNTRUSTWORTHY: FAKE, TRUSTWORTHY: REAL}

# 推文采集阶段使用的英文检索关键词
DEFAULT_TWEET_KEYWORDS = [
    "corona", "coronavirus", "covid-19", "stay at home", "lockdown",
    "social distancing", "epidemic", "pandemic", "outbreak",
]

_URL_IN_TEXT = re.compile(r"https?://\S+", re.IGNORECASE)
_TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"


# ============================================================================
# 数据类型
# ============================================================================

@dataclass
class TweetRecord:
    """一条推文及其元数据"""

    id: str
    timestamp: datetime
    text: str
    language: str = ""
    urls: List[str] = field(default_factory=list)
    user_id: str = ""
    username: str = ""
    user_location: str = ""
    followers: int = 0
    friends: int = 0
    likes: int = 0
    retweets: int = 0
    hashtags: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class LabeledExample:
    """带标签的样本：1 = fake，0 = real"""

    text: str
    label: int
    source_url: str
    domain: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TweetArchive:
    """load_tweets 的返回：按文件顺序的记录 + 被跳过的行数"""

    records: List[TweetRecord]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class LabelingResult:
    examples: List[LabeledExample]
    fake: int = 0
    real: int = 0
    conflicts: int = 0
    unmatched: int = 0
    malformed_urls: int = 0

    def summary(self) -> Dict[str, int]:
        return {
            "fake": self.fake,
            "real": self.real,
            "conflicts": self.conflicts,
            "unmatched": self.unmatched,
            "malformed_urls": self.malformed_urls,
        }


@dataclass
class DatasetSplit:
    train: List[LabeledExample]
    test: List[LabeledExample]
    seed: int
    ratio: float


@dataclass
class FoldAssignment:
    """样本下标 → 折编号"""

    k: int
    assignment: List[int]

    def test_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignment) if f == fold]

    def train_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignment) if f != fold]


class DomainTrustList:
    """规范化域名 → 信任标签；可选地记录爬虫的种子 URL"""

    def __init__(self, entries: Optional[Dict[str, str]] = None, seed_urls: Optional[Dict[str, str]] = None):
        self.entries: Dict[str, str] = {}
        self.seed_urls: Dict[str, str] = {}
        for domain, trust in (entries or {}).items():
            self.add(domain, trust)
        for domain, url in (seed_urls or {}).items():
            self.seed_urls[normalize_domain(_with_scheme(domain))] = url

    def add(self, domain: str, trust: str, seed_url: str = ""):
        trust = trust.strip().lower()
        if trust not in TRUST_TO_LABEL:
            raise SchemaError(f"未知的信任标签 {trust!r}（域名 {domain}），只接受 {TRUSTWORTHY}/{UNTRUSTWORTHY}")
        key = normalize_domain(_with_scheme(domain))
        existing = self.entries.get(key)
        if existing is not None and existing != trust:
            raise DataError(f"域名 {key} 同时被标记为 {existing} 和 {trust}")
        self.entries[key] = trust
        if seed_url:
            self.seed_urls[key] = seed_url

    def get(self, domain: str) -> Optional[str]:
        return self.entries.get(domain)

    def seed_url(self, domain: str) -> str:
        return self.seed_urls.get(domain) or f"https://{domain}/"

    def items(self):
        return sorted(self.entries.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, domain: str) -> bool:
        return domain in self.entries


# ============================================================================
# 读取
# ============================================================================

def _parse_timestamp(value: Any) -> datetime:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return datetime.fromtimestamp(value, tz=timezone.utc)
    if not isinstance(value, str) or not value:
        raise ValueError("timestamp 缺失")
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        parsed = datetime.strptime(value, _TWITTER_TIME_FORMAT)
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def _count(obj: Dict[str, Any], key: str) -> int:
    value = obj.get(key, 0)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{key} 必须是非负整数")
    return value


def _string_list(obj: Dict[str, Any], key: str) -> List[str]:
    value = obj.get(key) or []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValueError(f"{key} 必须是字符串列表")
    return list(value)


def parse_tweet(obj: Dict[str, Any]) -> TweetRecord:
    """按 TweetRecord 的约定校验一条 JSON 记录，不合法时抛出 ValueError"""
    if not isinstance(obj, dict):
        raise ValueError("记录必须是 JSON 对象")
    tweet_id = obj.get("id")
    if isinstance(tweet_id, int) and not isinstance(tweet_id, bool):
        tweet_id = str(tweet_id)
    if not isinstance(tweet_id, str) or not tweet_id:
        raise ValueError("id 缺失或为空")
    text = obj.get("text")
    if not isinstance(text, str):
        raise ValueError("text 缺失")
    hashtags = _string_list(obj, "hashtags") if "hashtags" in obj else extract_hashtags(text)
    return TweetRecord(
        id=tweet_id,
        timestamp=_parse_timestamp(obj.get("timestamp")),
        text=text,
        language=str(obj.get("language") or ""),
        urls=_string_list(obj, "urls"),
        user_id=str(obj.get("user_id") or ""),
        username=str(obj.get("username") or ""),
        user_location=str(obj.get("user_location") or ""),
        followers=_count(obj, "followers"),
        friends=_count(obj, "friends"),
        likes=_count(obj, "likes"),
        retweets=_count(obj, "retweets"),
        hashtags=hashtags,
    )


def load_tweets(path: str, format: str = "jsonl") -> TweetArchive:
    """
    读取 JSON Lines 推文归档

    Args:
        path: 文件路径
        format: 目前只支持 jsonl

    Returns:
        TweetArchive（records 按文件顺序，skipped 为校验失败或重复 id 的行数）
    """
    if format != "jsonl":
        raise ConfigError(f"不支持的推文归档格式: {format}")
    records: List[TweetRecord] = []
    seen_ids = set()
    skipped = 0
    try:
        with open(path, "rb") as f:
            for line_no, raw in enumerate(f, start=1):
                if not raw.strip():
                    continue
                try:
                    record = parse_tweet(json.loads(raw.decode("utf-8")))
                except (UnicodeDecodeError, ValueError, TypeError) as e:
                    skipped += 1
                    logger.debug(f"{path}:{line_no} 跳过: {e}")
                    continue
                if record.id in seen_ids:
                    skipped += 1
                    logger.debug(f"{path}:{line_no} 跳过重复 id {record.id}")
                    continue
                seen_ids.add(record.id)
                records.append(record)
    except FileNotFoundError as e:
        raise ConfigError(f"推文归档不存在: {path}") from e
    except OSError as e:
        raise DataError(f"无法读取推文归档 {path}: {e}") from e
    if skipped:
        logger.warning(f"{path}: 跳过 {skipped} 行不合法记录")
    logger.info(f"读取推文 {len(records)} 条: {path}")
    return TweetArchive(records=records, skipped=skipped)


def _with_scheme(domain: str) -> str:
    domain = domain.strip()
    return domain if re.match(r"^https?://", domain, re.IGNORECASE) else f"http://{domain}"


def load_trust_list(path: str) -> DomainTrustList:
    """
    读取 `domain,label` CSV（可选列 seed_url）

    Args:
        path: CSV 路径

    Returns:
        DomainTrustList
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError(f"信任列表不存在: {path}") from e
    except pd.errors.EmptyDataError:
        logger.warning(f"信任列表为空: {path}")
        return DomainTrustList()
    missing = {"domain", "label"} - set(frame.columns)
    if missing:
        raise SchemaError(f"信任列表缺少列: {', '.join(sorted(missing))}")
    trust = DomainTrustList()
    has_seed = "seed_url" in frame.columns
    for row in frame.itertuples(index=False):
        if not row.domain.strip():
            continue
        trust.add(row.domain, row.label, row.seed_url.strip() if has_seed else "")
    logger.info(f"信任列表 {len(trust)} 个域名: {path}")
    return trust


# ============================================================================
# 过滤与打标签
# ============================================================================

def _phrase_pattern(phrases: Sequence[str]) -> "re.Pattern":
    ordered = sorted({p.lower() for p in phrases}, key=lambda p: (-len(p), p))
    alternation = "|".join(re.escape(p) for p in ordered)
    return re.compile(rf"(?<![a-z0-9])(?:{alternation})(?![a-z0-9])")


def filter_by_keywords(tweets: Iterable[TweetRecord], keywords: Sequence[str]) -> List[TweetRecord]:
    """保留文本中包含至少一个关键词（整词/整短语、不区分大小写）的推文，顺序不变"""
    if not keywords:
        raise ConfigError("关键词列表不能为空")
    pattern = _phrase_pattern(keywords)
    return [t for t in tweets if pattern.search(t.text.lower())]


def filter_by_date(
    tweets: Iterable[TweetRecord],
    start: Optional[date] = None,
    end: Optional[date] = None
) -> List[TweetRecord]:
    """按 UTC 日期闭区间过滤；边界为 None 表示不限"""
    kept = []
    for tweet in tweets:
        day = tweet.timestamp.astimezone(timezone.utc).date()
        if start is not None and day < start:
            continue
        if end is not None and day > end:
            continue
        kept.append(tweet)
    return kept


def extract_urls(text: str) -> List[str]:
    return _URL_IN_TEXT.findall(text)


def normalize_domain(url: str) -> str:
    """
    URL → 规范化域名（小写，去端口，去开头的 www.）

    Args:
        url: 以 http:// 或 https:// 开头的 URL

    Returns:
        规范化域名
    """
    if not re.match(r"^https?://", url, re.IGNORECASE):
        raise MalformedURLError(f"URL 必须以 http:// 或 https:// 开头: {url!r}")
    try:
        host = urlsplit(url).hostname
    except ValueError as e:
        raise MalformedURLError(f"无法解析 URL: {url!r}") from e
    host = (host or "").rstrip(".")
    if host.startswith("www."):
        host = host[4:]
    if not host:
        raise MalformedURLError(f"URL 中没有主机名: {url!r}")
    return host


def _tweet_urls(tweet: TweetRecord) -> List[str]:
    urls = []
    for url in list(tweet.urls) + extract_urls(tweet.text):
        if url not in urls:
            urls.append(url)
    return urls


def label_tweets(tweets: Iterable[TweetRecord], trust: DomainTrustList) -> LabelingResult:
    """
    按链接域名给推文打标签

    每个命中信任列表的 URL 产生一个样本（untrustworthy → fake=1，trustworthy → real=0）；
    同一推文的 URL 指向相互冲突的标签时整条丢弃并计入 conflicts

    Args:
        tweets: 推文
        trust: 域名信任列表

    Returns:
        LabelingResult
    """
    result = LabelingResult(examples=[])
    for tweet in tweets:
        matched: List[Tuple[str, str, int]] = []
        for url in _tweet_urls(tweet):
            try:
                domain = normalize_domain(url)
            except MalformedURLError:
                result.malformed_urls += 1
                continue
            trust_label = trust.get(domain)
            if trust_label is not None:
                matched.append((url, domain, TRUST_TO_LABEL[trust_label]))
        if not matched:
            result.unmatched += 1
            continue
        if len({label for _, _, label in matched}) > 1:
            result.conflicts += 1
            continue
        text = clean_text(tweet.text)
        for url, domain, label in matched:
            result.examples.append(LabeledExample(text=text, label=label, source_url=url, domain=domain))
            if label == FAKE:
                result.fake += 1
            else:
                result.real += 1
    if result.conflicts:
        logger.warning(f"{result.conflicts} 条推文的链接标签冲突，已丢弃")
    logger.info(f"打标签完成: fake={result.fake}, real={result.real}, 未命中={result.unmatched}")
    return result


def deduplicate(examples: Iterable[LabeledExample]) -> List[LabeledExample]:
    """去掉 (text, label) 完全相同的重复样本，保留首次出现"""
    seen = set()
    kept = []
    for example in examples:
        key = (example.text, example.label)
        if key in seen:
            continue
        seen.add(key)
        kept.append(example)
    return kept


# ============================================================================
# 平衡与划分
# ============================================================================

def _class_indices(examples: Sequence[LabeledExample]) -> Dict[int, List[int]]:
    by_class: Dict[int, List[int]] = {}
    for index, example in enumerate(examples):
        by_class.setdefault(example.label, []).append(index)
    return by_class


def balance_downsample(examples: Sequence[LabeledExample], seed: int) -> List[LabeledExample]:
    """
    把多数类随机下采样到少数类的数量（少数类保持不变，输出保留输入顺序）

    Args:
        examples: 样本
        seed: 随机种子

    Returns:
        两类数量相等的样本列表
    """
    by_class = _class_indices(examples)
    if set(by_class) != {FAKE, REAL}:
        raise DegenerateCorpusError(f"平衡需要 fake 和 real 两类样本，当前只有: {sorted(LABEL_NAMES[c] for c in by_class)}")
    minority = min(len(by_class[FAKE]), len(by_class[REAL]))
    rng = make_rng(seed)
    keep = set()
    for label in (REAL, FAKE):
        indices = by_class[label]
        if len(indices) == minority:
            keep.update(indices)
        else:
            chosen = rng.choice(len(indices), size=minority, replace=False)
            keep.update(indices[i] for i in chosen)
    logger.info(f"类别平衡: 每类 {minority} 条")
    return [examples[i] for i in sorted(keep)]


def split_train_test(examples: Sequence[LabeledExample], ratio: float, seed: int) -> DatasetSplit:
    """
    随机打乱后按比例划分，训练集大小为 floor(ratio·N + 0.5)

    Args:
        examples: 样本
        ratio: 训练集比例，(0, 1)
        seed: 随机种子

    Returns:
        DatasetSplit
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"划分比例必须在 (0, 1) 之间，当前为 {ratio}")
    n = len(examples)
    if n < 2:
        raise DegenerateCorpusError(f"划分至少需要 2 条样本，当前 {n} 条")
    n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
    order = make_rng(seed).permutation(n)
    train = [examples[i] for i in order[:n_train]]
    test = [examples[i] for i in order[n_train:]]
    return DatasetSplit(train=train, test=test, seed=seed, ratio=ratio)


def stratified_kfold(examples: Sequence[Any], k: int, seed: int) -> FoldAssignment:
    """
    分层 K 折：每个类别内部随机打乱后轮转分配，轮转位置在类别之间接续

    Args:
        examples: LabeledExample 序列或标签序列
        k: 折数，≥ 2
        seed: 随机种子

    Returns:
        FoldAssignment
    """
    if k < 2:
        raise ConfigError(f"折数必须 ≥ 2，当前为 {k}")
    labels = [getattr(e, "label", e) for e in examples]
    by_class: Dict[int, List[int]] = {}
    for index, label in enumerate(labels):
        by_class.setdefault(int(label), []).append(index)
    for label, indices in by_class.items():
        if len(indices) < k:
            raise DegenerateCorpusError(
                f"类别 {LABEL_NAMES.get(label, label)} 只有 {len(indices)} 条样本，少于折数 {k}"
            )
    rng = make_rng(seed)
    assignment = [-1] * len(labels)
    offset = 0
    for label in sorted(by_class):
        indices = by_class[label]
        for position, i in enumerate(rng.permutation(len(indices))):
            assignment[indices[i]] = (offset + position) % k
        offset = (offset + len(indices)) % k
    return FoldAssignment(k=k, assignment=assignment)


# ============================================================================
# 统计与读写
# ============================================================================

def corpus_stats(examples: Sequence[LabeledExample]) -> Dict[str, Any]:
    domains: Dict[str, int] = {}
    for example in examples:
        domains[example.domain] = domains.get(example.domain, 0) + 1
    return {
        "total": len(examples),
        "fake": sum(1 for e in examples if e.label == FAKE),
        "real": sum(1 for e in examples if e.label == REAL),
        "domains": dict(sorted(domains.items())),
    }


def labeled_rows(examples: Iterable[LabeledExample]) -> List[Dict[str, Any]]:
    return [e.to_dict() for e in examples]


def read_labeled_corpus(path: str) -> List[LabeledExample]:
    """读取带标签语料（JSON Lines: text, label, source_url, domain）"""
    examples = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    label = obj["label"]
                    if label not in (FAKE, REAL) or isinstance(label, bool):
                        raise ValueError(f"label 只能是 0 或 1，实际为 {label!r}")
                    examples.append(LabeledExample(
                        text=str(obj["text"]),
                        label=int(label),
                        source_url=str(obj.get("source_url", "")),
                        domain=str(obj.get("domain", "")),
                    ))
                except (ValueError, KeyError, TypeError) as e:
                    raise SchemaError(f"{path}:{line_no} 不是合法的带标签样本: {e}") from e
    except FileNotFoundError as e:
        raise ConfigError(f"带标签语料不存在: {path}") from e
    return examples


def write_labeled_corpus(path: str, examples: Iterable[LabeledExample]):
    write_jsonl(path, labeled_rows(examples))
