"""
爬虫模块
对信任列表中的域名做同域广度优先抓取，提取可见文本，按关键词出现次数阈值判定新冠文章
"""

import logging
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple
from urllib.parse import urldefrag, urljoin, urlsplit
from urllib.robotparser import RobotFileParser

from bs4 import BeautifulSoup
from bs4.element import Comment, Declaration, Doctype, ProcessingInstruction

from module.artifacts import write_jsonl
from module.corpus import normalize_domain
from module.errors import ConfigError, MalformedURLError
from module.http_client import DEFAULT_USER_AGENT, FetchedPage, FetchError, HttpClient

logger = logging.getLogger(__name__)

DEFAULT_ARTICLE_KEYWORDS = ["sars-cov-2", "covid-19", "coronavirus", "virus"]

_WHITESPACE = re.compile(r"\s+")
_HIDDEN_TAGS = ("script", "style", "noscript", "template")

Fetcher = Callable[[str], FetchedPage]


@dataclass
class CrawlPolicy:
    """爬取策略；request_delay 与 timeout 以毫秒计"""

    keywords: List[str] = field(default_factory=lambda: list(DEFAULT_ARTICLE_KEYWORDS))
    threshold: int = 6
    max_pages_per_domain: int = 200
    max_depth: int = 3
    request_delay: int = 1000
    same_domain_only: bool = True
    timeout: int = 10000
    workers: int = 4
    respect_robots: bool = True
    user_agent: str = DEFAULT_USER_AGENT

    def __post_init__(self):
        self.keywords = [k.strip().lower() for k in self.keywords if k.strip()]
        if not self.keywords:
            raise ConfigError("crawl.keywords 不能为空")
        if self.threshold < 1:
            raise ConfigError(f"crawl.threshold 必须 ≥ 1，当前为 {self.threshold}")
        if self.request_delay < 0:
            raise ConfigError(f"crawl.request_delay 不能为负数，当前为 {self.request_delay}")
        if self.max_pages_per_domain < 1 or self.max_depth < 0 or self.timeout < 1 or self.workers < 1:
            raise ConfigError("crawl.max_pages_per_domain、timeout、workers 必须为正数，max_depth 不能为负数")

    def to_dict(self):
        return asdict(self)


@dataclass
class PageResult:
    url: str
    status: str  # "ok" 或 FetchErrorKind 的取值
    keyword_counts: Dict[str, int] = field(default_factory=dict)
    is_covid_article: bool = False
    out_links: List[str] = field(default_factory=list)

    @property
    def total_keyword_count(self) -> int:
        return sum(self.keyword_counts.values())


@dataclass
class CrawlReport:
    seed_url: str
    domain: str
    trust_label: str
    pages: List[PageResult] = field(default_factory=list)
    errors: Dict[str, int] = field(default_factory=dict)
    robots_skipped: int = 0
    duplicates: int = 0  # 重定向落到已访问页面的次数

    @property
    def pages_visited(self) -> int:
        return len(self.pages)

    @property
    def visited_urls(self) -> List[str]:
        return [p.url for p in self.pages]

    @property
    def articles(self) -> List[PageResult]:
        return [p for p in self.pages if p.is_covid_article]

    @property
    def article_urls(self) -> List[str]:
        return [p.url for p in self.articles]

    def summary(self) -> Dict:
        return {
            "seed_url": self.seed_url,
            "domain": self.domain,
            "trust_label": self.trust_label,
            "pages_visited": self.pages_visited,
            "articles": len(self.articles),
            "errors": dict(sorted(self.errors.items())),
            "robots_skipped": self.robots_skipped,
            "duplicates": self.duplicates,
        }


# ============================================================================
# 礼貌策略
# ============================================================================

class DomainThrottle:
    """同一域名的两次请求之间至少间隔 delay 秒"""

    def __init__(
        self,
        delay: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep
    ):
        self.delay = delay
        self._clock = clock
        self._sleep = sleep
        self._next_allowed: Dict[str, float] = {}
        self._lock = threading.Lock()

    def wait(self, domain: str):
        with self._lock:
            now = self._clock()
            start = max(now, self._next_allowed.get(domain, now))
            self._next_allowed[domain] = start + self.delay
        if start > now:
            self._sleep(start - now)


class RobotsCache:
    """按站点缓存 robots.txt；抓取失败时放行"""

    def __init__(self, client: HttpClient, user_agent: str = DEFAULT_USER_AGENT):
        self.client = client
        self.user_agent = user_agent
        self._parsers: Dict[str, Optional[RobotFileParser]] = {}
        self._lock = threading.Lock()

    def _parser_for(self, site: str) -> Optional[RobotFileParser]:
        with self._lock:
            if site in self._parsers:
                return self._parsers[site]
        parser: Optional[RobotFileParser] = None
        try:
            status, text = self.client.get_text(f"{site}/robots.txt")
            if status == 200:
                parser = RobotFileParser()
                parser.parse(text.splitlines())
        except FetchError as e:
            logger.debug(f"robots.txt 获取失败，按允许处理: {e}")
        with self._lock:
            self._parsers[site] = parser
        return parser

    def allowed(self, url: str) -> bool:
        parts = urlsplit(url)
        parser = self._parser_for(f"{parts.scheme}://{parts.netloc}")
        return True if parser is None else parser.can_fetch(self.user_agent, url)


# ============================================================================
# 页面处理
# ============================================================================

def extract_visible_text(html: str) -> str:
    """
    提取可见文本

    去掉 script/style/注释等不可见内容，解码实体，合并空白

    Args:
        html: HTML 文本（允许不规范）

    Returns:
        可见文本
    """
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup.find_all(_HIDDEN_TAGS):
        tag.decompose()
    for node in soup.find_all(string=lambda s: isinstance(s, (Comment, Declaration, Doctype, ProcessingInstruction))):
        node.extract()
    return _WHITESPACE.sub(" ", soup.get_text(" ")).strip()


def extract_links(html: str, base_url: str) -> List[str]:
    """锚点 href → 绝对 URL（去掉片段、去重并保持首次出现顺序），只保留 http/https"""
    soup = BeautifulSoup(html, "html.parser")
    base = urldefrag(base_url).url
    links: List[str] = []
    seen = set()
    for anchor in soup.select("a[href]"):
        absolute = urldefrag(urljoin(base_url, anchor["href"].strip())).url
        if urlsplit(absolute).scheme not in ("http", "https"):
            continue
        if absolute == base or absolute in seen:
            continue
        seen.add(absolute)
        links.append(absolute)
    return links


def _keyword_pattern(keywords: Sequence[str]) -> "re.Pattern":
    ordered = sorted(set(keywords), key=lambda k: (-len(k), k))
    return re.compile(r"(?<![a-z0-9])(?:" + "|".join(re.escape(k) for k in ordered) + r")(?![a-z0-9])")


def count_keywords(text: str, keywords: Sequence[str]) -> Dict[str, int]:
    """
    统计关键词出现次数

    不区分大小写；匹配两侧不能紧邻字母或数字；同一位置最长关键词优先，
    被长关键词覆盖的短关键词不再重复计数

    Args:
        text: 页面文本
        keywords: 小写关键词

    Returns:
        关键词 → 次数
    """
    counts = {k: 0 for k in keywords}
    if not keywords:
        return counts
    for match in _keyword_pattern(keywords).finditer(text.lower()):
        counts[match.group(0)] += 1
    return counts


def classify_article(counts: Dict[str, int], threshold: int) -> bool:
    return sum(counts.values()) >= threshold


# ============================================================================
# 爬取
# ============================================================================

def fetch_page(url: str, policy: CrawlPolicy, client: Optional[HttpClient] = None) -> FetchedPage:
    """按策略的超时抓取单个 HTML 页面（失败时抛出 FetchError）"""
    if client is None:
        client = HttpClient(user_agent=policy.user_agent, timeout=policy.timeout / 1000.0)
    return client.get(url)


def _same_domain(url: str, domain: str) -> bool:
    try:
        return normalize_domain(url) == domain
    except MalformedURLError:
        return False


def crawl_domain(
    seed_url: str,
    trust_label: str,
    policy: CrawlPolicy,
    client: Optional[HttpClient] = None,
    fetch: Optional[Fetcher] = None,
    throttle: Optional[DomainThrottle] = None,
    robots: Optional[RobotsCache] = None
) -> CrawlReport:
    """
    从种子 URL 广度优先爬取

    每次抓取尝试都计为一次访问；达到 max_pages_per_domain 即停止，深度超过 max_depth 的链接不入队

    Args:
        seed_url: 种子 URL
        trust_label: 该域名的信任标签，原样带入报告
        policy: 爬取策略
        client: HTTP 客户端（默认按策略新建）
        fetch: 可选的抓取函数，替代 client.get（测试用）
        throttle: 域名限速器（默认按 request_delay 新建）
        robots: robots.txt 缓存（默认在 respect_robots 且未注入 fetch 时新建）

    Returns:
        CrawlReport
    """
    domain = normalize_domain(seed_url)
    if fetch is None:
        client = client or HttpClient(user_agent=policy.user_agent, timeout=policy.timeout / 1000.0)
        fetch = client.get
        if robots is None and policy.respect_robots:
            robots = RobotsCache(client, policy.user_agent)
    throttle = throttle or DomainThrottle(policy.request_delay / 1000.0)

    report = CrawlReport(seed_url=seed_url, domain=domain, trust_label=trust_label)
    start = urldefrag(seed_url).url
    frontier = deque([(start, 0)])
    seen = {start}
    fetched = set()  # 已抓取的请求 URL 与重定向后的最终 URL

    while frontier and report.pages_visited < policy.max_pages_per_domain:
        url, depth = frontier.popleft()
        if url in fetched:
            report.duplicates += 1
            continue
        if robots is not None and not robots.allowed(url):
            report.robots_skipped += 1
            logger.debug(f"robots.txt 不允许: {url}")
            continue
        throttle.wait(domain)
        try:
            page = fetch(url)
        except FetchError as e:
            fetched.add(url)
            report.pages.append(PageResult(url=url, status=e.kind.value))
            report.errors[e.kind.value] = report.errors.get(e.kind.value, 0) + 1
            logger.debug(f"抓取失败 {e}")
            continue

        final_url = urldefrag(page.url).url
        if final_url != url and final_url in fetched:
            fetched.add(url)
            report.duplicates += 1
            logger.debug(f"重定向到已访问页面: {url} -> {final_url}")
            continue
        fetched.update((url, final_url))
        seen.add(final_url)
        counts = count_keywords(extract_visible_text(page.body), policy.keywords)
        links = extract_links(page.body, page.url)
        result = PageResult(
            url=page.url,
            status="ok",
            keyword_counts=counts,
            is_covid_article=classify_article(counts, policy.threshold),
            out_links=links,
        )
        report.pages.append(result)
        if result.is_covid_article:
            logger.debug(f"新冠文章: {page.url}（{result.total_keyword_count} 次）")

        if depth >= policy.max_depth:
            continue
        for link in links:
            if link in seen:
                continue
            if policy.same_domain_only and not _same_domain(link, domain):
                continue
            seen.add(link)
            frontier.append((link, depth + 1))

    logger.info(
        f"{domain}: 访问 {report.pages_visited} 页，文章 {len(report.articles)} 篇，错误 {sum(report.errors.values())} 次"
    )
    return report


def crawl_domains(
    seeds: Iterable[Tuple[str, str]],
    policy: CrawlPolicy,
    fetch: Optional[Fetcher] = None,
    throttle: Optional[DomainThrottle] = None
) -> List[CrawlReport]:
    """
    并行爬取多个域名：线程池大小为 policy.workers，每个域名内部串行

    Args:
        seeds: (种子 URL, 信任标签) 列表
        policy: 爬取策略
        fetch: 可选的抓取函数（测试用）
        throttle: 共享的域名限速器

    Returns:
        与 seeds 顺序一致的 CrawlReport 列表
    """
    seeds = list(seeds)
    throttle = throttle or DomainThrottle(policy.request_delay / 1000.0)

    def run(seed: Tuple[str, str]) -> CrawlReport:
        seed_url, trust_label = seed
        if fetch is not None:
            return crawl_domain(seed_url, trust_label, policy, fetch=fetch, throttle=throttle)
        with HttpClient(user_agent=policy.user_agent, timeout=policy.timeout / 1000.0) as client:
            return crawl_domain(seed_url, trust_label, policy, client=client, throttle=throttle)

    if not seeds:
        return []
    with ThreadPoolExecutor(max_workers=policy.workers) as pool:
        return list(pool.map(run, seeds))


def article_rows(reports: Iterable[CrawlReport]) -> List[Dict]:
    rows = []
    for report in reports:
        for page in report.articles:
            rows.append({
                "url": page.url,
                "domain": report.domain,
                "trust_label": report.trust_label,
                "total_keyword_count": page.total_keyword_count,
            })
    return rows


def write_article_jsonl(path: str, reports: Iterable[CrawlReport]):
    write_jsonl(path, article_rows(reports))
