"""
HTTP 客户端
封装 requests.Session，统一 User-Agent、超时和重定向上限，并把各种失败归类为 FetchErrorKind
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import requests

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "tweetcheck-crawler/1.0 (+research; polite)"
HTML_CONTENT_TYPES = ("text/html", "application/xhtml+xml")


class FetchErrorKind(str, Enum):
    TIMEOUT = "timeout"
    NOT_FOUND = "not_found"
    HTTP_STATUS = "http_status"
    NON_HTML = "non_html"
    TOO_MANY_REDIRECTS = "too_many_redirects"
    CONNECTION = "connection"


class FetchError(Exception):
    """一次抓取失败；爬虫只计数，不中断"""

    def __init__(self, kind: FetchErrorKind, url: str, message: str = "", status: Optional[int] = None):
        self.kind = kind
        self.url = url
        self.status = status
        super().__init__(f"{kind.value}: {url}" + (f" ({message})" if message else ""))


@dataclass
class FetchedPage:
    url: str  # 跟随重定向之后的最终 URL
    status: int
    body: str
    redirects: int = 0


class HttpClient:
    """爬虫使用的 HTTP 客户端"""

    def __init__(
        self,
        user_agent: str = DEFAULT_USER_AGENT,
        timeout: float = 10.0,
        max_redirects: int = 5,
        session: Optional[requests.Session] = None
    ):
        """
        初始化 HttpClient

        Args:
            user_agent: 请求头中的 User-Agent
            timeout: 请求超时时间（秒）
            max_redirects: 最多跟随的重定向次数
            session: 可选的 requests.Session（测试时可注入）
        """
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.max_redirects = max_redirects
        self.headers: Dict[str, str] = {
            "User-Agent": user_agent,
            "Accept": "text/html,application/xhtml+xml;q=0.9,*/*;q=0.1",
        }

    def _request(self, url: str) -> requests.Response:
        try:
            return self.session.get(url, headers=self.headers, timeout=self.timeout, allow_redirects=True)
        except requests.exceptions.TooManyRedirects as e:
            raise FetchError(FetchErrorKind.TOO_MANY_REDIRECTS, url, str(e)) from e
        except requests.exceptions.Timeout as e:
            raise FetchError(FetchErrorKind.TIMEOUT, url, str(e)) from e
        except requests.exceptions.RequestException as e:
            raise FetchError(FetchErrorKind.CONNECTION, url, str(e)) from e

    def get(self, url: str) -> FetchedPage:
        """
        抓取 HTML 页面

        Args:
            url: 页面 URL

        Returns:
            FetchedPage（2xx 且 Content-Type 为 HTML）
        """
        response = self._request(url)
        if response.status_code == 404:
            raise FetchError(FetchErrorKind.NOT_FOUND, url, status=404)
        if not 200 <= response.status_code < 300:
            raise FetchError(FetchErrorKind.HTTP_STATUS, url, f"状态码 {response.status_code}", response.status_code)
        content_type = response.headers.get("Content-Type", "").split(";")[0].strip().lower()
        if content_type not in HTML_CONTENT_TYPES:
            raise FetchError(FetchErrorKind.NON_HTML, url, content_type or "无 Content-Type", response.status_code)
        return FetchedPage(
            url=response.url,
            status=response.status_code,
            body=response.text,
            redirects=len(response.history),
        )

    def get_text(self, url: str) -> Tuple[int, str]:
        """不检查 Content-Type 的抓取（robots.txt 用）"""
        response = self._request(url)
        return response.status_code, response.text

    def close(self):
        self.session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
