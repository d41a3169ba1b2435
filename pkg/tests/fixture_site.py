"""
爬虫测试用的本地站点
Flask 应用由 werkzeug 在 127.0.0.1 的临时端口上服务，7 个 HTML 页面的关键词总数已手工数好
"""

import threading

from flask import Flask, Response, abort
from werkzeug.serving import make_server

# 默认关键词 (sars-cov-2, covid-19, coronavirus, virus) 下每个页面的可见出现次数
EXPECTED_TOTALS = {
    "/": 0,
    "/a": 6,
    "/b": 7,
    "/c": 5,
    "/d": 0,
    "/e": 3,
    "/f": 10,
}

# 广度优先的抓取顺序（/private/ 被 robots.txt 禁止，/missing 返回 404，/data.json 不是 HTML）
CRAWL_ORDER = ["/", "/a", "/b", "/c", "/d", "/e", "/missing", "/data.json", "/f"]

ROBOTS_TXT = "User-agent: *\nDisallow: /private/\n"


def _page(title: str, body: str) -> str:
    return f"<!DOCTYPE html><html><head><title>{title}</title></head><body>{body}</body></html>"


PAGES = {
    "/": _page(
        "Health desk",
        '<p>Welcome to the health desk &amp; daily briefing.</p>'
        '<a href="#top">top</a>'
        '<a href="/a">first</a> <a href="/b">second</a> <a href="/c">third</a> <a href="/d">fourth</a>'
        '<a href="/private/secret">staff</a>'
        '<a href="http://other.test/elsewhere">elsewhere</a>'
        '<a href="mailto:desk@example.org">mail</a>'
    ),
    "/a": _page(
        "Page A",
        "<h1>Coronavirus update</h1>"
        "<p>The coronavirus has spread. Officials say COVID-19 cases rose.</p>"
        "<p>The virus, also called SARS-CoV-2, is a new virus.</p>"
    ),
    "/b": _page(
        "Page B",
        "<p>covid-19 covid-19 and coronavirus.</p>"
        "<script>var virus = 'virus virus';</script>"
        "<!-- coronavirus coronavirus -->"
        "<style>.virus { color: red; }</style>"
        "<p>virus-free? No: virus (virus) sars-cov-2.</p>"
    ),
    "/c": _page(
        "Page C",
        "<p>Antivirus software is not a virus cure. Viruses and coronaviruses differ from the coronavirus.</p>"
        "<p>covid-19, covid-19; virus? covid-2019</p>"
    ),
    "/d": _page(
        "Page D",
        "<p>Health tips and general news.</p>"
        '<a href="/e">next</a> <a href="/missing">gone</a> <a href="/data.json">data</a> <a href="/">home</a>'
    ),
    "/e": _page(
        "Page E",
        '<p>Virus. VIRUS! Sars-Cov-2</p><a href="/f">more</a>'
    ),
    "/f": _page(
        "Page F",
        "<p>" + "coronavirus " * 4 + "covid-19 " * 3 + "virus " * 2 + "sars-cov-2</p>"
        '<a href="/a">back</a>'
    ),
}


def create_app() -> Flask:
    app = Flask(__name__)

    @app.route("/robots.txt")
    def robots():
        return Response(ROBOTS_TXT, mimetype="text/plain")

    @app.route("/data.json")
    def data():
        return Response('{"virus": 100}', mimetype="application/json")

    @app.route("/", defaults={"path": ""})
    @app.route("/<path:path>")
    def page(path):
        key = "/" + path
        if key not in PAGES:
            abort(404)
        return Response(PAGES[key], mimetype="text/html")

    return app


class FixtureSite:
    """在后台线程中运行的测试站点，用作上下文管理器"""

    def __init__(self):
        self.server = make_server("127.0.0.1", 0, create_app())
        self.port = self.server.server_port
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def url(self, path: str) -> str:
        return self.base_url + path

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.thread.join(timeout=5)
