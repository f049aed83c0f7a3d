from __future__ import annotations

from datetime import date, timedelta

import pytest

from memtrader.market_data import NewsItem, PriceBar, Sentiment, build_environment


def business_days(start: date, n: int) -> list[date]:
    out, day = [], start
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += timedelta(days=1)
    return out


def bars_for(days, prices) -> list[PriceBar]:
    return [PriceBar(d, p, p * 1.01, p * 0.99, p, p, 1_000_000) for d, p in zip(days, prices)]


def make_env(prices, warmup_days, news=(), filings=(), start=date(2021, 1, 4), symbol="SYN"):
    days = business_days(start, len(prices))
    return build_environment(
        bars_for(days, prices),
        news,
        filings,
        (days[0], days[warmup_days - 1]),
        (days[warmup_days], days[-1]),
        symbol=symbol,
    )


def news(item_id, day, sentiment, text=None):
    return NewsItem(str(item_id), day, text or f"Headline {item_id} about the asset.", Sentiment(sentiment))


@pytest.fixture
def days():
    return business_days(date(2021, 1, 4), 40)


class StubServer:
    """Local HTTP server replaying canned (status, json body) responses."""

    def __init__(self):
        import http.server
        import threading

        self.responses: list[tuple[int, object]] = []
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        stub = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                import json

                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                stub.requests.append(json.loads(body))
                stub.headers.append(dict(self.headers))
                status, payload = stub.responses.pop(0) if len(stub.responses) > 1 else stub.responses[0]
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


def make_agent(backbone=None, *, seed=0, transcript=None, symbol="SYN", k_top=5):
    from memtrader.agent import Agent, AgentProfile
    from memtrader.backbone import MockBackbone
    from memtrader.embedding import HashEmbedder
    from memtrader.memory import MemoryStore

    return Agent(
        backbone or MockBackbone(transcript=transcript),
        MemoryStore(HashEmbedder(), seed=seed),
        AgentProfile(symbol=symbol),
        k_top=k_top,
        seed=seed,
        transcript=transcript,
    )


def regime_env(n_warm=10, n_test=60, seed=0, regimes=(("positive", 0.01), ("negative", -0.01), ("neutral", 0.0))):
    """Environment whose test window cycles through sentiment/drift regimes.

    Each regime lasts ``n_test // len(regimes)`` days; each day carries two
    news items with the regime's sentiment and one neutral item, and the price
    drifts by the regime's daily log return plus small seeded noise.
    """
    import math
    import random

    rng = random.Random(seed)
    n = n_warm + n_test
    days = business_days(date(2021, 1, 4), n)
    span = max(1, n_test // len(regimes))
    prices, items, logp = [], [], math.log(100.0)
    for i, d in enumerate(days):
        sentiment, drift = regimes[min((max(i - n_warm, 0)) // span, len(regimes) - 1)]
        logp += drift + rng.gauss(0, 0.002)
        prices.append(math.exp(logp))
        for j, s in enumerate((sentiment, sentiment, "neutral")):
            items.append(news(f"{i}-{j}", d, s, f"Report {i}.{j} on the asset."))
    return make_env(prices, n_warm, news=items)


def rule_expectation(env, k=3):
    """Actions the sentiment-majority mock must take on each test day."""
    import math

    from memtrader.market_data import Phase

    out = []
    all_days = env.trading_days()
    for d in env.trading_days(Phase.TEST):
        i = all_days.index(d)
        net = sum({"positive": 1, "negative": -1}.get(n.sentiment.value, 0) for n in env.news_on(d))
        momentum = float(f"{math.log(env.price(d) / env.price(all_days[i - k])) * 100:.4f}")
        if net > 0 and momentum >= 0:
            out.append("Buy")
        elif net < 0 and momentum < 0:
            out.append("Sell")
        else:
            out.append("Hold")
    return out


def write_dataset(directory, env, *, filings=(), extra_toml=""):
    """Write an environment's bars and news as CSV/JSONL plus a TOML config; return the config path."""
    import json

    from memtrader.market_data import Phase

    prices = directory / "prices.csv"
    with prices.open("w") as fh:
        fh.write("date,open,high,low,close,adj_close,volume\n")
        for b in env.bars:
            fh.write(f"{b.date},{b.open!r},{b.high!r},{b.low!r},{b.close!r},{b.adjusted_close!r},{b.volume}\n")
    with (directory / "news.jsonl").open("w") as fh:
        for b in env.bars:
            for n in env.news_on(b.date):
                fh.write(json.dumps({"id": n.id, "date": str(n.date), "text": n.text, "sentiment": n.sentiment.value}) + "\n")
    with (directory / "filings.jsonl").open("w") as fh:
        for f in filings:
            fh.write(json.dumps({"id": f.id, "date": str(f.date), "form_type": f.form_type.value, "summary": f.summary}) + "\n")
    warm, test = env.trading_days(Phase.WARMUP), env.trading_days(Phase.TEST)
    config = directory / "experiment.toml"
    config.write_text(
        f"""[asset]
symbol = "{env.symbol}"
class = "stock"
price_path = "prices.csv"
news_path = "news.jsonl"
filings_path = "filings.jsonl"

[dates]
warmup_start = {warm[0]}
warmup_end = {warm[-1]}
test_start = {test[0]}
test_end = {test[-1]}

{extra_toml}"""
    )
    return config
