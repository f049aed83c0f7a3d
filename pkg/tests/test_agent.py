from datetime import date
from types import SimpleNamespace

import pytest

from memtrader.agent import (
    AgentProfile,
    PromptTemplates,
    ReflectionKind,
    RiskDisposition,
    update_risk_disposition,
)
from memtrader.backbone import Action, MockBackbone, Transcript, TradeDecision, render_decision
from memtrader.errors import ProviderError
from memtrader.market_data import FilingSummary, FormType, MarketObservation, NewsItem, Phase, Sentiment
from memtrader.memory import Layer, Source

from conftest import make_agent

DAY = date(2022, 10, 25)


class Failing:
    model = "down"

    def complete(self, request):
        raise ProviderError("unavailable")


class Recording(MockBackbone):
    def __init__(self, reply=None):
        super().__init__()
        self.requests = []
        self.reply = reply

    def complete(self, request):
        self.requests.append(request)
        return self.reply if self.reply is not None else super().complete(request)


def obs(phase=Phase.TEST, momentum=0.01, news=(), filings=(), day=DAY):
    return MarketObservation(day, phase, 222.42, momentum, tuple(news), tuple(filings))


@pytest.mark.parametrize(
    "momentum, expected",
    [(0.0705, RiskDisposition.SEEKING), (-0.01, RiskDisposition.AVERSE)],
)
def test_risk_disposition(momentum, expected):
    assert update_risk_disposition(AgentProfile("X"), momentum).risk_disposition is expected


def test_risk_disposition_zero_and_idempotent():
    averse = AgentProfile("X", risk_disposition=RiskDisposition.AVERSE)
    assert update_risk_disposition(averse, 0.0) == averse
    once = update_risk_disposition(averse, 0.3)
    assert update_risk_disposition(once, 0.3) == once
    with pytest.raises(ValueError):
        update_risk_disposition(averse, float("nan"))


def test_short_news_stored_verbatim():
    agent = make_agent()
    item = NewsItem("261", DAY, "Owning the stock is a good idea.", Sentiment.POSITIVE)
    e = agent.summarize_and_store(item, DAY)
    assert e.layer is Layer.SHALLOW
    assert e.text == "Owning the stock is a good idea. The sentiment is {positive}."
    assert e.meta["origin_id"] == "261"


def test_filing_summarized_into_intermediate():
    backbone = Recording()
    agent = make_agent(backbone)
    e = agent.summarize_and_store(FilingSummary("222", DAY, FormType.Q10, "Revenue up 56% year over year."), DAY)
    assert e.layer is Layer.INTERMEDIATE and e.source is Source.FILING_10Q
    assert "Revenue up 56%" in e.text
    assert "Condense the document below" in backbone.requests[0].user_prompt


def test_long_news_goes_through_backbone():
    backbone = Recording()
    agent = make_agent(backbone)
    long_text = "word " * 400
    agent.summarize_and_store(NewsItem("1", DAY, long_text, Sentiment.NEGATIVE), DAY)
    assert len(backbone.requests) == 1


def test_summary_failure_falls_back_to_truncated_original():
    agent = make_agent(Failing())
    e = agent.summarize_and_store(FilingSummary("9", DAY, FormType.K10, "x" * 5000), DAY)
    assert e.layer is Layer.DEEP
    assert len(e.text) == 1200 and e.meta["summary_fallback"]
    assert agent.summary_fallbacks == 1


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        make_agent().summarize_and_store(FilingSummary("9", DAY, FormType.K10, "  "), DAY)


def test_templates_render_and_override(tmp_path):
    (tmp_path / "schema.txt").write_text("custom schema for $nothing")
    t = PromptTemplates(tmp_path)
    assert "custom schema" in t.templates["schema"].template
    assert "Decide today's trading action" in PromptTemplates().templates["reflect_test"].template


def test_warmup_direction_fixed_by_next_day_sign():
    backbone = Recording(reply=render_decision(TradeDecision(Action.SELL, "it rose", ())))
    agent = make_agent(backbone)
    out = agent.decide(obs(Phase.WARMUP, momentum=2.22))
    assert out.decision.action is Action.BUY and out.decision.rationale == "it rose"
    assert "Explain what drove the price move" in backbone.requests[0].user_prompt
    assert make_agent().decide(obs(Phase.WARMUP, momentum=0.0)).decision.action is Action.HOLD
    assert make_agent().decide(obs(Phase.WARMUP, momentum=-1.0)).decision.action is Action.SELL


def test_warmup_explanation_failure_keeps_direction():
    out = make_agent(Failing()).decide(obs(Phase.WARMUP, momentum=1.5))
    assert out.decision.action is Action.BUY


def test_test_day_three_positive_news_buys():
    agent = make_agent()
    news = [NewsItem(str(i), DAY, f"Good thing {i}.", Sentiment.POSITIVE) for i in range(3)]
    o = obs(news=news, momentum=0.02)
    today = agent.ingest(o)
    out = agent.decide(o, today)
    assert out.decision.action is Action.BUY
    assert set(out.decision.supporting_ids) == {e.id for e in today}
    assert all(agent.store.get(e.id).value == e.value for e in today)


def test_test_day_no_signal_holds():
    out = make_agent().decide(obs(momentum=0.05))
    assert out.decision.action is Action.HOLD and out.presented_ids == ()


def test_supporting_ids_are_presented_and_boosted():
    transcript = Transcript()
    agent = make_agent(transcript=transcript)
    agent.store.insert("Older positive story. The sentiment is {positive}.", "news", date(2022, 10, 20))
    o = obs(news=[NewsItem("5", DAY, "Great quarter.", Sentiment.POSITIVE)])
    today = agent.ingest(o)
    before = today[0].value
    out = agent.decide(o, today)
    assert set(out.decision.supporting_ids) <= set(out.presented_ids)
    assert agent.store.get(today[0].id).value == before + 5
    (entry,) = [e for e in transcript.entries if e.get("kind") == "decision"]
    assert entry["presented_ids"] == list(out.presented_ids)
    assert entry["manifest"]["shallow"] == list(out.retrieved[Layer.SHALLOW])


def test_prompt_shows_risk_disposition():
    backbone = Recording()
    agent = make_agent(backbone)
    agent.decide(obs(momentum=-0.02))
    assert "risk-averse" in backbone.requests[0].system_prompt
    assert "{-2.0000%}" in backbone.requests[0].user_prompt


def test_store_reflection_goes_deep():
    agent = make_agent()
    out = agent.decide(obs(Phase.WARMUP, momentum=1.0))
    stored = agent.store_reflection(out.reflection, out.decision.action)
    event = agent.store.get(stored.memory_id)
    assert event.layer is Layer.DEEP and event.source is Source.REFLECTION
    assert "'Buy'" in event.text


def _record(day, ret):
    return SimpleNamespace(date=day, action="Buy", log_return_asset=ret, strategy_return=ret)


def test_extended_reflection_mentions_window_cr():
    agent = make_agent()
    history = [_record(date(2022, 10, d), 0.01) for d in (17, 18, 19)]
    ref = agent.extended_reflect(history, date(2022, 10, 20))
    assert ref.kind is ReflectionKind.EXTENDED and "3.0000%" in ref.text
    assert agent.store.get(ref.memory_id).layer is Layer.DEEP
    assert agent.latest_extended == ref


def test_extended_reflection_errors():
    with pytest.raises(ValueError):
        make_agent().extended_reflect([], DAY)
    assert make_agent(Failing()).extended_reflect([_record(DAY, 0.0)], DAY) is None
