"""TOML experiment configuration.

Unknown sections or keys are errors; relative paths resolve against the
config file's directory. API keys are never read from the file, only from the
environment variable the file names.
"""

from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import DEFAULT_BACKGROUND, DEFAULT_ROLE, Agent, AgentProfile, PromptTemplates
from .backbone import MockBackbone, RemoteBackbone, Transcript
from .embedding import HashEmbedder, RemoteEmbedder
from .errors import ConfigurationError
from .market_data import (
    AssetClass,
    Environment,
    build_environment,
    load_filings,
    load_news_feed,
    load_price_series,
)
from .memory import DEFAULT_LAYER_PARAMS, DEFAULT_PROMOTION_THRESHOLD, Layer, LayerParams, MemoryStore
from .simulation import AgentFactory, SimulationConfig


@dataclass(frozen=True)
class AssetConfig:
    symbol: str
    asset_class: str
    price_path: Path
    news_path: Path | None = None
    filings_path: Path | None = None


@dataclass(frozen=True)
class DatesConfig:
    warmup_start: date
    warmup_end: date
    test_start: date
    test_end: date


@dataclass(frozen=True)
class MemoryConfig:
    layers: dict[Layer, LayerParams]
    k_top: int = 5
    promotion_threshold: int = DEFAULT_PROMOTION_THRESHOLD


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "mock"
    endpoint: str | None = None
    model: str = "mock"
    temperature: float = 0.6
    max_tokens: int = 1024
    retries: int = 3
    api_key_env: str = "OPENAI_API_KEY"
    max_in_flight: int = 4
    policy: str = "sentiment-majority"
    noise: float = 0.0


@dataclass(frozen=True)
class EmbeddingConfig:
    kind: str = "hash"
    dimension: int = 64
    seed: int = 0
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "OPENAI_API_KEY"


@dataclass(frozen=True)
class ProfileConfig:
    role: str | None = None
    background: str | None = None
    templates_dir: Path | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path
    asset: AssetConfig
    dates: DatesConfig
    memory: MemoryConfig
    backbone: BackboneConfig
    embedding: EmbeddingConfig
    sim: SimulationConfig
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def data_files(self) -> dict[str, Path]:
        files = {"prices": self.asset.price_path}
        if self.asset.news_path:
            files["news"] = self.asset.news_path
        if self.asset.filings_path:
            files["filings"] = self.asset.filings_path
        return files

    def echo(self) -> dict[str, Any]:
        """JSON-safe copy of the configuration with SHA-256 checksums of the data files."""

        def clean(value: Any) -> Any:
            if isinstance(value, dict):
                return {str(k.value if isinstance(k, Layer) else k): clean(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [clean(v) for v in value]
            if isinstance(value, (Path, date)):
                return str(value)
            if isinstance(value, Layer):
                return value.value
            return value

        out = clean({k: v for k, v in asdict(self).items() if k != "path"})
        out["checksums"] = {name: sha256_file(p) for name, p in self.data_files().items()}
        return out


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _take(section: dict[str, Any], name: str, allowed: set[str]) -> dict[str, Any]:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigurationError(f"[{name}] unknown key(s): {', '.join(unknown)}")
    return section


def _as_date(value: Any, key: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise ConfigurationError(f"[dates] {key}: not an ISO date: {value!r}") from None


def _path(base: Path, value: Any, key: str, required: bool = True) -> Path | None:
    if value is None:
        if required:
            raise ConfigurationError(f"[asset] {key} is required")
        return None
    p = Path(value)
    p = p if p.is_absolute() else (base / p)
    if not p.exists():
        raise ConfigurationError(f"[asset] {key}: file not found: {p}")
    return p


SECTIONS = {"asset", "dates", "memory", "backbone", "embedding", "sim", "profile"}


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    _take(raw, "top level", SECTIONS)
    base = path.parent

    def section(name: str, required: bool = False) -> dict[str, Any]:
        if name not in raw:
            if required:
                raise ConfigurationError(f"missing [{name}] section")
            return {}
        if not isinstance(raw[name], dict):
            raise ConfigurationError(f"[{name}] must be a table")
        return dict(raw[name])

    a = _take(section("asset", True), "asset", {"symbol", "class", "price_path", "news_path", "filings_path"})
    if "symbol" not in a:
        raise ConfigurationError("[asset] symbol is required")
    asset = AssetConfig(
        symbol=str(a["symbol"]),
        asset_class=str(a.get("class", "stock")),
        price_path=_path(base, a.get("price_path"), "price_path"),
        news_path=_path(base, a.get("news_path"), "news_path", required=False),
        filings_path=_path(base, a.get("filings_path"), "filings_path", required=False),
    )

    keys = {"warmup_start", "warmup_end", "test_start", "test_end"}
    d = _take(section("dates", True), "dates", keys)
    missing = sorted(keys - set(d))
    if missing:
        raise ConfigurationError(f"[dates] missing: {', '.join(missing)}")
    dates = DatesConfig(**{k: _as_date(d[k], k) for k in sorted(keys)})

    m = _take(section("memory"), "memory", {"k_top", "promotion_threshold", *(l.value for l in Layer)})
    layers = dict(DEFAULT_LAYER_PARAMS)
    for layer in Layer:
        if layer.value not in m:
            continue
        lp = _take(dict(m[layer.value]), f"memory.{layer.value}", {"Q", "alpha", "value_probs"})
        base_params = DEFAULT_LAYER_PARAMS[layer]
        try:
            layers[layer] = LayerParams(
                layer,
                float(lp.get("Q", base_params.stability)),
                float(lp.get("alpha", base_params.decay)),
                tuple(float(x) for x in lp.get("value_probs", base_params.value_probs)),
            )
        except ValueError as exc:
            raise ConfigurationError(f"[memory.{layer.value}] {exc}") from None
    memory = MemoryConfig(
        layers=layers,
        k_top=int(m.get("k_top", 5)),
        promotion_threshold=int(m.get("promotion_threshold", DEFAULT_PROMOTION_THRESHOLD)),
    )

    b = _take(section("backbone"), "backbone", {f.name for f in fields(BackboneConfig)})
    backbone = BackboneConfig(**b)
    if backbone.kind not in ("mock", "remote"):
        raise ConfigurationError(f"[backbone] kind must be 'mock' or 'remote', got {backbone.kind!r}")
    if backbone.kind == "remote" and not backbone.endpoint:
        raise ConfigurationError("[backbone] endpoint is required for kind = 'remote'")

    e = _take(section("embedding"), "embedding", {f.name for f in fields(EmbeddingConfig)})
    embedding = EmbeddingConfig(**e)
    if embedding.kind not in ("hash", "remote"):
        raise ConfigurationError(f"[embedding] kind must be 'hash' or 'remote', got {embedding.kind!r}")
    if embedding.kind == "remote" and not (embedding.endpoint and embedding.model):
        raise ConfigurationError("[embedding] endpoint and model are required for kind = 'remote'")

    s = _take(
        section("sim"),
        "sim",
        {
            "k_momentum",
            "epochs",
            "alpha_discount",
            "seed",
            "hold_keeps_position",
            "annualize_sharpe",
            "risk_free_daily",
            "reflection_every",
            "reflection_pnl_threshold",
        },
    )
    if "alpha_discount" in s:
        s["discount"] = s.pop("alpha_discount")
    sim = SimulationConfig(k_top=memory.k_top, temperature=backbone.temperature, **s)

    p = _take(section("profile"), "profile", {"role", "background", "templates_dir"})
    templates_dir = None
    if p.get("templates_dir"):
        templates_dir = Path(p["templates_dir"])
        templates_dir = templates_dir if templates_dir.is_absolute() else base / templates_dir
    profile = ProfileConfig(role=p.get("role"), background=p.get("background"), templates_dir=templates_dir)

    return ExperimentConfig(path, asset, dates, memory, backbone, embedding, sim, profile)


def check_credentials(cfg: ExperimentConfig) -> None:
    """Fail early if a remote provider's API key variable is unset."""
    for kind, env_var, what in (
        (cfg.backbone.kind, cfg.backbone.api_key_env, "backbone"),
        (cfg.embedding.kind, cfg.embedding.api_key_env, "embedding"),
    ):
        if kind == "remote" and not os.environ.get(env_var):
            raise ConfigurationError(f"{what}: environment variable {env_var} is not set")


def load_environment(cfg: ExperimentConfig) -> Environment:
    bars = load_price_series(cfg.asset.price_path)
    news = load_news_feed(cfg.asset.news_path) if cfg.asset.news_path else []
    filings = load_filings(cfg.asset.filings_path) if cfg.asset.filings_path else []
    try:
        asset_class = AssetClass(cfg.asset.asset_class)
    except ValueError:
        raise ConfigurationError(f"[asset] class must be stock, crypto or etf, got {cfg.asset.asset_class!r}") from None
    return build_environment(
        bars,
        news,
        filings,
        (cfg.dates.warmup_start, cfg.dates.warmup_end),
        (cfg.dates.test_start, cfg.dates.test_end),
        symbol=cfg.asset.symbol,
        asset_class=asset_class,
    )


def make_agent_factory(cfg: ExperimentConfig) -> AgentFactory:
    """Build one fresh agent (store, embedder, backbone) per epoch from the config."""
    templates = PromptTemplates(cfg.profile.templates_dir)
    check_credentials(cfg)

    def make(epoch: int, seed: int, transcript: Transcript | None) -> Agent:
        if cfg.embedding.kind == "remote":
            embedder = RemoteEmbedder(
                cfg.embedding.endpoint,
                cfg.embedding.model,
                api_key_env=cfg.embedding.api_key_env,
                dimension=cfg.embedding.dimension,
            )
        else:
            embedder = HashEmbedder(seed=cfg.embedding.seed, dimension=cfg.embedding.dimension)
        if cfg.backbone.kind == "remote":
            backbone = RemoteBackbone(
                cfg.backbone.endpoint,
                cfg.backbone.model,
                api_key_env=cfg.backbone.api_key_env,
                retries=cfg.backbone.retries,
                max_in_flight=cfg.backbone.max_in_flight,
                transcript=transcript,
            )
        else:
            backbone = MockBackbone(
                cfg.backbone.policy, noise=cfg.backbone.noise, model=cfg.backbone.model, transcript=transcript
            )
        store = MemoryStore(
            embedder, cfg.memory.layers, promotion_threshold=cfg.memory.promotion_threshold, seed=seed
        )
        profile = AgentProfile(
            symbol=cfg.asset.symbol,
            role_text=cfg.profile.role or DEFAULT_ROLE,
            background_text=cfg.profile.background or DEFAULT_BACKGROUND,
        )
        return Agent(
            backbone,
            store,
            profile,
            templates=templates,
            k_top=cfg.memory.k_top,
            temperature=cfg.backbone.temperature,
            max_tokens=cfg.backbone.max_tokens,
            seed=seed,
            transcript=transcript,
            tags={"epoch": epoch},
        )

    return make
