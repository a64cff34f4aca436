"""Experiment configuration: TOML parsing, validation, defaults.

Unknown keys are rejected so typos fail loudly instead of silently running
with defaults.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, asdict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import Commodity, LinkParams, NetworkGraph, validate_commodity, validate_graph


class ConfigError(Exception):
    """Configuration file could not be parsed or failed validation."""


@dataclass
class EpisodeConfig:
    length: int = 20  # slots per episode
    train: int = 3000
    improve: int = 1000
    test: int = 200
    per_iteration: int = 10  # collection episodes between parameter updates


@dataclass
class LearningConfig:
    gamma: float = 0.97
    learning_rate: float = 1e-3
    batch_size: int = 256
    buffer_capacity: int = 100_000
    target_update: float = 0.01
    gradient_steps: int = 32  # optimization steps per outer iteration
    hidden: tuple[int, int] = (64, 64)
    obs_scale: float = 0.1


@dataclass
class ExplorationConfig:
    decay: float = 0.99
    floor: float = 0.01


@dataclass
class DualConfig:
    learning_rate: float | list[float] = 0.005  # scalar or one rate per commodity
    window: int = 100
    sigma_threshold: float = 0.05
    lambda_init: list[float] | None = None  # None -> 1.25 sqrt(rate * target)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/out"
    policy: str = "cdrl"
    nodes: list[str] = field(default_factory=list)
    links: list[dict] = field(default_factory=list)
    commodities: list[Commodity] = field(default_factory=list)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    dual: DualConfig = field(default_factory=DualConfig)

    def graph(self) -> NetworkGraph:
        links = {}
        for entry in self.links:
            key = (entry["src"], entry["dst"])
            if key in links:
                raise ConfigError(f"link {key} declared twice")
            links[key] = LinkParams(
                block_capacity=int(entry.get("block_capacity", 10)),
                max_blocks=int(entry.get("max_blocks", 1)),
                block_cost=float(entry.get("block_cost", 1.0)),
            )
        return NetworkGraph(nodes=list(self.nodes), links=links)

    def paper_scale(self) -> "ExperimentConfig":
        """Full-length phase schedule instead of the desk-scale default."""
        self.episodes.train = 20_000
        self.episodes.improve = 10_000
        self.episodes.test = 2_000
        return self


def default_edge_config() -> ExperimentConfig:
    """Two traffic sources feeding a core sink through two relay servers."""
    cfg = ExperimentConfig(
        nodes=["s1", "s2", "e1", "e2", "core"],
        links=[
            {"src": "s1", "dst": "e1"},
            {"src": "s1", "dst": "e2"},
            {"src": "s2", "dst": "e1"},
            {"src": "s2", "dst": "e2"},
            {"src": "e1", "dst": "core"},
            {"src": "e2", "dst": "core"},
        ],
        commodities=[
            Commodity("s1", "core", 6, 0.7, 6.0),
            Commodity("s2", "core", 4, 0.6, 6.0),
        ],
    )
    return cfg


_SCHEMA = {
    "seed": int,
    "out": str,
    "policy": str,
    "topology": {"nodes": list, "links": list},
    "commodities": list,
    "episodes": {"length": int, "train": int, "improve": int, "test": int, "per_iteration": int},
    "learning": {
        "gamma": float,
        "learning_rate": float,
        "batch_size": int,
        "buffer_capacity": int,
        "target_update": float,
        "gradient_steps": int,
        "hidden": list,
        "obs_scale": float,
    },
    "exploration": {"decay": float, "floor": float},
    "dual": {"learning_rate": float, "window": int, "sigma_threshold": float, "lambda_init": list},
}

_LINK_KEYS = {"src", "dst", "block_capacity", "max_blocks", "block_cost"}
_COMMODITY_KEYS = {"source", "destination", "lifetime", "reliability_target", "arrival_rate"}


def _reject_unknown(data: dict, schema: dict, prefix: str = "") -> list[str]:
    errors = []
    for key, value in data.items():
        if key not in schema:
            errors.append(f"unknown key {prefix}{key!r}")
        elif isinstance(schema[key], dict):
            if isinstance(value, dict):
                errors.extend(_reject_unknown(value, schema[key], f"{prefix}{key}."))
            else:
                errors.append(f"{prefix}{key} must be a table")
    return errors


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file; defaults fill whatever is absent."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, name=str(path))


def config_from_dict(data: dict, name: str = "<config>") -> ExperimentConfig:
    errors = _reject_unknown(data, _SCHEMA)
    for i, entry in enumerate(data.get("topology", {}).get("links", [])):
        for key in entry:
            if key not in _LINK_KEYS:
                errors.append(f"unknown key topology.links[{i}].{key!r}")
    for i, entry in enumerate(data.get("commodities", [])):
        for key in entry:
            if key not in _COMMODITY_KEYS:
                errors.append(f"unknown key commodities[{i}].{key!r}")
    if errors:
        raise ConfigError(f"{name}: " + "; ".join(errors))

    cfg = default_edge_config()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    if "out" in data:
        cfg.out = str(data["out"])
    if "policy" in data:
        cfg.policy = str(data["policy"])
    topo = data.get("topology")
    if topo is not None:
        cfg.nodes = [str(n) for n in topo.get("nodes", [])]
        cfg.links = list(topo.get("links", []))
    if "commodities" in data:
        cfg.commodities = [
            Commodity(
                source=str(c["source"]),
                destination=str(c["destination"]),
                lifetime=int(c["lifetime"]),
                reliability_target=float(c["reliability_target"]),
                arrival_rate=float(c["arrival_rate"]),
            )
            for c in data["commodities"]
        ]
    for section, target in (
        ("episodes", cfg.episodes),
        ("learning", cfg.learning),
        ("exploration", cfg.exploration),
        ("dual", cfg.dual),
    ):
        for key, value in data.get(section, {}).items():
            if key == "hidden":
                value = tuple(int(v) for v in value)
            elif key == "lambda_init":
                value = [float(v) for v in value]
            elif key == "learning_rate" and section == "dual" and isinstance(value, list):
                value = [float(v) for v in value]
            else:
                current = getattr(target, key)
                try:
                    value = type(current)(value)
                except (TypeError, ValueError):
                    raise ConfigError(
                        f"{name}: {section}.{key} expects {type(current).__name__}, "
                        f"got {value!r}"
                    ) from None
            setattr(target, key, value)

    validate_config(cfg, name)
    return cfg


def validate_config(cfg: ExperimentConfig, name: str = "<config>") -> None:
    errors = []
    graph = cfg.graph()
    errors.extend(validate_graph(graph))
    if not cfg.commodities:
        errors.append("no commodities declared")
    for i, com in enumerate(cfg.commodities):
        errors.extend(f"commodity {i}: {e}" for e in validate_commodity(graph, com))
    ep = cfg.episodes
    if ep.length <= 0:
        errors.append(f"episode length must be positive, got {ep.length}")
    for phase in ("train", "improve", "test"):
        if getattr(ep, phase) < 0:
            errors.append(f"episode count for {phase} must be >= 0")
    if ep.per_iteration <= 0:
        errors.append("episodes per iteration must be positive")
    if ep.train % ep.per_iteration or ep.improve % ep.per_iteration:
        errors.append(
            f"train/improve episode counts must be multiples of per_iteration={ep.per_iteration}"
        )
    lc = cfg.learning
    if not 0.0 <= lc.gamma <= 1.0:
        errors.append(f"gamma outside [0, 1]: {lc.gamma}")
    for key in ("learning_rate", "batch_size", "buffer_capacity", "gradient_steps", "obs_scale"):
        if getattr(lc, key) <= 0:
            errors.append(f"learning.{key} must be positive")
    if not 0.0 < lc.target_update <= 1.0:
        errors.append(f"learning.target_update outside (0, 1]: {lc.target_update}")
    ex = cfg.exploration
    if not 0.0 < ex.decay <= 1.0 or not 0.0 <= ex.floor <= 1.0:
        errors.append("exploration constants outside their unit ranges")
    du = cfg.dual
    eta = du.learning_rate if isinstance(du.learning_rate, list) else [du.learning_rate]
    if any(v < 0 for v in eta) or du.window <= 0 or du.sigma_threshold <= 0:
        errors.append("dual section needs learning_rate >= 0, window > 0, sigma_threshold > 0")
    if isinstance(du.learning_rate, list) and len(du.learning_rate) != len(cfg.commodities):
        errors.append("per-commodity dual learning_rate length must match the commodities")
    if du.lambda_init is not None and len(du.lambda_init) != len(cfg.commodities):
        errors.append("lambda_init length must match the number of commodities")
    if cfg.policy not in ("cdrl", "bp", "umw"):
        errors.append(f"unknown policy {cfg.policy!r}")
    if cfg.seed < 0:
        errors.append("seed must be non-negative")
    if errors:
        raise ConfigError(f"{name}: " + "; ".join(errors))


def config_summary(cfg: ExperimentConfig) -> dict:
    """Plain-dict view used for hashing and the run manifest."""
    out = asdict(cfg)
    out["learning"]["hidden"] = list(cfg.learning.hidden)
    return out
