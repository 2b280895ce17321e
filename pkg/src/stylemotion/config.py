"""Run configuration: one JSON document covering every pipeline stage.

A config file holds one section per stage plus an output root. Missing
sections or fields fall back to the dataclass defaults; unknown keys are
rejected with their full field path so typos cannot silently revert a field
to its default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .checkpoint import config_hash
from .corpus import CorpusConfig
from .expert import ExpertConfig
from .semantic import SemanticConfig
from .style import StyleConfig
from .diffusion import DiffusionConfig

__all__ = ["RunConfig", "ConfigError", "load_run_config", "default_config_dict"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    output_root: str = "runs"
    ablation_seeds: tuple[int, ...] = (0, 1, 2)
    probe_seed_offset: int = 1000

    def stage_hash(self, stage: str) -> str:
        """Stable artifact hash for one stage.

        Every stage hash folds in the corpus config, so artifacts trained on
        different corpora never collide; training stages also fold in their
        upstream stage hashes, mirroring the dependency chain.
        """
        corpus = config_hash(asdict(self.corpus))
        if stage == "corpus":
            return corpus
        chain = {
            "expert": [self.expert],
            "semantic": [self.expert, self.semantic],
            "sdse": [self.expert, self.semantic, self.style],
            "style_probe": [self.expert, self.semantic, self.style],
            "diffusion": [self.expert, self.semantic, self.style, self.diffusion],
        }
        if stage not in chain:
            raise ConfigError(f"unknown stage '{stage}'")
        payload = {"corpus": corpus, "configs": [asdict(c) for c in chain[stage]]}
        if stage == "style_probe":
            payload["probe_seed_offset"] = self.probe_seed_offset
        return config_hash(payload)

    def stage_dir(self, stage: str) -> Path:
        return Path(self.output_root) / stage / self.stage_hash(stage)


_SECTIONS = {
    "corpus": CorpusConfig,
    "expert": ExpertConfig,
    "semantic": SemanticConfig,
    "style": StyleConfig,
    "diffusion": DiffusionConfig,
}
_SCALARS = {"output_root": str, "ablation_seeds": list, "probe_seed_offset": int}


def _build_section(cls, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown field '{path}.{key}'")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{path}': {exc}") from exc


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Load a run config JSON file; None yields pure defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in _SCALARS:
            if key == "ablation_seeds":
                value = tuple(int(s) for s in value)
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown field '{key}'")
    cfg = RunConfig(**kwargs)
    # Surface corpus-level validation errors at load time with a field path.
    try:
        cfg.corpus.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid section 'corpus': {exc}") from exc
    return cfg


def default_config_dict() -> dict:
    """The fully materialized default configuration as plain JSON data."""
    cfg = RunConfig()
    out = {name: asdict(getattr(cfg, name)) for name in _SECTIONS}
    out["output_root"] = cfg.output_root
    out["ablation_seeds"] = list(cfg.ablation_seeds)
    out["probe_seed_offset"] = cfg.probe_seed_offset
    return out
