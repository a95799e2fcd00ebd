"""Pipeline configuration: defaults, JSON config files, env overrides.

Precedence, lowest to highest: built-in defaults, the JSON config file
(path argument or MEDORC_CONFIG), then MEDORC_<FIELD> environment
variables. Backend endpoints additionally honour MEDORC_BACKEND_<NAME>_URL
at construction time.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backends import GenerationParams
from .bias import DEFAULT_BIAS_LEXICON_PATH, DEFAULT_SENTIMENT_LEXICON_PATH
from .evidence import ESEARCH_URL
from . import data as _data

CONFIG_ENV = "MEDORC_CONFIG"
ENV_PREFIX = "MEDORC_"

DEFAULT_FEWSHOT_PATH = Path(_data.__file__).parent / "fewshot.txt"

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class BackendConfig:
    name: str
    endpoint: str = "mock"
    capacity: int = 1


@dataclass
class PipelineConfig:
    ppl_threshold: float = 10.0
    similarity_std_threshold: float = 0.05
    valence_threshold: float = 0.30
    retmax: int = 3
    mc_samples: int = 5
    max_refinement_rounds: int = 2
    max_regenerations: int = 2
    review_enabled: bool = True
    temperature: float = 0.7
    max_tokens: int = 256
    seed: int = 1234
    workers: int = 2
    results_dir: str = "results"
    queue_path: str = ""  # empty -> <results_dir>/review_queue.jsonl
    bias_lexicon_path: str = str(DEFAULT_BIAS_LEXICON_PATH)
    sentiment_lexicon_path: str = str(DEFAULT_SENTIMENT_LEXICON_PATH)
    fewshot_path: str = str(DEFAULT_FEWSHOT_PATH)
    esearch_base_url: str = ESEARCH_URL
    # re-query PubMed in refinement round 1 even when the base run had evidence
    refinement_requery_always: bool = False
    reasoning_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig("reasoning"))
    refinement_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig("refinement"))

    def __post_init__(self):
        if self.ppl_threshold <= 1:
            raise ValueError("ppl_threshold must be > 1")
        if self.similarity_std_threshold <= 0:
            raise ValueError("similarity_std_threshold must be > 0")
        if not 0 < self.valence_threshold < 1:
            raise ValueError("valence_threshold must be in (0, 1)")
        if self.retmax < 1:
            raise ValueError("retmax must be >= 1")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        if self.max_refinement_rounds < 0:
            raise ValueError("max_refinement_rounds must be >= 0")
        if self.max_regenerations < 0:
            raise ValueError("max_regenerations must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.queue_path:
            self.queue_path = str(Path(self.results_dir) / "review_queue.jsonl")

    def generation_params(self) -> GenerationParams:
        return GenerationParams(
            max_tokens=self.max_tokens,
            temperature=self.temperature,
            seed=self.seed,
        )


def _coerce(raw: str, target_type, name: str):
    if target_type is bool:
        word = raw.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ValueError(f"cannot parse boolean for {name}: {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Build a config from defaults, an optional JSON file, and env vars."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    values: dict = {}
    if path is not None:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(document, dict):
            raise ValueError("config document must be a JSON object")
        backends = document.pop("backends", {})
        for role in ("reasoning", "refinement"):
            if role in backends:
                spec_dict = dict(backends[role])
                spec_dict.setdefault("name", role)
                values[f"{role}_backend"] = BackendConfig(**spec_dict)
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(document) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(document)

    scalar_types = {
        f.name: f.type for f in fields(PipelineConfig)
        if f.name not in ("reasoning_backend", "refinement_backend")
    }
    type_map = {"float": float, "int": int, "bool": bool, "str": str}
    for name, type_name in scalar_types.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in os.environ:
            values[name] = _coerce(
                os.environ[env_key], type_map.get(type_name, str), name)
    return PipelineConfig(**values)


def config_to_dict(config: PipelineConfig) -> dict:
    doc = dataclasses.asdict(config)
    doc["backends"] = {
        "reasoning": doc.pop("reasoning_backend"),
        "refinement": doc.pop("refinement_backend"),
    }
    return doc
