"""Dataclass configuration with JSON/TOML file loading.

Key names follow the model's published hyperparameter vocabulary
(learning_rate, l1/l2_regularization, word_dropout, margin_multiplier,
dense_dimension, metadata_dimension, use_pretrained, number_ann_neighbors,
triplets_per_batch, use_siamese_embeddings, ...).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ConfigError
from .embedder import TrainConfig
from .sampler import SamplerConfig


@dataclass
class DataConfig:
    title_abstract_vocab_size: int = 200_000
    max_title_length: int = 50
    max_abstract_length: int = 500
    max_authors_per_document: int = 8
    max_keyphrases_per_document: int = 20
    min_papers_per_author: int = 1
    min_papers_per_venue: int = 1
    min_papers_per_keyphrase: int = 5
    training_triplets_per_query: int = 6
    min_true_citations_per_document: int = 2
    max_true_citations_per_document: int = 100
    train_end_year: int = 2014
    dev_end_year: int = 2015


@dataclass
class ModelConfig:
    learning_rate: float = 0.001
    l1_regularization: float = 1e-7
    l2_regularization: float = 0.0
    word_dropout: float = 0.1
    margin_multiplier: float = 1.0
    dense_dimension: int = 75
    metadata_dimension: int = 25
    hidden_dimension: int | None = None
    use_pretrained: bool = False
    pretrained_path: str | None = None
    use_siamese_embeddings: bool = True
    use_metadata: bool = True
    number_ann_neighbors: int = 5
    triplets_per_batch: int = 256
    triplets_per_epoch: int | None = None
    epochs: int = 5

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            gamma=self.margin_multiplier,
            learning_rate=self.learning_rate,
            l1_weight=self.l1_regularization,
            l2_weight=self.l2_regularization,
            word_dropout=self.word_dropout,
            batch_size=self.triplets_per_batch,
            triplets_per_epoch=self.triplets_per_epoch,
            epochs=self.epochs,
            rng_seed=seed,
        )


@dataclass
class AnnConfig:
    n_trees: int = 100
    leaf_capacity: int = 32
    search_budget: int | None = None
    training_n_trees: int = 16
    training_search_budget: int | None = None


@dataclass
class Bm25Config:
    k1: float = 1.2
    b: float = 0.75
    key_term_count: int = 20


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    default_k: int = 20
    max_k: int = 500


@dataclass
class AppConfig:
    rng_seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    select: ModelConfig = field(default_factory=ModelConfig)
    rank: ModelConfig = field(default_factory=ModelConfig)
    ann: AnnConfig = field(default_factory=AnnConfig)
    bm25: Bm25Config = field(default_factory=Bm25Config)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def sampler_config(self, seed: int | None = None) -> SamplerConfig:
        return SamplerConfig(
            triplets_per_query=self.data.training_triplets_per_query,
            max_true_citations=self.data.max_true_citations_per_document,
            min_true_citations=self.data.min_true_citations_per_document,
            search_budget=self.ann.training_search_budget,
            rng_seed=self.rng_seed if seed is None else seed,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "AppConfig":
        return cls.from_mapping(_load_mapping(Path(path)))

    @classmethod
    def from_mapping(cls, data: dict) -> "AppConfig":
        sections = {
            "data": DataConfig,
            "select": ModelConfig,
            "rank": ModelConfig,
            "ann": AnnConfig,
            "bm25": Bm25Config,
            "service": ServiceConfig,
        }
        kwargs: dict = {}
        for key, value in data.items():
            if key == "rng_seed":
                kwargs["rng_seed"] = int(value)
            elif key in sections:
                kwargs[key] = _section(sections[key], value, key)
            else:
                raise ConfigError(f"unknown config section {key!r}")
        return cls(**kwargs)


def _section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be a table/object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return cls(**data)


def _load_mapping(path: Path) -> dict:
    if path.suffix == ".json":
        return json.loads(path.read_text())
    if path.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            try:
                import tomli as tomllib  # type: ignore[no-redef]
            except ModuleNotFoundError as exc:
                raise ConfigError(
                    "TOML config needs Python >= 3.11 or the tomli package; "
                    "use a .json config instead"
                ) from exc
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    raise ConfigError(f"unsupported config format {path.suffix!r} (use .json or .toml)")
