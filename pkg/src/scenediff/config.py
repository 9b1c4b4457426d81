"""Run configuration: nested dataclasses with YAML load/dump and sane toy-scale
defaults, so an empty config file runs the whole pipeline with stub providers.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .datasets import DEFAULT_COLORS, DIRECTIONAL_RELATIONS, ToyDatasetConfig
from .errors import DataError

ENDPOINT_ENV_VAR = "SCENEDIFF_EMBED_ENDPOINT"


@dataclass
class DataConfig:
    count: int = 64
    image_size: int = 32
    n_objects: tuple = (2, 2)
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    shapes: tuple = ("square", "circle")
    relations: tuple = DIRECTIONAL_RELATIONS
    allow_duplicate_labels: bool = False

    def toy_config(self, count: Optional[int] = None) -> ToyDatasetConfig:
        return ToyDatasetConfig(
            count=count or self.count,
            image_size=self.image_size,
            colors=dict(self.colors),
            shapes=tuple(self.shapes),
            relations=tuple(self.relations),
            n_objects=tuple(self.n_objects),
            allow_duplicate_labels=self.allow_duplicate_labels,
        )


@dataclass
class EncoderConfig:
    d_obj: int = 512
    d_rel: int = 512
    hidden: int = 512
    d_global: int = 512
    n_layers: int = 5


@dataclass
class ProviderConfig:
    kind: str = "stub"  # stub | external
    text_dim: int = 512
    image_dim: Optional[int] = None  # defaults to encoder d_global
    seed: int = 0
    endpoint: Optional[str] = None
    timeout: float = 10.0
    retries: int = 2


@dataclass
class GcaConfig:
    epochs: int = 40
    batch_size: int = 8
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    disc_steps: int = 1
    gen_steps: int = 1
    val_fraction: float = 0.25


@dataclass
class LossConfig:
    lam: float = 0.7
    beta: float = 0.5
    bandwidths: object = "median-heuristic"
    multi_scale: bool = False


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class DenoiserProfile:
    base_width: int = 32


@dataclass
class ConditioningConfig:
    n_max: int = 8
    d_cond: int = 512


@dataclass
class FinetuneConfig:
    # paper trains at lr 1e-6; the toy profile default is 1e-4 for convergence
    # within a desk-scale step budget
    steps: int = 500
    batch_size: int = 2
    lr: float = 1e-4
    train_encoder: bool = True


@dataclass
class SamplingConfig:
    per_graph: int = 2
    max_graphs: int = 16


@dataclass
class MetricsConfig:
    feature_dim: int = 64
    is_splits: int = 1


@dataclass
class AblationConfig:
    cells: tuple = ("full", "wo_gca", "wo_align", "wo_mmd")
    lam_beta_variants: tuple = ()


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    gca: GcaConfig = field(default_factory=GcaConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserProfile = field(default_factory=DenoiserProfile)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if not 0.0 <= self.loss.lam <= 1.0 or not 0.0 <= self.loss.beta <= 1.0:
            raise DataError("loss.lam and loss.beta must lie in [0,1]")
        if self.data.image_size % 4:
            raise DataError("data.image_size must be divisible by 4")

    @property
    def image_dim(self) -> int:
        return self.provider.image_dim or self.encoder.d_global

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(dc_type, data: dict, path: str):
    if not isinstance(data, dict):
        raise DataError(f"config section {path or '<root>'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise DataError(f"unknown config keys in {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type in _SECTION_TYPES
        ):
            sub_type = _SECTION_TYPES.get(f.type, f.type) if isinstance(f.type, str) else f.type
            kwargs[name] = _coerce(sub_type, value, f"{path}.{name}" if path else name)
        elif isinstance(value, list) and isinstance(getattr(dc_type(), name, None), tuple):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    return dc_type(**kwargs)


_SECTION_TYPES = {
    t.__name__: t
    for t in (
        DataConfig, EncoderConfig, ProviderConfig, GcaConfig, LossConfig,
        ScheduleConfig, DenoiserProfile, ConditioningConfig, FinetuneConfig,
        SamplingConfig, MetricsConfig, AblationConfig,
    )
}


def config_from_dict(data: Optional[dict]) -> RunConfig:
    return _coerce(RunConfig, data or {}, "")


def load_config(path=None) -> RunConfig:
    """RunConfig from a YAML file; None or an empty file yields the defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    with open(p) as f:
        data = yaml.safe_load(f)
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


def build_provider(cfg: RunConfig):
    """Provider from config; the endpoint env var overrides the configured URL."""
    from .conditioning import ExternalEmbeddingProvider, StubEmbeddingProvider

    p = cfg.provider
    endpoint = os.environ.get(ENDPOINT_ENV_VAR, p.endpoint)
    if p.kind == "stub":
        return StubEmbeddingProvider(
            text_dim=p.text_dim, image_dim=cfg.image_dim, seed=p.seed
        )
    if p.kind == "external":
        if not endpoint:
            raise DataError("external provider requires an endpoint (config or env var)")
        return ExternalEmbeddingProvider(
            endpoint, text_dim=p.text_dim, image_dim=cfg.image_dim,
            timeout=p.timeout, retries=p.retries,
        )
    raise DataError(f"unknown provider kind {p.kind!r}")
