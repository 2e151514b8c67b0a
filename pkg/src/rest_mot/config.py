"""Run configuration shared by the command-line subcommands."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .association import TrackerConfig
from .mpn import DEFAULT_ITERATIONS, FeatureMask
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n_iter: int = DEFAULT_ITERATIONS  # L
    window: int = 3  # M
    epsilon: float = 0.9
    gamma: float = 2.0
    alpha: float | None = 0.25
    base_lr: float = 0.01
    warmup_epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 100
    drop_probability: float = 0.1
    validation_fraction: float = 0.1
    seed: int = 0
    init_scheme: str = "linear-default"
    aggregation: str = "sum"
    grad_clip: float | None = 1.0
    normalize_appearance: bool = False
    aggregate_position: str = "mean"
    no_split_spatial: bool = False
    no_split_temporal: bool = False
    no_appearance: bool = False
    no_projection: bool = False
    no_speed: bool = False
    match_threshold: float = 1.0

    def __post_init__(self) -> None:
        # building the derived configs runs their validation
        try:
            self.train_config()
            self.tracker_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.match_threshold <= 0:
            raise ConfigError("match_threshold must be positive")
        if self.aggregation not in ("sum", "mean"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    @property
    def features(self) -> FeatureMask:
        return FeatureMask(not self.no_appearance, not self.no_projection, not self.no_speed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, drop_probability=self.drop_probability, window=self.window, seed=self.seed,
            gamma=self.gamma, alpha=self.alpha, validation_fraction=self.validation_fraction, n_iter=self.n_iter,
            base_lr=self.base_lr, warmup_epochs=self.warmup_epochs, beta1=self.beta1, beta2=self.beta2,
            adam_epsilon=self.adam_epsilon, epsilon=self.epsilon, features=self.features,
            normalize_appearance=self.normalize_appearance, init_scheme=self.init_scheme,
            aggregation=self.aggregation, grad_clip=self.grad_clip,
        )

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            n_iter=self.n_iter, window=self.window, epsilon=self.epsilon, split_spatial=not self.no_split_spatial,
            split_temporal=not self.no_split_temporal, features=self.features,
            normalize_appearance=self.normalize_appearance, aggregate_position=self.aggregate_position,
            aggregation=self.aggregation,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def override(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(d)
