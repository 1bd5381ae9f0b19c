"""Configuration management using Pydantic settings."""

from pathlib import Path
from typing import Dict, Literal, Tuple, Union

from loguru import logger
from pydantic import Field, PositiveFloat, PositiveInt, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from glat.exceptions import ConfigError, MissingInputError
from glat.models import FeatureProviderSpec, SynthSpec, TrainConfig


class Settings(BaseSettings):
    """Run settings loaded from a ``key = value`` file, environment or ``.env``."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="GLAT_",
        case_sensitive=False,
        populate_by_name=True,
        extra="forbid",
    )

    # Feature provider (local extractor stand-in)
    provider: Literal["passthrough", "random-projection"] = Field(
        default="passthrough",
        description="Local extractor: passthrough or random-projection",
    )
    provider_seed: int = Field(default=0, description="Seed of the random projection")
    provider_dim: PositiveInt = Field(
        default=32,
        description="Output dimension of the random-projection provider",
    )

    # Frozen scorer and iterative selection
    scorer: Literal["fm", "none"] = Field(
        default="fm",
        description="Selection scorer: frozen projections (fm) or identity Q/K/V on the embeddings (none)",
    )
    irm_seed: int = Field(default=7, description="Seed of the frozen W_Q/W_K/W_V")
    irm_tie_qk: bool = Field(default=True, description="Use W_Q as W_K in the frozen scorer")
    irm_d_k: PositiveInt = Field(default=16, description="Frozen key/query width")
    irm_d_v: PositiveInt = Field(default=16, description="Frozen value width")
    m: PositiveInt = Field(default=32, description="Patches kept per slide (top M)")
    t: PositiveInt = Field(default=4, description="Number of refinement iterations")
    shuffle_seed: int = Field(default=0, description="Seed of the subset partition shuffle")
    score_mode: Literal["received", "row-mean"] = Field(
        default="received",
        description="Importance score: column mean (received) or literal row mean",
    )
    selection: Literal["irm", "random"] = Field(
        default="irm",
        description="Patch selection: iterative refinement or random M patches",
    )

    # Graph
    sigma: Union[Literal["median"], PositiveFloat] = Field(
        default="median",
        description="Gaussian kernel width, or 'median' heuristic",
    )
    filter_order: int = Field(default=2, ge=0, le=4, description="Polynomial order K of L_theta")

    # Attention
    lambda_: float = Field(
        default=0.1,
        ge=0.0,
        alias="lambda",
        description="Weight of the graph bias in the attention logits",
    )
    graph_bias: Literal["laplacian", "negative-laplacian", "adjacency"] = Field(
        default="laplacian",
        description="Graph bias matrix added to attention logits",
    )
    heads: PositiveInt = Field(default=1, description="Attention heads sharing one Laplacian")
    attention: Literal["gla", "msa"] = Field(
        default="gla",
        description="Graph Laplacian attention or plain self-attention",
    )
    aggregation: Literal["convex", "mean"] = Field(
        default="convex",
        description="Slide pooling: learned convex weights or mean pooling",
    )
    d_k: PositiveInt = Field(default=16, description="Trainable query/key width")
    d_v: PositiveInt = Field(default=16, description="Trainable value width")

    # Training
    lr: PositiveFloat = Field(default=1e-4, description="Adam learning rate")
    weight_decay: float = Field(default=1e-5, ge=0.0, description="Decoupled weight decay")
    batch_size: PositiveInt = Field(default=16, description="Slides per batch")
    max_epochs: PositiveInt = Field(default=100, description="Epoch limit")
    patience: PositiveInt = Field(default=10, description="Early stopping patience")
    alpha: float = Field(default=0.01, ge=0.0, description="Smoothness penalty weight")
    seed: int = Field(default=0, description="Seed of parameter init and batch shuffling")
    fd_check: bool = Field(
        default=False,
        description="Run a finite-difference gradient check before training",
    )
    kappa_weighting: Literal["none", "quadratic"] = Field(
        default="none",
        description="Cohen's kappa weighting",
    )
    folds: int = Field(default=5, ge=2, description="Cross-validation folds")
    val_fraction: float = Field(
        default=0.2,
        gt=0.0,
        lt=1.0,
        description="Validation share of the slides for the train command",
    )

    # Synthetic generator
    grid_w: PositiveInt = Field(default=16, description="Synthetic grid width")
    grid_h: PositiveInt = Field(default=16, description="Synthetic grid height")
    embed_dim: PositiveInt = Field(default=32, description="Synthetic embedding dimension")
    n_slides: PositiveInt = Field(default=200, description="Synthetic slide count")
    lesion_count_min: int = Field(default=1, ge=0)
    lesion_count_max: int = Field(default=1, ge=0)
    lesion_radius_min: int = Field(default=3, ge=0)
    lesion_radius_max: int = Field(default=4, ge=0)
    class_signal_scale: PositiveFloat = Field(default=3.0)
    noise_scale: float = Field(default=0.5, ge=0.0)
    class_mixture: Tuple[float, ...] = Field(
        default=(0.25, 0.25, 0.25, 0.25),
        description="Share of slides per class",
    )
    synth_seed: int = Field(default=0, description="Seed of the synthetic generator")

    # Outputs
    heatmap_source: Literal["irm", "gla"] = Field(
        default="irm",
        description="Heatmap scores: IRM importance or GLA attention received",
    )
    heatmap_normalization: Literal["minmax", "none"] = Field(default="minmax")
    output_dir: Path = Field(
        default=Path("temp/output"),
        description="Output directory for generated files",
    )

    @field_validator("class_mixture", mode="before")
    @classmethod
    def _split_mixture(cls, value):
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    def provider_spec(self) -> FeatureProviderSpec:
        """Feature provider described by these settings."""
        return FeatureProviderSpec(
            kind=self.provider,
            seed=self.provider_seed,
            out_dim=self.provider_dim,
        )

    def train_config(self) -> TrainConfig:
        """Optimizer and loop settings."""
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            alpha=self.alpha,
            seed=self.seed,
            fd_check=self.fd_check,
            kappa_weighting=self.kappa_weighting,
        )

    def synth_spec(self) -> SynthSpec:
        """Synthetic dataset described by these settings."""
        return SynthSpec(
            grid_w=self.grid_w,
            grid_h=self.grid_h,
            d=self.embed_dim,
            n_slides=self.n_slides,
            lesion_count_range=(self.lesion_count_min, self.lesion_count_max),
            lesion_radius_range=(self.lesion_radius_min, self.lesion_radius_max),
            class_signal_scale=self.class_signal_scale,
            noise_scale=self.noise_scale,
            class_mixture=self.class_mixture,
            seed=self.synth_seed,
        )


def parse_config_file(path: Path) -> Dict[str, str]:
    """
    Read ``key = value`` lines.

    Args:
        path: Config file path

    Returns:
        Mapping of raw string values

    Raises:
        MissingInputError: If the file does not exist
        ConfigError: On a line without ``=`` or a repeated key
    """
    if not path.exists():
        raise MissingInputError(f"Config file not found: {path}")

    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"Expected 'key = value' at line {line_no}: {raw.strip()}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"Empty key at line {line_no}")
            if key in values:
                raise ConfigError(f"Duplicate key '{key}' at line {line_no}")
            values[key] = value
    return values


def load_settings(path: Union[str, Path, None] = None, **overrides) -> Settings:
    """
    Build settings from an optional config file plus keyword overrides.

    Args:
        path: Config file (``key = value`` lines, ``#`` comments)
        **overrides: Values that win over the file (e.g. CLI ``--seed``)

    Returns:
        Validated settings

    Raises:
        ConfigError: If a key is unknown or a value fails validation
    """
    values: Dict[str, object] = {}
    if path is not None:
        values.update(parse_config_file(Path(path)))
        logger.debug("Loaded {} config keys from {}", len(values), path)
    values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return Settings(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


# Global settings instance
settings = Settings()
