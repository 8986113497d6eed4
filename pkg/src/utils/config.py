"""Configuration management for the scene-flow adaptation toolkit"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from src.utils.error_handler import ConfigurationError

load_dotenv()


class _Section(BaseModel):
    """Base for config sections: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid", frozen=True)


class LoggingConfig(_Section):
    level: str = Field(default=os.getenv("SFUDA_LOG_LEVEL", "INFO"))
    directory: str = Field(default=os.getenv("SFUDA_LOG_DIR", "logs"))

    @field_validator("level")
    @classmethod
    def validate_level(cls, v):
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Invalid log level: {v}")
        return v.upper()


class DbscanConfig(_Section):
    """Density clustering parameters"""
    epsilon: float = Field(default=0.5, gt=0)  # meters
    min_points: int = Field(default=8, ge=1)


class CrConfig(_Section):
    """Correspondence refinement parameters"""
    k_neighbors: int = Field(default=6, ge=1)


class EmaConfig(_Section):
    """Teacher smoothing coefficient"""
    alpha: float = Field(default=0.999, ge=0.0, le=1.0)


class TransformConfig(_Section):
    """Student-side input transformation"""
    kind: Literal["rotation", "translation", "rotation+translation"] = "rotation"
    rotation_range_deg: float = Field(default=15.0, ge=0.0, le=180.0)
    translation_range: float = Field(default=0.5, ge=0.0)  # meters per horizontal axis
    symmetric: bool = False
    # Express pseudo-labels in the student's transformed view
    reconcile: bool = True


class EstimatorConfig(_Section):
    embedding_dim: int = Field(default=8, ge=3)
    candidate_k: int = Field(default=16, ge=1)
    init_temperature: float = Field(default=1.0, gt=0)
    init_scale: float = Field(default=1.0, gt=0)


class OptimizerConfig(_Section):
    learning_rate: float = Field(default=0.05, gt=0)
    grad_clip: float = Field(default=10.0, gt=0)


class ScheduleConfig(_Section):
    pretrain_steps: int = Field(default=300, ge=0)
    adapt_steps: int = Field(default=500, ge=0)
    eval_interval: int = Field(default=50, ge=1)


class PreprocessConfig(_Section):
    ground_strategy: Literal["entity", "height", "none"] = "entity"
    height_threshold: float = Field(default=0.3)  # meters above the ego ground plane
    max_range: float = Field(default=60.0, gt=0)  # meters
    num_points: int = Field(default=8192, ge=1)
    front_view_only: bool = False


class MetricsConfig(_Section):
    averaging: Literal["per_pair", "pooled"] = "per_pair"


class PipelineConfig(_Section):
    """Pseudo-label pipeline toggles (component ablation)"""
    use_dr: bool = True
    use_cr: bool = True


class AblationConfig(_Section):
    alphas: List[float] = Field(default_factory=lambda: [0.990, 0.993, 0.996, 0.999])
    k_values: List[int] = Field(default_factory=lambda: [3, 6, 9, 12, 15, 18])
    ground_strategies: List[str] = Field(default_factory=lambda: ["none", "height", "entity"])
    transforms: List[str] = Field(default_factory=lambda: ["asymmetric", "symmetric"])
    pretrain_steps: int = Field(default=100, ge=0)
    adapt_steps: int = Field(default=150, ge=0)

    @field_validator("alphas")
    @classmethod
    def validate_alphas(cls, v):
        if any(not 0.0 <= a <= 1.0 for a in v):
            raise ValueError(f"alpha values must lie in [0, 1]: {v}")
        return v

    @field_validator("k_values")
    @classmethod
    def validate_k_values(cls, v):
        if any(k < 1 for k in v):
            raise ValueError(f"K values must be >= 1: {v}")
        return v


class DataConfig(_Section):
    source_dir: Optional[str] = None
    target_dir: Optional[str] = None
    val_dir: Optional[str] = None
    scene_script: Optional[str] = None
    num_pairs: int = Field(default=8, ge=1)


class RunConfig(BaseSettings):
    """Every knob of a run, parse-validated with defaulting"""

    seed: int = Field(default=0, ge=0)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    dbscan: DbscanConfig = Field(default_factory=DbscanConfig)
    refine: CrConfig = Field(default_factory=CrConfig)
    ema: EmaConfig = Field(default_factory=EmaConfig)
    transform: TransformConfig = Field(default_factory=TransformConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    model_config = SettingsConfigDict(
        env_prefix="SFUDA_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="forbid",
        case_sensitive=False,
        frozen=True,
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # .env values are already in the environment via load_dotenv
        return init_settings, env_settings

    @classmethod
    def load(cls, path: Optional[str] = None, **overrides: Any) -> "RunConfig":
        """Load a YAML config file, then apply keyword overrides"""
        data: Dict[str, Any] = {}
        if path:
            config_path = Path(path)
            if not config_path.is_file():
                raise ConfigurationError(f"Config file not found: {path}")
            try:
                loaded = yaml.safe_load(config_path.read_text()) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Malformed config {path}: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"Config {path} must be a mapping at top level")
            data.update(loaded)
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**data)
        except ValidationError as e:
            raise ConfigurationError(f"Configuration errors: {e}") from e

    def resolved(self) -> Dict[str, Any]:
        """Fully defaulted config as plain data"""
        return self.model_dump(mode="json")

    def replace(self, **sections: Any) -> "RunConfig":
        """Copy with some sections or fields swapped, re-validated"""
        data = self.resolved()
        for key, value in sections.items():
            data[key] = value.model_dump(mode="json") if isinstance(value, BaseModel) else value
        try:
            return type(self)(**data)
        except ValidationError as e:
            raise ConfigurationError(f"Configuration errors: {e}") from e
