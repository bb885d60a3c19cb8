"""Configuration management for the ARC convolution toolkit."""

from typing import Any, Dict

from pydantic_settings import BaseSettings

from arcconv.models.configs import DType


class Settings(BaseSettings):
    """Application settings, overridable through ARC_* environment variables or .env."""

    app_name: str = "arcconv"
    app_version: str = "1.0.0"
    log_level: str = "INFO"

    # Numerics
    default_dtype: DType = DType.BINARY32
    default_seed: int = 0
    layer_norm_eps: float = 1e-6
    angle_coefficient_deg: float = 180.0

    # Training
    backbone_lr_scale: float = 0.1
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 8

    # Benchmarks
    bench_threads: int = 1
    bench_trials: int = 5
    bench_warmup: int = 2

    model_config = {
        "env_file": ".env",
        "env_prefix": "ARC_",
        "extra": "ignore"
    }


# Global settings instance
settings = Settings()


def get_training_defaults() -> Dict[str, Any]:
    """Defaults for `train` flags that are not given explicitly."""
    return {
        "lr": settings.learning_rate,
        "momentum": settings.momentum,
        "backbone_lr_scale": settings.backbone_lr_scale,
        "batch_size": settings.batch_size,
        "epochs": settings.epochs,
        "seed": settings.default_seed,
        "coeff_deg": settings.angle_coefficient_deg,
        "dtype": settings.default_dtype,
    }


def get_bench_defaults() -> Dict[str, Any]:
    """Defaults for the benchmark harness."""
    return {
        "threads": settings.bench_threads,
        "trials": settings.bench_trials,
        "warmup": settings.bench_warmup,
    }
