"""Person-name extraction from news-video frame sequences."""

from .config import PipelineConfig, load_config
from .pipeline import RunResult, run_pipeline

__all__ = ["PipelineConfig", "RunResult", "load_config", "run_pipeline"]
__version__ = "0.1.0"
