from .config import SETTINGS, PipelineConfig, build_config, load_config
from .pipeline import prepare, run_ablation, run_pipeline, run_setting

__all__ = ["SETTINGS", "PipelineConfig", "build_config", "load_config",
           "prepare", "run_ablation", "run_pipeline", "run_setting"]
