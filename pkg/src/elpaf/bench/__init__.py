"""Scenario configs, synthetic datasets, batch evaluation and curve export."""

from .config import ScenarioConfig, expand_config, load_configs, parse_config_text
from .curves import export_curves
from .dataset import generate_dataset, load_manifest
from .harness import BenchReport, run_bench

__all__ = ["ScenarioConfig", "expand_config", "load_configs", "parse_config_text",
           "export_curves", "generate_dataset", "load_manifest", "BenchReport", "run_bench"]
