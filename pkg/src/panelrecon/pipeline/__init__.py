"""Configuration, synthetic fixtures, feature assembly and the end-to-end runner."""

from .config import STAGES, PipelineConfig, load_config, parse_config, preflight
from .features import FeatureSpec, build_features, deflated_wage
from .run import Certificate, RunManifest, monthly_from_annual, run_pipeline
from .synth import SynthSpec, SyntheticFixture, city_of, generate_synthetic_panel, write_fixture

__all__ = [
    "STAGES", "Certificate", "FeatureSpec", "PipelineConfig", "RunManifest", "SynthSpec", "SyntheticFixture",
    "build_features", "city_of", "deflated_wage", "generate_synthetic_panel", "load_config",
    "monthly_from_annual", "parse_config", "preflight", "run_pipeline", "write_fixture",
]
