from __future__ import annotations

import os
import time

import pytest
from hypothesis import HealthCheck, settings

from panelrecon.pipeline import SynthSpec, generate_synthetic_panel, load_config, run_pipeline, write_fixture

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.register_profile("thorough", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))



@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    """The bundled synthetic fixture, its config, one full pipeline run and its wall time in seconds."""
    root = tmp_path_factory.mktemp("fixture")
    fx = generate_synthetic_panel(SynthSpec(seed=0))
    cfg_path = write_fixture(fx, root)
    t0 = time.perf_counter()
    cfg = load_config(cfg_path)
    manifest = run_pipeline(cfg, root / "out")
    return fx, cfg_path, cfg, manifest, time.perf_counter() - t0
