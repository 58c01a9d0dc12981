import os

import pytest
from hypothesis import HealthCheck, settings

from scenegen.graph import scenario_from_annotations
from scenegen.ingest import SynthConfig, generate_synthetic

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def corpus():
    """Sixty canonical synthetic scenario graphs shared across test modules."""
    scenarios = generate_synthetic(SynthConfig(n_scenarios=60, noise=0.5, rng_seed=11))
    return [scenario_from_annotations(f) for f in scenarios]


@pytest.fixture
def report(capsys):
    """Print one uncaptured PASS/FAIL line per acceptance criterion."""

    def emit(number: int, name: str, passed: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {name}: {'PASS' if passed else 'FAIL'} ({detail})")

    return emit
