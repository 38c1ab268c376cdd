import functools
import sys

import pytest

from urbandep import pipeline
from urbandep.synth import Planted, SynthConfig, generate_city

PLANTED3 = (Planted(3, 0.4), Planted(6, -0.4), Planted(9, 0.4))


@functools.lru_cache(maxsize=8)
def small_city(seed=0):
    return generate_city(SynthConfig(ward_grid=(10, 12), planted=(Planted(1, 0.5), Planted(3, -0.5)),
                                     poi_budget=120 * 40, seed=seed))


def in_memory(city):
    """Ingest + profile a SynthCity without touching disk."""
    ing = pipeline.build_ingested(city.pois, city.wards, city.lsoa_scores)
    sources = {p.source.value for p in city.pois}
    cfg = pipeline.PipelineConfig(
        poi_files={s: pipeline.PoiSourceConfig("unused") for s in sources},
        boundaries="unused", scores="unused")
    return cfg, ing, pipeline.run_profile(cfg, ing)


@pytest.fixture
def city_dir(tmp_path):
    city = small_city(0)
    city.write(tmp_path / "city")
    return tmp_path / "city"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
