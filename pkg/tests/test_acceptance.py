import json
from pathlib import Path

import pytest

from app.config import load_config
from app.experiments import run

PROJECT_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="module")
def study_summary(tmp_path_factory: pytest.TempPathFactory) -> dict:
    config = load_config(PROJECT_ROOT, path=PROJECT_ROOT / "config.numerics.yaml")
    directory = run(config, "reproduce-paper", tmp_path_factory.mktemp("runs"))
    for index in range(1, 8):
        assert (directory / f"fig{index}.csv").exists()
    return json.loads((directory / "summary.json").read_text(encoding="utf-8"))


@pytest.mark.slow
def test_coherent_weights_and_level_ratio(study_summary: dict) -> None:
    coherent = study_summary["coherent"]
    assert coherent["c5_abs2"] == pytest.approx(6.5e-3, abs=2e-4)
    assert coherent["high_amplitude_dominant_level"] == 4
    assert coherent["E9_over_V_b"] == pytest.approx(0.5278, abs=1e-4)
    assert study_summary["g_factors"]["0"] == pytest.approx(0.93, abs=5e-3)


@pytest.mark.slow
def test_low_level_widths_match_semiclassics(study_summary: dict) -> None:
    for level in study_summary["resonances"][:4]:
        assert level["wkb_ratio"] == pytest.approx(1.0, abs=0.25)


@pytest.mark.slow
def test_formula_tracks_absorbing_evolution(study_summary: dict) -> None:
    assert study_summary["formula_vs_evolution"]["normalized_max"] <= 1e-2


@pytest.mark.slow
def test_hard_wall_agrees_until_reflection(study_summary: dict) -> None:
    walls = study_summary["cap_vs_hard_wall"]
    assert walls["before"]["normalized_max"] < 1e-2
    assert walls["after"]["normalized_max"] > 1e-2


@pytest.mark.slow
def test_bursts_follow_the_saddle_point(study_summary: dict) -> None:
    saddle = study_summary["saddle"]
    assert abs(saddle["peak_error"]) <= 0.04
    assert abs(saddle["width_error"]) <= 0.04
    assert all(abs(error) <= 0.15 for error in saddle["cycle_leak_errors"])


@pytest.mark.slow
def test_random_phases_wash_out_the_steps(study_summary: dict) -> None:
    scrambled = study_summary["random_phase"]
    assert scrambled["max_relative_deviation"] <= 0.1
    assert scrambled["coherent_steps"] >= 5
    assert scrambled["random_steps"] < scrambled["coherent_steps"]
