import logging
import math

import numpy as np
import pytest

from app.current import (
    CurrentSeries,
    IndexMismatch,
    SeriesError,
    annotate_window,
    applicability_window,
    average_rate,
    characteristic_energy,
    ensemble_current,
    formula_current,
    integrate_window,
    per_cycle_leak,
    survival_from_current,
)
from app.spectral import ResonantState, outgoing_data


def _level(n: int, energy: float, gamma: float) -> ResonantState:
    k_abs, delta, amplitude = outgoing_data(energy, gamma, 1.0, 1.0)
    return ResonantState(
        n=n,
        eps=complex(energy, -0.5 * gamma),
        E=energy,
        Gamma=gamma,
        psi=None,
        A=amplitude,
        k_abs=k_abs,
        delta=delta,
    )


def _ladder(widths: list[float]) -> list[ResonantState]:
    return [_level(n, n + 0.5, width) for n, width in enumerate(widths)]


def test_single_level_current_is_exponential() -> None:
    states = _ladder([0.05])
    times = np.linspace(0.0, 20.0, 101)
    series = formula_current(states, np.array([0.8]), times)
    assert np.allclose(series.j, 0.64 * 0.05 * np.exp(-0.05 * times))
    assert series.provenance == "formula"


def test_cross_term_uses_second_level_momentum() -> None:
    states = _ladder([0.01, 0.04])
    c = np.array([0.6, 0.7 * np.exp(0.4j)])
    t = 3.0
    j = formula_current(states, c, np.array([t])).j[0]
    expected = sum(abs(c[n]) ** 2 * states[n].Gamma * math.exp(-states[n].Gamma * t) for n in range(2))
    for n, m in ((0, 1), (1, 0)):
        amplitude = abs(c[n]) * abs(c[m]) * states[m].k_abs
        amplitude *= math.sqrt(states[n].Gamma * states[m].Gamma / (states[n].re_k * states[m].re_k))
        phase = (states[n].E - states[m].E) * t + np.angle(c[m]) - np.angle(c[n]) + states[m].delta
        expected += amplitude * math.cos(phase) * math.exp(-0.5 * (states[n].Gamma + states[m].Gamma) * t)
    assert j == pytest.approx(expected, rel=1e-12)


def test_index_mismatch() -> None:
    states = _ladder([0.01, 0.02])
    with pytest.raises(IndexMismatch):
        formula_current(states, np.array([1.0]), np.array([0.0]))
    with pytest.raises(IndexMismatch, match="level index"):
        formula_current(states[::-1], np.array([0.5, 0.5]), np.array([0.0]))


def test_series_validation() -> None:
    with pytest.raises(SeriesError, match="increasing"):
        CurrentSeries(times=np.array([0.0, 1.0, 1.0]), j=np.zeros(3), provenance="formula")
    with pytest.raises(SeriesError, match="provenance"):
        CurrentSeries(times=np.array([0.0, 1.0]), j=np.zeros(2), provenance="measured")


def test_survival_integrates_current() -> None:
    states = _ladder([0.1])
    times = np.linspace(0.0, 10.0, 2001)
    series = formula_current(states, np.array([1.0]), times)
    assert np.allclose(survival_from_current(series), np.exp(-0.1 * times), atol=1e-6)
    late = CurrentSeries(times=times + 1.0, j=series.j, provenance="formula")
    with pytest.raises(SeriesError, match="t=0"):
        survival_from_current(late)


def test_average_rate_and_per_cycle_leak() -> None:
    states = _ladder([0.01, 0.03])
    c = np.array([0.6, 0.8])
    assert average_rate(states, c) == pytest.approx(0.36 * 0.01 + 0.64 * 0.03)
    assert per_cycle_leak(0.02, 1.0) == pytest.approx(2.0 * math.pi * 0.02)
    with pytest.raises(ValueError):
        per_cycle_leak(0.02, 0.0)


def test_integrate_window_interpolates_ends() -> None:
    times = np.linspace(0.0, 4.0, 5)
    series = CurrentSeries(times=times, j=2.0 * times, provenance="evolution")
    assert integrate_window(series, 0.5, 3.5) == pytest.approx(3.5**2 - 0.5**2)
    with pytest.raises(SeriesError):
        integrate_window(series, -1.0, 2.0)


def test_applicability_window_and_annotation(caplog: pytest.LogCaptureFixture) -> None:
    states = _ladder([0.01, 0.03])
    c = np.array([0.6, 0.8])
    lower, upper = applicability_window(states, c, omega=1.0)
    assert lower == pytest.approx(2.0 * math.pi)
    assert upper == pytest.approx(5.0 / average_rate(states, c))
    series = formula_current(states, c, np.linspace(0.0, 400.0, 401))
    with caplog.at_level(logging.WARNING):
        annotate_window(series, (lower, upper))
    assert series.window == (lower, upper)
    assert not series.in_window()[0]
    assert "outside the applicability window" in caplog.text


def test_ensemble_average_approaches_diagonal_sum() -> None:
    states = _ladder([0.005, 0.02, 0.05, 0.1])
    magnitudes = np.array([0.5, 0.6, 0.5, 0.3])
    times = np.linspace(0.0, 10.0, 41)
    ensemble = ensemble_current(states, magnitudes, times, draws=4096, seed=5)
    diagonal = sum(m**2 * s.Gamma * np.exp(-s.Gamma * times) for m, s in zip(magnitudes, states))
    assert np.all(np.abs(ensemble.j / diagonal - 1.0) < 0.08)
    assert ensemble.metadata["draws"] == 4096


def test_characteristic_energy_ignores_negligible_levels() -> None:
    states = _ladder([1e-5, 1e-3, 1e-1])
    c = np.array([0.9, 0.4, 1e-4])
    assert characteristic_energy(states, c) == pytest.approx(1.5)
