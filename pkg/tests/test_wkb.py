import math
from dataclasses import replace

import numpy as np
import pytest

from app.potential import EnergyOutOfRange, study_spec
from app.spectral import outgoing_data
from app.wkb import (
    SemiclassicalTable,
    action,
    barrier_time,
    breit_wigner_norm,
    build_table,
    classical_period,
    g_factor,
    g_log_derivative,
    regularized_integral,
    validity_report,
    wkb_levels,
    wkb_width,
)


def test_action_closed_form_without_smoothing() -> None:
    spec = study_spec(delta=0.0)
    energy = 5.5
    harmonic = 15.0 - energy * math.acosh(6.0 / math.sqrt(11.0))
    linear = (spec.w / spec.V_b) * math.sqrt(2.0) * (2.0 / 3.0) * (spec.V_b - energy) ** 1.5
    assert action(spec, energy) == pytest.approx(harmonic + linear, rel=1e-8)
    assert harmonic + linear == pytest.approx(10.489, abs=1e-3)


def test_barrier_time_is_minus_action_slope() -> None:
    spec = study_spec()
    step = 1e-3
    slope = (action(spec, 5.5 - step) - action(spec, 5.5 + step)) / (2.0 * step)
    assert barrier_time(spec, 5.5) == pytest.approx(slope, rel=1e-4)


def test_harmonic_period_below_smoothing() -> None:
    assert classical_period(study_spec(), 2.0) == pytest.approx(2.0 * math.pi, abs=1e-8)


def test_quadrature_converges_under_refinement() -> None:
    spec = study_spec()
    coarse = action(spec, 9.0, order=16)
    fine = action(spec, 9.0, order=64)
    finer = action(spec, 9.0, order=128)
    assert abs(finer - fine) <= abs(fine - coarse) + 1e-12
    assert finer == pytest.approx(fine, rel=1e-9)


def test_regularized_integral_handles_square_root_ends() -> None:
    value = regularized_integral(lambda x: 1.0 / np.sqrt(1.0 - x**2), -1.0, 1.0)
    assert value == pytest.approx(math.pi, rel=1e-12)


def test_barrier_time_diverges_near_top() -> None:
    with pytest.raises(EnergyOutOfRange, match="barrier top"):
        barrier_time(study_spec(), 16.5)


def test_g_factor_table() -> None:
    assert g_factor(0) == pytest.approx(0.93, abs=0.005)
    assert g_factor(1) == pytest.approx(0.97, abs=0.005)
    assert g_factor(2) == pytest.approx(0.98, abs=0.005)
    assert g_factor(100) == pytest.approx(1.0 - 1.0 / 2400.0, abs=1e-4)
    with pytest.raises(ValueError, match="n >= 0"):
        g_factor(-1)


def test_g_log_derivative_vanishes_for_large_n() -> None:
    assert abs(g_log_derivative(1000.0)) < 1e-4
    assert g_log_derivative(0.0) > 0.0


def test_width_without_prefactor_is_bare_exponential() -> None:
    spec = study_spec()
    energy = spec.harmonic_energy(2)
    expected = math.exp(-2.0 * action(spec, energy)) / classical_period(spec, energy)
    assert wkb_width(spec, 2, exact_g=False) == pytest.approx(expected, rel=1e-12)
    assert wkb_width(spec, 2) == pytest.approx(expected / g_factor(2), rel=1e-12)


def test_width_rejects_levels_near_top() -> None:
    with pytest.raises(EnergyOutOfRange):
        wkb_width(study_spec(), 16)


def test_breit_wigner_peak() -> None:
    peak = breit_wigner_norm(3.5, 3.5, 2.0 * math.pi, 5.0)
    assert peak == pytest.approx(2.0 * math.exp(5.0) / math.sqrt(2.0 * math.pi), rel=1e-12)
    assert breit_wigner_norm(3.6, 3.5, 2.0 * math.pi, 5.0) < peak


def test_table_interpolates_exact_integrals(small_spec) -> None:
    table = build_table(small_spec, samples=40)
    assert table.contains(2.0)
    assert float(table.action(2.0)) == pytest.approx(action(small_spec, 2.0), rel=1e-5)
    assert float(table.barrier_time(2.0)) == pytest.approx(barrier_time(small_spec, 2.0), rel=1e-4)
    assert table.continued_action(complex(2.0, 0.0)).real == pytest.approx(float(table.action(2.0)), rel=1e-12)


def test_table_rejects_unsorted_energies() -> None:
    with pytest.raises(ValueError, match="increasing"):
        SemiclassicalTable(
            energies=np.array([1.0, 0.5, 2.0, 3.0]),
            actions=np.array([4.0, 3.0, 2.0, 1.0]),
            periods=np.ones(4),
            barrier_times=np.ones(4),
        )


def test_validity_report_covers_turning_points() -> None:
    report = validity_report(study_spec(), 3.5)
    assert set(report.bounds) == {"c", "a", "b"}
    assert report.bounds["b"] == math.inf
    assert isinstance(report.ok, bool)


def test_wkb_levels_basis(small_spec) -> None:
    levels = wkb_levels(small_spec, 3)
    assert [level.E for level in levels] == [0.5, 1.5, 2.5]
    assert all(level.psi is None and level.delta == 0.0 for level in levels)
    assert all(level.width_source == "wkb" for level in levels)


def test_wkb_widths_track_cap_widths(small_spec, small_resonances) -> None:
    for state in small_resonances[:2]:
        ratio = wkb_width(small_spec, state.n) / state.Gamma
        assert 0.5 < ratio < 2.0


def test_wkb_momentum_matches_outgoing_data_for_small_hbar(small_spec) -> None:
    spec = replace(small_spec, hbar=0.5)
    for level in wkb_levels(spec, 2):
        k_abs, _, amplitude = outgoing_data(level.E, level.Gamma, spec.m, spec.hbar)
        assert level.k_abs == pytest.approx(math.sqrt(2.0 * spec.m * level.E))
        assert level.k_abs == pytest.approx(k_abs, rel=1e-3)
        assert level.A == pytest.approx(amplitude, rel=1e-3)
