from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable

import numpy as np

from app.artifacts import RunArtifacts, read_csv_columns
from app.config import ConfigError, RunConfig
from app.current import (
    CurrentSeries,
    annotate_window,
    applicability_window,
    average_rate,
    characteristic_energy,
    ensemble_current,
    formula_current,
    per_cycle_leak,
    survival_from_current,
)
from app.decomposition import (
    InitialState,
    OverlapMatrix,
    coherent_coefficients,
    coherent_truncation_mass,
    coherent_wavefunction,
    default_n_max,
    dominant_level,
    load_state_file,
    oscillator_eigenfunction,
    overlap,
    project,
    random_phase_state,
)
from app.discretization import CAP, HARD_WALL, HamiltonianMatrix, assemble, prob_in_well
from app.evolution import (
    EvolutionConfig,
    EvolutionRecord,
    ResidualReport,
    burst_centres,
    compare,
    comparison_cutoff,
    count_resolved_steps,
    cycle_integrals,
    fit_gaussian_burst,
    reflection_time,
    run_evolution,
)
from app.potential import barrier_top, imag_part, real_part, turning_points
from app.saddle import ContinuationOutOfRange, NoConvergence, burst_current, full_saddle_current, solve_saddle
from app.spectral import ResonantState, eigendecompose, select_resonances
from app.wkb import (
    TABLE_SPAN,
    SemiclassicalTable,
    action,
    barrier_time,
    build_table,
    classical_period,
    g_factor,
    validity_report,
    wkb_levels,
    wkb_width,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("resonances", "wkb", "decompose", "current", "saddle", "evolve", "compare", "reproduce-paper")
SADDLE_SAMPLES = 201
STATE_PLOT_LEVELS = 4
HIGH_AMPLITUDE = 2.0
REFLECTION_MARGIN = 1.25
CURRENT_COLUMNS = ("j", "j_evolution", "j_formula", "j_burst")


@dataclass(frozen=True)
class RunInputs:
    compare_a: Path | None = None
    compare_b: Path | None = None


def _finite(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _window(window: tuple[float, float] | None) -> list[float | None] | None:
    if window is None:
        return None
    return [_finite(window[0]), _finite(window[1])]


class Session:
    """Resolved numerics of one config; expensive pieces are built once and shared."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.spec = config.spec()
        self.grid = config.grid.resolve(self.spec)
        self.x_t = config.x_t()
        self._lock = threading.Lock()
        self._hamiltonians: dict[str, HamiltonianMatrix] = {}

    def hamiltonian(self, boundary: str) -> HamiltonianMatrix:
        with self._lock:
            if boundary not in self._hamiltonians:
                self._hamiltonians[boundary] = assemble(self.spec, self.grid, boundary)
            return self._hamiltonians[boundary]

    @cached_property
    def resonances(self) -> list[ResonantState]:
        hamiltonian = self.hamiltonian(CAP)
        return select_resonances(eigendecompose(hamiltonian), hamiltonian, self.x_t, self.config.spectral.max_count)

    @cached_property
    def overlap_matrix(self) -> OverlapMatrix:
        return overlap(self.resonances, self.grid, self.x_t)

    @cached_property
    def table(self) -> SemiclassicalTable:
        return build_table(self.spec, self.config.wkb.samples, self.config.wkb.order)

    def wkb_level_count(self) -> int:
        limit = TABLE_SPAN[1] * barrier_top(self.spec)
        count = 0
        while count < self.config.spectral.max_count and self.spec.harmonic_energy(count) < limit:
            count += 1
        return count

    def basis(self, kind: str) -> list[ResonantState]:
        if kind == "wkb":
            return wkb_levels(self.spec, self.wkb_level_count(), self.table, exact_g=True)
        return self.resonances

    def evolution_config(self, boundary: str | None = None, T: float | None = None) -> EvolutionConfig:
        cfg = self.config.evolution.resolve(self.spec, boundary)
        return replace(cfg, T=T) if T is not None else cfg

    def initial_wavefunction(self, kind: str, alpha: complex) -> tuple[np.ndarray, np.ndarray | None]:
        """Sampled psi0 and, unless it came from a file, its oscillator-level coefficients."""
        state = self.config.state
        if kind == "file":
            try:
                return load_state_file(Path(state.file), self.grid, self.x_t), None
            except (OSError, ValueError) as exc:
                raise ConfigError(f"state.file: {exc}") from exc
        if state.n_max is not None:
            n_max = state.n_max
        else:
            n_max = default_n_max(alpha, self.config.spectral.max_count)
        if kind == "coherent":
            return coherent_wavefunction(alpha, self.spec, self.grid), coherent_coefficients(alpha, n_max)
        coefficients = random_phase_state(np.abs(coherent_coefficients(alpha, n_max)), state.seed)
        psi0 = np.zeros(self.grid.N, dtype=complex)
        for n, coefficient in enumerate(coefficients):
            psi0 += coefficient * oscillator_eigenfunction(n, self.spec, self.grid.x)
        return psi0, coefficients

    def initial_state(
        self,
        basis_kind: str | None = None,
        kind: str | None = None,
        alpha: complex | None = None,
    ) -> InitialState:
        basis_kind = basis_kind or self.config.spectral.basis
        kind = kind or self.config.state.kind
        alpha = self.config.state.complex_alpha if alpha is None else alpha
        psi0, oscillator = self.initial_wavefunction(kind, alpha)
        states = self.basis(basis_kind)
        if basis_kind == "wkb":
            if oscillator is None:
                oscillator = project(psi0, self.resonances, self.overlap_matrix)
            coefficients = np.zeros(len(states), dtype=complex)
            used = min(len(states), oscillator.shape[0])
            coefficients[:used] = oscillator[:used]
        else:
            coefficients = project(psi0, states, self.overlap_matrix)
        return InitialState(coefficients=coefficients, basis=states, psi0=psi0, label=f"{kind}/{basis_kind}")

    def initial_probability(self, state: InitialState) -> float:
        if state.psi0 is None:
            return state.captured_weight
        return prob_in_well(state.psi0, self.grid, self.x_t)

    def formula_series(self, state: InitialState, times: np.ndarray) -> CurrentSeries:
        limit = TABLE_SPAN[1] * barrier_top(self.spec)
        actions = [action(self.spec, level.E) for level in state.basis if level.E < limit]
        window = applicability_window(state.basis, state.coefficients, self.spec.omega, self.spec.hbar, actions)
        series = formula_current(state.basis, state.coefficients, times, self.spec.hbar, metadata={"label": state.label})
        return annotate_window(series, window)

    def evolve(self, psi0: np.ndarray, cfg: EvolutionConfig) -> EvolutionRecord:
        return run_evolution(self.hamiltonian(cfg.boundary), psi0, cfg, self.x_t)


def _report(report: ResidualReport | None) -> dict[str, Any] | None:
    return None if report is None else report.to_dict()


def stage_resonances(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    spec = session.spec
    states = session.resonances
    limit = TABLE_SPAN[1] * barrier_top(spec)
    widths = [wkb_width(spec, s.n) if spec.harmonic_energy(s.n) < limit else math.nan for s in states]
    out.csv(
        "resonances.csv",
        {
            "n": [s.n for s in states],
            "E": [s.E for s in states],
            "E_harmonic": [spec.harmonic_energy(s.n) for s in states],
            "Gamma": [s.Gamma for s in states],
            "Gamma_wkb": widths,
            "wkb_ratio": [w / s.Gamma for w, s in zip(widths, states)],
            "width_source": [s.width_source for s in states],
            "localization_fraction": [s.localization for s in states],
            "k_abs": [s.k_abs for s in states],
            "delta": [s.delta for s in states],
            "A": [s.A for s in states],
        },
    )
    return {"count": len(states), "condition": session.overlap_matrix.condition}


def stage_wkb(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    spec = session.spec
    table = session.table
    levels = range(session.wkb_level_count())
    energies = [spec.harmonic_energy(n) for n in levels]
    reports = [validity_report(spec, energy) for energy in energies]
    cap_widths = {state.n: state.Gamma for state in session.resonances}
    out.csv(
        "wkb.csv",
        {
            "n": list(levels),
            "E_n": energies,
            "S_n": [action(spec, energy) for energy in energies],
            "t_n": [classical_period(spec, energy) for energy in energies],
            "tau_n": [barrier_time(spec, energy) for energy in energies],
            "g_n": [g_factor(n) for n in levels],
            "Gamma_n_wkb": [wkb_width(spec, n, table) for n in levels],
            "Gamma_n_cap": [cap_widths.get(n, math.nan) for n in levels],
            "Gamma_n_wkb_g1": [wkb_width(spec, n, table, exact_g=False) for n in levels],
            "validity_ok": [report.ok for report in reports],
            "bound_c": [report.bounds["c"] for report in reports],
            "bound_a": [report.bounds["a"] for report in reports],
            "bound_b": [report.bounds["b"] for report in reports],
        },
    )
    out.csv(
        "wkb_table.csv",
        {"E": table.energies, "S": table.actions, "t": table.periods, "tau": table.barrier_times},
    )
    return {"levels": len(energies), "table_span": [table.e_min, table.e_max]}


def stage_decompose(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    config = session.config
    state = session.initial_state()
    alpha = config.state.complex_alpha
    c = state.coefficients
    columns: dict[str, Any] = {
        "n": [level.n for level in state.basis],
        "E": [level.E for level in state.basis],
        "Gamma": [level.Gamma for level in state.basis],
        "Re c_n": c.real,
        "Im c_n": c.imag,
        "|c_n|^2": np.abs(c) ** 2,
        "c_phase": np.angle(c),
    }
    if config.state.kind != "file":
        oscillator = np.zeros(len(state.basis))
        reference = np.abs(coherent_coefficients(alpha, len(state.basis) - 1)) ** 2
        oscillator[: reference.shape[0]] = reference
        columns["oscillator_abs2"] = oscillator
    out.csv("coefficients.csv", columns)
    gamma_bar = average_rate(state.basis, c)
    summary = {
        "label": state.label,
        "captured_weight": state.captured_weight,
        "dominant_level": dominant_level(c),
        "truncation_mass": coherent_truncation_mass(alpha, len(state.basis) - 1),
        "average_rate": gamma_bar,
        "per_cycle_leak": per_cycle_leak(gamma_bar, session.spec.omega),
    }
    if config.spectral.basis == "cap":
        summary["condition"] = session.overlap_matrix.condition
    out.json("decompose.json", summary)
    return summary


def _sample_times(cfg: EvolutionConfig) -> np.ndarray:
    return np.arange(cfg.steps // cfg.record_stride + 1) * cfg.dt * cfg.record_stride


def stage_current(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    state = session.initial_state()
    series = session.formula_series(state, _sample_times(session.evolution_config()))
    survival = survival_from_current(series, p0=session.initial_probability(state))
    out.csv(
        "current.csv",
        {"t": series.times, "j_formula": series.j, "P_formula": survival, "in_window": series.in_window()},
    )
    gamma_bar = average_rate(state.basis, state.coefficients)
    summary = {
        "basis": session.config.spectral.basis,
        "label": state.label,
        "average_rate": gamma_bar,
        "per_cycle_leak": per_cycle_leak(gamma_bar, session.spec.omega),
        "window": _window(series.window),
    }
    out.json("current.json", summary)
    return summary


def stage_saddle(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    spec = session.spec
    table = session.table
    alpha = session.config.state.complex_alpha
    result = solve_saddle(alpha, spec, table, exact_g=session.config.wkb.exact_g)
    times = result.t_offset + np.linspace(-0.5, 0.5, SADDLE_SAMPLES) * spec.period
    full: list[float] = []
    status: list[str] = []
    for t in times:
        try:
            full.append(full_saddle_current(alpha, spec, table, float(t), start=result))
            status.append("ok")
        except ContinuationOutOfRange:
            full.append(math.nan)
            status.append("out_of_range")
        except NoConvergence:
            full.append(math.nan)
            status.append("no_convergence")
    solved = status.count("ok")
    if solved < len(status):
        logger.warning("full saddle skipped %d of %d samples", len(status) - solved, len(status))
    out.csv("saddle_scan.csv", {"t": times, "j_burst": burst_current(result, times), "j_full": full, "status": status})
    summary = result.summary()
    out.json("saddle.json", summary)
    return summary


def stage_evolve(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    config = session.config
    cfg = session.evolution_config()
    psi0, _ = session.initial_wavefunction(config.state.kind, config.state.complex_alpha)
    record = session.evolve(psi0, cfg)
    out.csv("evolution.csv", {"t": record.times, "P": record.P, "j": record.j, "norm": record.norm})
    if record.snapshots:
        columns: dict[str, Any] = {"x": session.grid.x}
        for index, (_, psi) in enumerate(record.snapshots):
            columns[f"abs2_{index}"] = np.abs(psi) ** 2
        out.csv("snapshots.csv", columns)
    summary = {
        "boundary": cfg.boundary,
        "dt": cfg.dt,
        "steps": cfg.steps,
        "final_norm": float(record.norm[-1]),
        "snapshot_times": [t for t, _ in record.snapshots],
    }
    out.json("evolve.json", summary)
    return summary


def _series_from_csv(path: Path) -> CurrentSeries:
    try:
        columns = read_csv_columns(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"compare input {path}: {exc}") from exc
    if "t" not in columns:
        raise ConfigError(f"compare input {path} has no t column")
    for name in CURRENT_COLUMNS:
        if name in columns:
            provenance = {"j_formula": "formula", "j_burst": "saddle"}.get(name, "evolution")
            return CurrentSeries(times=columns["t"], j=columns[name], provenance=provenance, metadata={"source": str(path)})
    raise ConfigError(f"compare input {path} has none of the columns {', '.join(CURRENT_COLUMNS)}")


def stage_compare(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    if (inputs.compare_a is None) != (inputs.compare_b is None):
        raise ConfigError("compare needs both --a and --b, or neither")
    if inputs.compare_a is not None and inputs.compare_b is not None:
        a = _series_from_csv(inputs.compare_a)
        b = _series_from_csv(inputs.compare_b)
        window = None
    else:
        cfg = session.evolution_config()
        state = session.initial_state()
        b = session.evolve(state.psi0, cfg).current_series(boundary=cfg.boundary)
        a = session.formula_series(state, b.times)
        window = a.window
        if cfg.boundary == HARD_WALL:
            e_char = characteristic_energy(state.basis, state.coefficients)
            window = (window[0], min(window[1], comparison_cutoff(session.spec, session.grid, e_char)))
    report = compare(a, b, window)
    other = np.interp(a.times, b.times, b.j)
    out.csv("compare.csv", {"t": a.times, "j_a": a.j, "j_b": other, "residual": a.j - other})
    summary = report.to_dict()
    out.json("compare.json", summary)
    return summary


def _evolve_all(session: Session, jobs: dict[str, tuple[np.ndarray, EvolutionConfig]]) -> dict[str, EvolutionRecord]:
    records: dict[str, EvolutionRecord] = {}
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        futures = {pool.submit(session.evolve, psi0, cfg): name for name, (psi0, cfg) in jobs.items()}
        for future in as_completed(futures):
            name = futures[future]
            records[name] = future.result()
            logger.info("evolution %s finished", name)
    return records


def _first_burst_guess(t_offset: float, period: float) -> float:
    return t_offset + math.ceil(0.5 - t_offset / period) * period


def stage_reproduce(session: Session, out: RunArtifacts, inputs: RunInputs) -> dict[str, Any]:
    spec = session.spec
    grid = session.grid
    period = spec.period
    alpha = session.config.state.complex_alpha
    x = grid.x
    summary: dict[str, Any] = {}

    top = barrier_top(spec)
    out.csv("fig1.csv", {"x": x, "V_re": real_part(spec, x), "V_im": imag_part(spec, x)})
    summary["potential"] = {
        "barrier_top": top,
        "turning_points": [asdict(turning_points(spec, spec.harmonic_energy(n))) for n in range(session.wkb_level_count())],
    }

    states = session.resonances
    columns: dict[str, Any] = {"x": x, "V_re": real_part(spec, x)}
    for level in states[:STATE_PLOT_LEVELS]:
        columns[f"psi{level.n}_abs2"] = np.abs(level.psi) ** 2
    out.csv("fig2.csv", columns)
    limit = TABLE_SPAN[1] * top
    summary["resonances"] = [
        {
            "n": level.n,
            "E": level.E,
            "Gamma": level.Gamma,
            "width_source": level.width_source,
            "wkb_ratio": wkb_width(spec, level.n, session.table) / level.Gamma
            if spec.harmonic_energy(level.n) < limit
            else None,
        }
        for level in states
    ]
    summary["g_factors"] = {str(n): g_factor(n) for n in (0, 1, 2, 100)}

    coherent = session.initial_state("cap", "coherent", alpha)
    scrambled = session.initial_state("cap", "random_phase", alpha)
    high = session.initial_state("cap", "coherent", HIGH_AMPLITUDE)
    high_wkb = session.initial_state("wkb", "coherent", HIGH_AMPLITUDE)
    summary["coherent"] = {
        "c5_abs2": float(np.abs(coherent_coefficients(alpha, 5)[5]) ** 2),
        "high_amplitude_dominant_level": dominant_level(coherent_coefficients(HIGH_AMPLITUDE, 30)),
        "E9_over_V_b": spec.harmonic_energy(9) / spec.V_b,
    }

    cfg = session.evolution_config(CAP)
    e_char = characteristic_energy(coherent.basis, coherent.coefficients)
    t_refl = reflection_time(spec, grid, e_char)
    long_cfg = replace(cfg, T=max(cfg.T, REFLECTION_MARGIN * t_refl))
    records = _evolve_all(
        session,
        {
            "coherent_cap": (coherent.psi0, long_cfg),
            "coherent_hard_wall": (coherent.psi0, replace(long_cfg, boundary=HARD_WALL)),
            "random_phase_cap": (scrambled.psi0, cfg),
            "high_amplitude_cap": (high.psi0, cfg),
        },
    )

    cap_record = records["coherent_cap"]
    wall_record = records["coherent_hard_wall"]
    cap_series = cap_record.current_series(boundary=CAP)
    wall_series = wall_record.current_series(boundary=HARD_WALL)
    cutoff = comparison_cutoff(spec, grid, e_char)
    out.csv(
        "fig3.csv",
        {
            "t": cap_record.times,
            "j_cap": cap_record.j,
            "j_hard_wall": wall_record.j,
            "P_cap": cap_record.P,
            "P_hard_wall": wall_record.P,
            "before_reflection": cap_record.times <= cutoff,
        },
    )
    after = None
    if cap_record.times[-1] > t_refl:
        after = compare(cap_series, wall_series, (t_refl, float(cap_record.times[-1])))
    summary["cap_vs_hard_wall"] = {
        "characteristic_energy": e_char,
        "reflection_time": t_refl,
        "cutoff": cutoff,
        "before": _report(compare(cap_series, wall_series, (0.0, cutoff))),
        "after": _report(after),
    }

    formula = session.formula_series(coherent, cap_record.times)
    out.csv(
        "fig4.csv",
        {
            "t": cap_record.times,
            "j_formula": formula.j,
            "j_evolution": cap_record.j,
            "P_formula": survival_from_current(formula, p0=session.initial_probability(coherent)),
            "P_evolution": cap_record.P,
            "in_window": formula.in_window(),
        },
    )
    summary["formula_vs_evolution"] = _report(compare(formula, cap_series, (period, 5.0 * period)))

    result = solve_saddle(alpha, spec, session.table, exact_g=session.config.wkb.exact_g)
    guess = _first_burst_guess(result.t_offset, period)
    centres = burst_centres(cap_series, guess, period, 4)
    fit = fit_gaussian_burst(cap_series, centres[0], min(3.0 * result.dt_width, 0.5 * period))
    delay = centres[0] - guess
    near = np.abs(cap_record.times - centres[0]) <= 0.5 * period
    burst_times = cap_record.times[near]
    out.csv(
        "fig5.csv",
        {
            "t": burst_times,
            "j_evolution": cap_record.j[near],
            "j_saddle": burst_current(result, burst_times - centres[0] + result.t_offset),
            "j_fit": fit.peak * np.exp(-(((burst_times - fit.centre) / fit.width) ** 2)),
        },
    )
    leaks = cycle_integrals(cap_series, centres[1:4], period)
    summary["saddle"] = {
        "result": result.summary(),
        "fit": asdict(fit),
        "delay": delay,
        "peak_error": fit.peak / result.j_peak - 1.0,
        "width_error": fit.width / result.dt_width - 1.0,
        "cycle_leaks": leaks,
        "cycle_leak_errors": [leak / result.dP - 1.0 for leak in leaks],
    }

    random_record = records["random_phase_cap"]
    random_series = random_record.current_series(boundary=CAP)
    magnitudes = np.abs(scrambled.coefficients)
    gamma_bar = average_rate(scrambled.basis, scrambled.coefficients) / scrambled.captured_weight
    p0 = random_record.P[0]
    reference = p0 * -np.expm1(-gamma_bar * random_record.times)
    leak_random = p0 - random_record.P
    leak_coherent = np.interp(random_record.times, cap_record.times, cap_record.P[0] - cap_record.P)
    ensemble = ensemble_current(
        scrambled.basis, magnitudes, random_record.times, session.config.state.draws, session.config.state.seed, spec.hbar
    )
    out.csv(
        "fig6.csv",
        {
            "t": random_record.times,
            "leak_random": leak_random,
            "leak_average_rate": reference,
            "leak_coherent": leak_coherent,
            "j_random": random_record.j,
            "j_ensemble": ensemble.j,
        },
    )
    late = random_record.times >= period
    deviation = np.abs(leak_random[late] / reference[late] - 1.0)
    cycles = int(random_record.times[-1] // period)
    summary["random_phase"] = {
        "average_rate": gamma_bar,
        "max_relative_deviation": float(np.max(deviation)) if deviation.size else None,
        "coherent_steps": count_resolved_steps(cap_series, guess, period, cycles),
        "random_steps": count_resolved_steps(random_series, guess, period, cycles),
    }

    high_record = records["high_amplitude_cap"]
    high_series = high_record.current_series(boundary=CAP)
    high_formula = session.formula_series(high, high_record.times)
    high_wkb_formula = session.formula_series(high_wkb, high_record.times)
    out.csv(
        "fig7.csv",
        {
            "t": high_record.times,
            "j_evolution": high_record.j,
            "j_formula_cap": high_formula.j,
            "j_formula_wkb": high_wkb_formula.j,
        },
    )
    window = (period, 5.0 * period)
    summary["high_amplitude"] = {
        "alpha": HIGH_AMPLITUDE,
        "cap": _report(compare(high_formula, high_series, window)),
        "wkb": _report(compare(high_wkb_formula, high_series, window)),
    }

    out.json("summary.json", summary)
    return summary


STAGES: dict[str, Callable[[Session, RunArtifacts, RunInputs], dict[str, Any]]] = {
    "resonances": stage_resonances,
    "wkb": stage_wkb,
    "decompose": stage_decompose,
    "current": stage_current,
    "saddle": stage_saddle,
    "evolve": stage_evolve,
    "compare": stage_compare,
    "reproduce-paper": stage_reproduce,
}


def run(config: RunConfig, subcommand: str, output_root: Path, inputs: RunInputs | None = None) -> Path:
    """Run one subcommand and write its artifacts plus manifest; returns the artifact directory."""
    stage = STAGES.get(subcommand)
    if stage is None:
        raise ValueError(f"unknown subcommand: {subcommand}")
    directory = output_root / config.experiment / subcommand
    artifacts = RunArtifacts(directory, subcommand, config.experiment, config.to_dict())
    logger.info("running %s for experiment %s into %s", subcommand, config.experiment, directory)
    stage(Session(config), artifacts, inputs or RunInputs())
    artifacts.finish()
    return directory
