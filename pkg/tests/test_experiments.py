import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from app.artifacts import file_digest, read_csv_columns
from app.config import ConfigError, RunConfig, load_config
from app.decomposition import coherent_coefficients
from app.experiments import RunInputs, Session, run


def _config(tmp_path: Path, data: dict, **overrides: object) -> RunConfig:
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return load_config(tmp_path, path=path, overrides=overrides or None)


def _manifest(directory: Path) -> dict:
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


def _header(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()[0].split(",")


def test_resonances_stage_writes_table_and_manifest(tmp_path: Path, small_config_data: dict) -> None:
    directory = run(_config(tmp_path, small_config_data), "resonances", tmp_path / "runs")
    assert directory == tmp_path / "runs" / "small" / "resonances"
    columns = read_csv_columns(directory / "resonances.csv")
    assert columns["n"].tolist() == [0.0, 1.0, 2.0]
    assert np.all(np.diff(columns["E"]) > 0)
    assert np.all(columns["Gamma"] > 0)
    assert {"n", "E", "Gamma", "A", "k_abs", "delta", "localization_fraction"} <= set(_header(directory / "resonances.csv"))
    assert np.all(columns["localization_fraction"] >= 0.5)
    manifest = _manifest(directory)
    assert manifest["subcommand"] == "resonances"
    assert manifest["artifacts"]["resonances.csv"] == file_digest(directory / "resonances.csv")


def test_wkb_stage_lists_levels_below_the_barrier(tmp_path: Path, small_config_data: dict) -> None:
    directory = run(_config(tmp_path, small_config_data), "wkb", tmp_path / "runs")
    columns = read_csv_columns(directory / "wkb.csv")
    assert columns["n"].tolist() == [0.0, 1.0, 2.0]
    assert _header(directory / "wkb.csv")[:8] == ["n", "E_n", "S_n", "t_n", "tau_n", "g_n", "Gamma_n_wkb", "Gamma_n_cap"]
    assert np.all(np.diff(columns["S_n"]) < 0)
    assert np.all(columns["Gamma_n_wkb"] > 0)
    ratio = columns["Gamma_n_wkb"][:2] / columns["Gamma_n_cap"][:2]
    assert np.all((ratio > 0.5) & (ratio < 2.0))
    assert read_csv_columns(directory / "wkb_table.csv")["E"].shape == (40,)


def test_decompose_and_current_stages(tmp_path: Path, small_config_data: dict) -> None:
    config = _config(tmp_path, small_config_data)
    decompose = run(config, "decompose", tmp_path / "runs")
    summary = json.loads((decompose / "decompose.json").read_text(encoding="utf-8"))
    assert summary["label"] == "random_phase/cap"
    assert 0.9 < summary["captured_weight"] <= 1.0 + 1e-6
    assert summary["per_cycle_leak"] > 0
    assert _header(decompose / "coefficients.csv")[3:6] == ["Re c_n", "Im c_n", "|c_n|^2"]
    coefficients = read_csv_columns(decompose / "coefficients.csv")
    assert np.allclose(coefficients["Re c_n"] ** 2 + coefficients["Im c_n"] ** 2, coefficients["|c_n|^2"])
    assert float(np.sum(coefficients["|c_n|^2"])) == pytest.approx(summary["captured_weight"], rel=1e-6)

    current = run(config, "current", tmp_path / "runs")
    columns = read_csv_columns(current / "current.csv")
    assert columns["t"][0] == 0.0
    assert columns["P_formula"][0] == pytest.approx(1.0, abs=0.05)
    assert columns["P_formula"][-1] < columns["P_formula"][0]


def test_wkb_basis_pads_oscillator_coefficients(tmp_path: Path, small_config_data: dict) -> None:
    state = Session(_config(tmp_path, small_config_data, **{"spectral.basis": "wkb"})).initial_state()
    assert state.label == "random_phase/wkb"
    assert [level.width_source for level in state.basis] == ["wkb"] * len(state.basis)
    expected = np.abs(coherent_coefficients(0.8, 2))
    assert np.allclose(np.abs(state.coefficients[:3]), expected)
    assert state.captured_weight == pytest.approx(float(np.sum(expected**2)))


def test_evolve_is_byte_reproducible(tmp_path: Path, small_config_data: dict) -> None:
    config = _config(tmp_path, small_config_data, **{"evolution.snapshot_stride": 1000})
    first = run(config, "evolve", tmp_path / "a")
    second = run(config, "evolve", tmp_path / "b")
    for name in ("evolution.csv", "snapshots.csv", "evolve.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert _manifest(first)["config_hash"] == _manifest(second)["config_hash"]
    columns = read_csv_columns(first / "evolution.csv")
    assert columns["norm"][-1] < columns["norm"][0]


def test_compare_stage_formula_against_evolution(tmp_path: Path, small_config_data: dict) -> None:
    directory = run(_config(tmp_path, small_config_data), "compare", tmp_path / "runs")
    report = json.loads((directory / "compare.json").read_text(encoding="utf-8"))
    assert report["samples"] > 0
    assert report["normalized_max"] < 0.2


def test_compare_stage_reads_two_csv_files(tmp_path: Path, small_config_data: dict) -> None:
    times = np.linspace(0.0, 1.0, 11)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("t,j_formula\n" + "".join(f"{t},{t}\n" for t in times), encoding="utf-8")
    b.write_text("t,j\n" + "".join(f"{t},{t + 0.5}\n" for t in times), encoding="utf-8")
    config = _config(tmp_path, small_config_data)
    directory = run(config, "compare", tmp_path / "runs", RunInputs(compare_a=a, compare_b=b))
    report = json.loads((directory / "compare.json").read_text(encoding="utf-8"))
    assert report["max_abs"] == pytest.approx(0.5)
    with pytest.raises(ConfigError, match="both --a and --b"):
        run(config, "compare", tmp_path / "runs", RunInputs(compare_a=a))


def test_missing_state_file_is_a_config_error(tmp_path: Path, small_config_data: dict) -> None:
    config = _config(tmp_path, small_config_data, **{"state.kind": "file", "state.file": str(tmp_path / "none.csv")})
    with pytest.raises(ConfigError, match="state\\.file"):
        run(config, "decompose", tmp_path / "runs")


def test_unknown_subcommand_is_rejected(tmp_path: Path, small_config_data: dict) -> None:
    with pytest.raises(ValueError, match="unknown subcommand"):
        run(_config(tmp_path, small_config_data), "plot", tmp_path / "runs")
