from pathlib import Path

import pytest
import yaml

import app.main as main_module
from app.errors import SimulationError
from app.main import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, build_parser, collect_overrides, main


def test_collect_overrides_merges_flags_over_set() -> None:
    args = build_parser().parse_args(
        ["evolve", "--set", "state.alpha=1.6", "--set", "evolution.dt=1e-3", "--alpha", "2.0", "--bc", "hardwall"]
    )
    overrides = collect_overrides(args)
    assert overrides == {"state.alpha": 2.0, "evolution.dt": 0.001, "evolution.boundary": "hardwall"}


def test_compare_accepts_input_files() -> None:
    args = build_parser().parse_args(["compare", "--a", "one.csv", "--b", "two.csv"])
    assert args.a == Path("one.csv") and args.b == Path("two.csv")
    with pytest.raises(SystemExit):
        build_parser().parse_args(["evolve", "--a", "one.csv"])


def test_main_maps_config_errors_to_exit_2(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["wkb", "--set", "potential.omega=-1", "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "omega must be > 0" in capsys.readouterr().err
    assert main(["wkb", "--set", "broken", "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_main_maps_numerical_failures_to_exit_3(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def failing_run(*args: object, **kwargs: object) -> Path:
        raise SimulationError("eigensolver failed")

    monkeypatch.setattr(main_module, "run", failing_run)
    assert main(["resonances", "--output-dir", str(tmp_path)]) == EXIT_NUMERICAL


def test_main_prints_artifact_directory(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str], small_config_data: dict
) -> None:
    config_path = tmp_path / "small.yaml"
    config_path.write_text(yaml.safe_dump(small_config_data), encoding="utf-8")
    seen: dict[str, object] = {}

    def fake_run(config, subcommand, output_root, inputs=None) -> Path:
        seen.update(config=config, subcommand=subcommand, output_root=output_root)
        return output_root / config.experiment / subcommand

    monkeypatch.setattr(main_module, "run", fake_run)
    code = main(["decompose", "--config", str(config_path), "--output-dir", str(tmp_path / "runs"), "--seed", "11"])
    assert code == EXIT_OK
    assert seen["subcommand"] == "decompose"
    assert seen["config"].state.seed == 11
    assert capsys.readouterr().out.strip() == str(tmp_path / "runs" / "small" / "decompose")
