import json
from pathlib import Path

import numpy as np
import pytest

from app.artifacts import (
    OUTPUT_ROOT_ENV,
    RunArtifacts,
    config_hash,
    file_digest,
    read_csv_columns,
    render_csv,
    render_json,
    resolve_output_root,
    write_atomic,
)


def test_output_root_precedence(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert resolve_output_root(None, "runs") == Path("runs")
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "/data/runs")
    assert resolve_output_root(None, "runs") == Path("/data/runs")
    assert resolve_output_root("out", "runs") == Path("out")


def test_render_csv_formats_cells() -> None:
    text = render_csv({"t": np.array([0.0, 0.1]), "n": [1, 2], "ok": [True, np.bool_(False)], "tag": ["a", "b"]})
    assert text == "t,n,ok,tag\n0,1,true,a\n0.1,2,false,b\n"
    assert render_csv({"x": [1.0 / 3.0]}).splitlines()[1] == "0.333333333333333"
    with pytest.raises(ValueError, match="differ in length"):
        render_csv({"a": [1, 2], "b": [1]})


def test_render_json_handles_numpy_and_complex() -> None:
    payload = json.loads(render_json({"b": np.float64(1.5), "a": np.arange(3), "z": complex(1.0, -2.0), "p": Path("x")}))
    assert payload == {"a": [0, 1, 2], "b": 1.5, "p": "x", "z": {"re": 1.0, "im": -2.0}}
    with pytest.raises(TypeError):
        render_json({"bad": object()})


def test_config_hash_ignores_key_order() -> None:
    assert config_hash({"a": 1, "b": {"c": 2}}) == config_hash({"b": {"c": 2}, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_write_atomic_replaces_without_leftovers(tmp_path: Path) -> None:
    target = tmp_path / "nested" / "out.csv"
    write_atomic(target, "old\n")
    write_atomic(target, "new\n")
    assert target.read_text(encoding="utf-8") == "new\n"
    assert [path.name for path in target.parent.iterdir()] == ["out.csv"]


def test_read_csv_columns_skips_text_columns(tmp_path: Path) -> None:
    path = tmp_path / "series.csv"
    path.write_text("t,j,status\n0,1.5,ok\n1,2.5,out_of_range\n", encoding="utf-8")
    columns = read_csv_columns(path)
    assert list(columns) == ["t", "j"]
    assert columns["j"].tolist() == [1.5, 2.5]
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ValueError, match="is empty"):
        read_csv_columns(empty)


def test_manifest_lists_artifact_hashes(tmp_path: Path) -> None:
    artifacts = RunArtifacts(tmp_path / "run", "wkb", "demo", {"experiment": "demo"})
    csv_path = artifacts.csv("wkb.csv", {"n": [0, 1], "E": [0.5, 1.5]})
    json_path = artifacts.json("wkb.json", {"levels": 2})
    manifest = json.loads(artifacts.finish().read_text(encoding="utf-8"))
    assert manifest["subcommand"] == "wkb"
    assert manifest["experiment"] == "demo"
    assert manifest["config_hash"] == config_hash({"experiment": "demo"})
    assert manifest["artifacts"] == {"wkb.csv": file_digest(csv_path), "wkb.json": file_digest(json_path)}
    assert manifest["wall_time_seconds"] >= 0
    assert "numpy" in manifest["versions"]
