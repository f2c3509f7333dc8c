import math

import numpy as np

from src.config import MANIFEST_SCHEMA, RunConfig
from src.report import read_csv, read_json, to_jsonable, write_csv, write_json, write_manifest
from src.spectra import ACN_SENTINEL


def test_csv_header_is_union_of_keys(tmp_path):
    """测试 CSV 表头为所有行键的并集，None 写为空"""
    path = write_csv(tmp_path / "rows.csv", [{"a": 1, "b": 0.1}, {"a": 2, "c": None}])
    assert path.read_text(encoding="utf-8").splitlines()[0] == "a,b,c"
    rows = read_csv(path)
    assert rows[0] == {"a": 1, "b": 0.1, "c": None}
    assert rows[1]["b"] is None


def test_csv_floats_are_exact(tmp_path):
    """测试浮点数按最短往返表示写出"""
    value = 1.0 / 3.0
    rows = read_csv(write_csv(tmp_path / "x.csv", [{"v": value}]))
    assert rows[0]["v"] == value


def test_json_schema_and_sentinel(tmp_path):
    """测试 JSON 报告带 schema 字段，无穷大写作 Infinity"""
    path = write_json(tmp_path / "r.json", {"acn": ACN_SENTINEL, "sigma": np.array([2.0, 1.0])})
    assert "Infinity" in path.read_text(encoding="utf-8")
    payload = read_json(path)
    assert payload["schema"] == "v1"
    assert math.isinf(payload["acn"])
    assert payload["sigma"] == [2.0, 1.0]


def test_to_jsonable_numpy_scalars():
    """测试 numpy 标量转换"""
    out = to_jsonable({"n": np.int64(3), "ok": np.bool_(True), "x": np.float64(0.5)})
    assert out == {"n": 3, "ok": True, "x": 0.5}
    assert type(out["n"]) is int and type(out["ok"]) is bool


def test_manifest_echoes_config(tmp_path):
    """测试运行清单回显配置与哈希"""
    config = RunConfig()
    path = write_manifest(tmp_path, "serr", config, [tmp_path / "serr.csv"], 1.5)
    manifest = read_json(path)
    assert manifest["schema"] == MANIFEST_SCHEMA
    assert manifest["config_sha256"] == config.digest()
    assert manifest["config"] == config.to_dict()
    assert manifest["artifacts"] == ["serr.csv"]
    assert "numpy" in manifest["versions"]


def test_csv_booleans_round_trip(tmp_path):
    """测试布尔值与 numpy 布尔值读回后仍为 bool"""
    rows = read_csv(write_csv(tmp_path / "b.csv", [{"holds": True, "agrees": np.bool_(False), "name": "True1"}]))
    assert rows[0]["holds"] is True
    assert rows[0]["agrees"] is False
    assert rows[0]["name"] == "True1"
