"""报告输出：JSON（schema v1）、带表头的 CSV 以及运行清单"""
import csv
import json
import math
from dataclasses import asdict, is_dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import humanize
import numpy as np
from loguru import logger

from .config import MANIFEST_SCHEMA, RunConfig

SCHEMA_VERSION = "v1"
VERSIONED_PACKAGES = ("numpy", "scipy", "loguru", "tqdm", "humanize", "async_timeout")
BOOL_CELLS = {"True": True, "False": False}


def to_jsonable(obj: Any) -> Any:
    """把 numpy 标量/数组、dataclass 与带 to_dict 的对象转换为 JSON 可序列化的结构"""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _size(path: Path) -> str:
    return humanize.naturalsize(path.stat().st_size, binary=True)


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """写入 JSON 报告；浮点数使用最短往返表示，ACN 哨兵值写作 Infinity"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema": SCHEMA_VERSION, **to_jsonable(payload)}
    path.write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info(f"已写入 {path} ({_size(path)})")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Union[str, Path], rows: Iterable[Dict[str, Any]]) -> Path:
    """写入带表头的 CSV，列为所有行键的并集（按首次出现顺序）"""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
    logger.info(f"已写入 {path} ({len(rows)} 行, {_size(path)})")
    return path


def _parse_cell(text: str) -> Any:
    if text == "":
        return None
    if text in BOOL_CELLS:
        return BOOL_CELLS[text]
    try:
        number = float(text)
    except ValueError:
        return text
    if number.is_integer() and math.isfinite(number) and "." not in text and "e" not in text.lower():
        return int(text)
    return number


def read_csv(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(f)]


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name.replace("_", "-"))
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(out_dir: Union[str, Path], subcommand: str, config: RunConfig,
                   artifacts: List[Path], elapsed: Optional[float] = None) -> Path:
    """运行清单：回显完整配置、配置哈希、种子与依赖版本，可再次作为 --config 使用"""
    out_dir = Path(out_dir)
    payload = {
        "schema": MANIFEST_SCHEMA,
        "subcommand": subcommand,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "config": config.to_dict(),
        "versions": package_versions(),
        "artifacts": sorted(p.name for p in artifacts),
        "elapsed_seconds": elapsed,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info(f"已写入运行清单 {path}")
    return path
