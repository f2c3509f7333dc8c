import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from loguru import logger

from .errors import ConfigError
from .utils import parse_number_list

# 每个配置项: (类型, 默认值)
SCHEMA: Dict[str, Dict[str, Tuple[str, Any]]] = {
    "net": {
        "widths": ("ints", [2, 16, 16, 3]),
        "activation": ("str", "tanh"),
        "gain": ("float", 1.0),
        "init": ("str", "gaussian"),
        "bias": ("bool", True),
        "loss": ("str", "cross_entropy_with_softmax"),
        "model": ("str", ""),
    },
    "train": {
        "epochs": ("int", 30),
        "batch_size": ("int", 32),
        "learning_rate": ("float", 0.05),
        "spectral_penalty_weight": ("float", 0.0),
        "penalty_kind": ("str", "none"),
        "stable_penalty_kind": ("str", "top_sv"),
        "stable_penalty_weight": ("float", 0.05),
        "track_curvature": ("bool", False),
        "probe_size": ("int", 64),
    },
    "experiment": {
        "seed": ("int", 0),
        "threads": ("int", 1),
        "data": ("str", "blobs"),
        "n": ("int", 300),
        "d": ("int", 2),
        "classes": ("int", 3),
        "noise": ("float", 0.1),
        "data_path": ("str", ""),
        "idx_images": ("str", ""),
        "idx_labels": ("str", ""),
        "limit": ("int", 2048),
        "samples": ("int", 32),
        "epsilon": ("float", 0.1),
        "epsilons": ("floats", [0.001, 0.01, 0.1]),
        "n_mc": ("int", 10000),
        "law": ("str", "gaussian"),
        "pairs": ("int", 1000),
        "grid": ("int", 17),
        "gains": ("floats", [0.5, 1.0, 2.0, 4.0]),
        "depth": ("int", 20),
        "width": ("int", 32),
        "n_inits": ("int", 50),
        "sweep_widths": ("ints", [8, 32, 128]),
        "etas": ("floats", [0.01, 0.005]),
        "flow_time": ("float", 1.0),
        "times": ("int", 32),
        "hessian_cap": ("int", 5000),
        "timeout": ("float", 0.0),
    },
    "output": {
        "dir": ("str", "results"),
        "csv": ("bool", True),
    },
}

CHOICES = {
    ("net", "activation"): ("identity", "relu", "tanh"),
    ("net", "init"): ("gaussian", "orthogonal"),
    ("net", "loss"): ("squared_error", "cross_entropy_with_softmax"),
    ("train", "penalty_kind"): ("none", "top_sv", "entropy"),
    ("train", "stable_penalty_kind"): ("none", "top_sv", "entropy"),
    ("experiment", "data"): ("blobs", "two_moons", "linear_teacher", "idx", "npz"),
    ("experiment", "law"): ("gaussian", "sphere"),
}

MANIFEST_SCHEMA = "manifest/v1"


def defaults() -> Dict[str, Dict[str, Any]]:
    return {section: {key: value for key, (_, value) in keys.items()} for section, keys in SCHEMA.items()}


@dataclass
class RunConfig:
    """解析并验证后的运行配置（net / train / experiment / output 四个分节）"""
    values: Dict[str, Dict[str, Any]] = field(default_factory=defaults)
    source: Optional[str] = None
    subcommand: Optional[str] = None

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["experiment"]["seed"])

    def override(self, section: str, key: str, value: Any) -> None:
        if key not in SCHEMA.get(section, {}):
            raise ConfigError([f"未知配置项 [{section}] {key}"])
        self.values[section][key] = value

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return json.loads(json.dumps(self.values))

    def digest(self) -> str:
        """规范化 JSON（键排序、紧凑分隔符）的 sha256"""
        canonical = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _convert(kind: str, value: Any) -> Any:
    if kind == "int":
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError(f"需要整数: {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool):
            raise ValueError(f"需要数值: {value!r}")
        return float(value)
    if kind == "bool":
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "yes", "on", "1"):
            return True
        if text in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"需要布尔值: {value!r}")
    if kind == "ints":
        return parse_number_list(value, int)
    if kind == "floats":
        return parse_number_list(value, float)
    return str(value)


def _ini_line_numbers(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """记录 INI 文本中每个分节和配置项所在行号"""
    lines: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        match = re.match(r"^\[([^\]]+)\]$", stripped)
        if match:
            section = match.group(1).strip()
            lines[(section, None)] = number
            continue
        match = re.match(r"^([^=:]+?)\s*[=:]", stripped)
        if match and section is not None:
            lines[(section, match.group(1).strip().lower())] = number
    return lines


class ConfigValidator:
    """配置验证器类，负责检查配置项是否合法"""

    @staticmethod
    def _where(section: str, key: Optional[str], lines: Optional[Dict]) -> str:
        if lines and (section, key) in lines:
            return f"第{lines[(section, key)]}行: "
        return f"{section}.{key}: " if key else f"{section}: "

    @staticmethod
    async def validate_structure(raw: Dict[str, Any], lines: Optional[Dict] = None) -> List[str]:
        """拒绝未知分节与未知配置项"""
        errors = []
        for section, keys in raw.items():
            if section not in SCHEMA:
                errors.append(f"{ConfigValidator._where(section, None, lines)}未知分节 [{section}]")
                continue
            if not isinstance(keys, dict):
                errors.append(f"{section} 必须是一个对象")
                continue
            for key in keys:
                if key not in SCHEMA[section]:
                    errors.append(f"{ConfigValidator._where(section, key, lines)}未知配置项 [{section}] {key}")
        return errors

    @staticmethod
    async def coerce(raw: Dict[str, Any], lines: Optional[Dict] = None) -> Tuple[Dict[str, Dict[str, Any]], List[str]]:
        """在默认值上覆盖原始配置，并转换为声明的类型"""
        values = defaults()
        errors = []
        for section, keys in raw.items():
            if section not in SCHEMA or not isinstance(keys, dict):
                continue
            for key, value in keys.items():
                if key not in SCHEMA[section]:
                    continue
                kind = SCHEMA[section][key][0]
                try:
                    values[section][key] = _convert(kind, value)
                except (TypeError, ValueError) as e:
                    errors.append(f"{ConfigValidator._where(section, key, lines)}{section}.{key} 类型错误: {e}")
        return values, errors

    @staticmethod
    async def validate_choices(config: Dict[str, Dict[str, Any]]) -> List[str]:
        errors = []
        for (section, key), allowed in CHOICES.items():
            if config[section][key] not in allowed:
                errors.append(f"{section}.{key} 必须是 {', '.join(allowed)} 之一，实际 {config[section][key]!r}")
        return errors

    @staticmethod
    async def validate_net_settings(config: Dict[str, Dict[str, Any]]) -> List[str]:
        """验证网络设置"""
        errors = []
        net = config["net"]
        if len(net["widths"]) < 2:
            errors.append("net.widths 至少包含输入与输出两个维度")
        elif any(w < 1 for w in net["widths"]):
            errors.append("net.widths 中的宽度必须是正整数")
        if net["gain"] <= 0:
            errors.append("net.gain 必须为正")
        if net["model"] and not Path(net["model"]).is_file():
            errors.append(f"net.model 文件不存在: {net['model']}")
        return errors

    @staticmethod
    async def validate_train_settings(config: Dict[str, Dict[str, Any]]) -> List[str]:
        """验证训练设置"""
        errors = []
        train = config["train"]
        if train["epochs"] < 0:
            errors.append("train.epochs 必须是非负整数")
        if train["batch_size"] < 1:
            errors.append("train.batch_size 必须是正整数")
        if train["probe_size"] < 1:
            errors.append("train.probe_size 必须是正整数")
        if train["learning_rate"] <= 0:
            errors.append("train.learning_rate 必须为正")
        for key in ("spectral_penalty_weight", "stable_penalty_weight"):
            if train[key] < 0:
                errors.append(f"train.{key} 不能为负")
        return errors

    @staticmethod
    async def validate_experiment_settings(config: Dict[str, Dict[str, Any]]) -> List[str]:
        """验证实验设置"""
        errors = []
        exp = config["experiment"]
        if exp["seed"] < 0 or exp["seed"] >= 2 ** 64:
            errors.append("experiment.seed 必须是 0 到 2^64−1 之间的整数")
        for key in ("threads", "n", "d", "samples", "n_mc", "n_inits", "depth", "width", "times"):
            if exp[key] < 1:
                errors.append(f"experiment.{key} 必须是正整数")
        if exp["grid"] < 2:
            errors.append("experiment.grid 至少为 2")
        if exp["pairs"] < 0 or exp["limit"] < 0 or exp["hessian_cap"] < 0:
            errors.append("experiment.pairs / limit / hessian_cap 不能为负")
        if exp["epsilon"] <= 0 or any(e <= 0 for e in exp["epsilons"]):
            errors.append("experiment.epsilon 与 epsilons 必须为正")
        if any(g <= 0 for g in exp["gains"]):
            errors.append("experiment.gains 必须为正")
        if any(w < 1 for w in exp["sweep_widths"]):
            errors.append("experiment.sweep_widths 必须是正整数")
        if any(e <= 0 for e in exp["etas"]):
            errors.append("experiment.etas 必须为正")
        if exp["flow_time"] < 0 or exp["timeout"] < 0:
            errors.append("experiment.flow_time 与 timeout 不能为负")
        if exp["data"] == "idx" and not (exp["idx_images"] and exp["idx_labels"]):
            errors.append("experiment.data = idx 时必须设置 idx_images 与 idx_labels")
        if exp["data"] == "npz" and not exp["data_path"]:
            errors.append("experiment.data = npz 时必须设置 data_path")
        return errors

    @staticmethod
    async def validate_output_settings(config: Dict[str, Dict[str, Any]]) -> List[str]:
        """验证输出设置"""
        errors = []
        if not config["output"]["dir"]:
            errors.append("output.dir 不能为空")
        return errors

    @classmethod
    async def validate_config(cls, raw: Dict[str, Any], lines: Optional[Dict] = None) -> Dict[str, Dict[str, Any]]:
        """验证配置文件参数的有效性，返回带默认值的完整配置"""
        all_errors = await cls.validate_structure(raw, lines)
        config, errors = await cls.coerce(raw, lines)
        all_errors.extend(errors)
        if not all_errors:
            validation_tasks = [
                cls.validate_choices(config),
                cls.validate_net_settings(config),
                cls.validate_train_settings(config),
                cls.validate_experiment_settings(config),
                cls.validate_output_settings(config),
            ]
            for task in validation_tasks:
                all_errors.extend(await task)

        if all_errors:
            error_message = "\n".join(all_errors)
            logger.error(f"配置文件验证失败:\n{error_message}")
            raise ConfigError(all_errors)
        return config


class ConfigManager:
    """配置管理类，负责加载和验证配置"""

    @staticmethod
    def _read_ini(text: str) -> Dict[str, Dict[str, str]]:
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(text)
        return {section: dict(parser.items(section)) for section in parser.sections()}

    @staticmethod
    async def load_config(path: Union[str, Path, None] = None) -> RunConfig:
        """加载配置文件

        支持 INI（[section] / key = value）和 JSON；运行清单 manifest.json 也可以直接作为配置，
        此时复用清单中回显的配置与子命令。未指定路径时使用全部默认值。
        """
        if path is None:
            return RunConfig()
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            subcommand = None
            lines = None
            if path.suffix.lower() == ".json":
                raw = json.loads(text)
                if isinstance(raw, dict) and raw.get("schema") == MANIFEST_SCHEMA:
                    logger.info(f"从运行清单加载配置: {path}")
                    subcommand = raw.get("subcommand")
                    raw = raw.get("config", {})
            else:
                raw = ConfigManager._read_ini(text)
                lines = _ini_line_numbers(text)
            if not isinstance(raw, dict):
                raise ConfigError(["配置文件顶层必须是对象"])
            values = await ConfigValidator.validate_config(raw, lines)
            return RunConfig(values=values, source=str(path), subcommand=subcommand)
        except FileNotFoundError:
            logger.error(f"配置文件不存在: {path}")
            raise
        except json.JSONDecodeError as e:
            logger.error(f"配置文件JSON格式错误: {e}")
            raise
        except configparser.Error as e:
            logger.error(f"配置文件INI格式错误: {e}")
            raise ConfigError([str(e)]) from e
        except ConfigError:
            raise
        except Exception as e:
            logger.error(f"加载配置文件失败: {e}")
            raise
