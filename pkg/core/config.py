import json
import os
from dataclasses import dataclass, field, asdict, replace


class ConfigManager:
    """配置管理器：统一管理工作目录（日志、报告、配置文件）"""

    DEFAULT_MANAGER_FOLDER = "SphereControlLab"
    ENV_VAR = "SCL_HOME"

    def __init__(self):
        self.manager_folder_path = self._get_or_create_manager_folder()
        self._ensure_directories()
        self.last_run_version = self._load_last_run_version()

    def _get_or_create_manager_folder(self):
        """获取或创建工作目录，环境变量优先"""
        env_path = os.environ.get(self.ENV_VAR, "").strip()
        if env_path:
            return os.path.normpath(env_path)

        default_path = os.path.join(os.path.expanduser("~"), self.DEFAULT_MANAGER_FOLDER)
        if not os.path.exists(default_path):
            try:
                os.makedirs(default_path)
            except Exception:
                # 创建失败时使用当前目录
                default_path = os.path.join(os.getcwd(), self.DEFAULT_MANAGER_FOLDER)
        return os.path.normpath(default_path)

    def _ensure_directories(self):
        for dir_path in (self.get_logs_dir(), self.get_reports_dir(), self.get_config_dir()):
            if not os.path.exists(dir_path):
                os.makedirs(dir_path, exist_ok=True)

    def _load_last_run_version(self):
        config_file = self.get_config_file()
        if os.path.exists(config_file):
            try:
                with open(config_file, 'r', encoding='utf-8') as f:
                    return json.load(f).get("last_run_version", "0.0.0")
            except (OSError, ValueError):
                pass
        return "0.0.0"

    def get_last_run_version(self):
        return self.last_run_version

    def set_last_run_version(self, version):
        self.last_run_version = version
        self._save_config()

    def get_manager_folder_path(self):
        return self.manager_folder_path

    def get_logs_dir(self):
        return os.path.join(self.manager_folder_path, "logs")

    def get_reports_dir(self):
        return os.path.join(self.manager_folder_path, "reports")

    def get_config_dir(self):
        return os.path.join(self.manager_folder_path, "config")

    def get_config_file(self):
        return os.path.join(self.get_config_dir(), "config.json")

    def get_history_file(self):
        return os.path.join(self.get_config_dir(), "runs.json")

    def _save_config(self):
        data = {
            "manager_folder_path": self.manager_folder_path,
            "last_run_version": self.last_run_version,
        }
        with open(self.get_config_file(), 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=4, ensure_ascii=False)


CONFIG_KEYS = (
    "experiment", "n", "horizon", "steps", "paths", "seed",
    "params", "tolerance_multiplier", "workers",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run. Keys match the JSON config file exactly."""

    experiment: str
    n: int = 2
    horizon: float = 1.0
    steps: int = 1000
    paths: int = 100_000
    seed: int = 0
    params: dict = field(default_factory=dict)
    tolerance_multiplier: float = 3.0
    workers: int = 1

    @classmethod
    def from_dict(cls, data, defaults=None):
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"Unknown config keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ValueError("Config is missing 'experiment'")
        merged = dict(defaults or {})
        params = dict(merged.pop("params", {}) or {})
        params.update(data.get("params") or {})
        merged.update({k: v for k, v in data.items() if k != "params"})
        merged["params"] = params
        return cls(**merged)

    @classmethod
    def load(cls, path, defaults=None):
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except ValueError as e:
                raise ValueError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ValueError(f"Config file {path} must contain a JSON object")
        return cls.from_dict(data, defaults)

    def with_overrides(self, **overrides):
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self

    def validate(self):
        if not isinstance(self.experiment, str) or not self.experiment:
            raise ValueError("experiment must be a non-empty string")
        _check_int("n", self.n, minimum=1)
        _check_int("steps", self.steps, minimum=1)
        _check_int("paths", self.paths, minimum=1)
        _check_int("workers", self.workers, minimum=1)
        _check_int("seed", self.seed, minimum=0)
        if self.seed >= 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if not isinstance(self.horizon, (int, float)) or not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if not isinstance(self.tolerance_multiplier, (int, float)) or not self.tolerance_multiplier > 0:
            raise ValueError("tolerance_multiplier must be positive")
        if not isinstance(self.params, dict):
            raise ValueError("params must be a JSON object")
        return self

    def to_dict(self):
        data = asdict(self)
        data["horizon"] = float(self.horizon)
        data["tolerance_multiplier"] = float(self.tolerance_multiplier)
        return data


def _check_int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")