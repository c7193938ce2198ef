"""Experiment configuration: flat ``key = value`` text files, strictly keyed.

Unknown keys are rejected by name; values are validated by typed getters.
``#`` starts a comment (whole line or trailing).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

# key -> parse kind (for documentation and early validation)
KNOWN_KEYS = {
    "arch": "str",
    "arch.classes": "int",
    "arch.input": "shape",          # CxHxW, e.g. 3x32x32
    "arch.channels": "int_list",    # toy-cnn conv widths
    "k": "k_spec",                  # "half" or comma-separated ints per lookup layer
    "mode": "str",                  # fixed_s | threshold
    "s_max": "int",
    "c": "float",
    "lambda_prime": "float",
    "learning_rate": "float",
    "momentum": "float",
    "weight_decay_d": "float",
    "body_lr_scale": "float",
    "batch_size": "int",
    "iterations": "int",
    "epochs": "int",
    "seed": "int",
    "lr_decay_every": "int",
    "lr_decay_factor": "float",
    "data": "str",                  # "synthetic" or a raw-dataset directory
    "data.classes": "int",
    "data.train_per_class": "int",
    "data.test_per_class": "int",
    "data.image": "shape",
    "data.seed": "int",
    "data.noise": "float",
    "out": "str",
    "log": "str",
    "checkpoint_every": "int",
    "model": "str",
    "transfer.source": "str",
    "transfer.map": "str",          # "auto" or "s:d,s:d,..."
    "transfer.freeze": "bool",
    "transfer.strict": "bool",
    "transfer.iterations": "int",
    "fewshot.shots": "int_list",
    "fewshot.trials": "int",
    "fewshot.novel_classes": "int",
    "fewshot.query_per_class": "int",
    "fewshot.iterations": "int",
    "fewshot.seed": "int",
    "fewshot.noise": "float",
    "bench.mean_s": "float_list",
}


@dataclass
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=dict)
    path: str = "<memory>"

    def has(self, key: str) -> bool:
        return key in self.values

    def _raw(self, key: str, default=None, required=False):
        if key not in self.values:
            if required:
                raise ConfigError(f"{self.path}: required config key '{key}' is missing")
            return default
        return self.values[key]

    def get_str(self, key: str, default=None, required=False):
        return self._raw(key, default, required)

    def get_int(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{self.path}: key '{key}' expects an integer, got {raw!r}") from None

    def get_float(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{self.path}: key '{key}' expects a number, got {raw!r}") from None

    def get_bool(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{self.path}: key '{key}' expects true/false, got {raw!r}")

    def get_int_list(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return [int(v.strip()) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self.path}: key '{key}' expects comma-separated integers") from None

    def get_float_list(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return [float(v.strip()) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self.path}: key '{key}' expects comma-separated numbers") from None

    def get_shape(self, key: str, default=None, required=False):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        parts = raw.lower().split("x")
        if len(parts) != 3:
            raise ConfigError(f"{self.path}: key '{key}' expects CxHxW, got {raw!r}")
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{self.path}: key '{key}' expects CxHxW integers, got {raw!r}") from None


def parse_config_text(text: str, path: str = "<memory>") -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key '{key}'")
        values[key] = value
    return ExperimentConfig(values=values, path=path)


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path=path)
