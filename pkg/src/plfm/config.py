"""Run configuration: one sectioned ``key: value`` document for every module.

Precedence is command-line flag > config file > built-in default. Unknown
sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
from pathlib import Path

DEFAULTS = {
    "run": {"seed": 0},
    "data": {"size": 256, "n_frames": 3, "rois": 16, "looks": 1, "coverage_min": 0.5,
             "coverage_max": 0.8, "thickness": 0.85},
    "split": {"iterations": 2000, "n": 150, "bins": 20, "val_fraction": 0.2,
              "test_fraction": 0.1, "normalized": False},
    "convlstm": {"lr": 1e-2, "batch_size": 16, "max_epochs": 100, "delta": 1.0,
                 "hidden": (32, 32, 32), "kernel_size": 3, "peephole": True, "pool": False,
                 "plateau_patience": 5, "early_stop_patience": 10, "augment": False},
    "cgan": {"lr": 2e-4, "beta1": 0.5, "batch_size": 32, "steps": 1000, "lam": 100.0,
             "gammas": (0.5, 0.5), "adv_weight": 1.0, "base_filters": 64, "augment": False},
    "head": {"classes": 256, "lr": 2e-4, "batch_size": 16, "epochs": 50, "depth": 2,
             "filters": 32, "shared": True, "augment": False},
    "eval": {"csc": True, "csc_radius": 2, "degrees": False, "white_threshold": 0.85},
}


class ConfigError(ValueError):
    pass


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in raw.replace(",", " ").split())
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {s: dict(d) for s, d in DEFAULTS.items()}
        for section, kv in (values or {}).items():
            for key, v in kv.items():
                self.set(section, key, v)

    def get(self, section: str, key: str):
        self._check(section, key)
        return self.values[section][key]

    def __getitem__(self, section):
        if section not in self.values:
            raise ConfigError(f"unknown section [{section}]")
        return dict(self.values[section])

    def set(self, section: str, key: str, value):
        self._check(section, key)
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse(value, default, f"[{section}] {key}")
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        self.values[section][key] = value

    @staticmethod
    def _check(section, key):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")

    def dumps(self) -> str:
        out = []
        for section, kv in self.values.items():
            out.append(f"[{section}]")
            out += [f"{k}: {_format(v)}" for k, v in kv.items()]
            out.append("")
        return "\n".join(out)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``{section: {key: value}}`` overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(delimiters=(":",), interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc.message}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                try:
                    cfg.set(section, key, raw)
                except ConfigError as exc:
                    raise ConfigError(f"{Path(path)}: {exc}") from None
    for section, kv in (overrides or {}).items():
        for key, v in kv.items():
            if v is not None:
                cfg.set(section, key, v)
    return cfg
