"""``key = value`` run configuration with command-line overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .experiments import PegasosConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))


@dataclass(frozen=True)
class RunConfig:
    # data
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    n_classes: int | None = None
    binarize: str = "stochastic"
    data_seed: int | None = None
    synth_classes: int = 4
    synth_side: int = 14
    synth_per_class: int = 200
    synth_test_per_class: int = 100
    synth_noise: float = 0.2
    synth_shift: int = 1
    # outputs / inputs
    out: str = "runs/latest"
    checkpoint: str | None = None
    # generate
    n_samples: int = 100
    cols: int = 10
    # impute
    mask: str = "rect:12x12"
    T: int = 100
    impute_init: str = "uniform01"
    impute_mode: str = "sample"
    n_impute: int = 100
    # baseline / csweep
    c_values: tuple = (0.0, 1.0, 10.0, 100.0, 1000.0)
    pegasos_reg: float = PegasosConfig.reg
    pegasos_iters: int = PegasosConfig.iters
    pegasos_batch: int = PegasosConfig.batch
    # model and optimisation
    train: TrainConfig = TrainConfig()

    @property
    def pegasos(self):
        return PegasosConfig(self.pegasos_reg, self.pegasos_iters, self.pegasos_batch)

    @property
    def seed(self):
        return self.train.seed

    @property
    def resolved_data_seed(self):
        return self.seed if self.data_seed is None else self.data_seed


_RUN_FIELDS = tuple(f.name for f in fields(RunConfig) if f.name != "train")
ALL_KEYS = _RUN_FIELDS + _TRAIN_FIELDS

_TUPLE_INT = {"hidden"}
_TUPLE_FLOAT = {"c_values"}
_TUPLE_STR = {"update_groups"}
_OPTIONAL = {"train_images", "train_labels", "test_images", "test_labels", "n_classes", "data_seed", "checkpoint"}


def _default(key):
    if key in _TRAIN_FIELDS:
        return getattr(TrainConfig(), key)
    return getattr(RunConfig(), key)


def _parse_value(key, text):
    text = text.strip()
    if key in _OPTIONAL and text.lower() in ("", "none"):
        return None
    try:
        if key in _TUPLE_INT:
            return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        if key in _TUPLE_FLOAT:
            return tuple(float(t) for t in text.replace(" ", "").split(",") if t)
        if key in _TUPLE_STR:
            return tuple(t.strip() for t in text.split(",") if t.strip())
        default = _default(key)
        if key in ("n_classes", "data_seed"):
            return int(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r} for key {key!r}") from None


def parse_lines(file_text):
    out = {}
    for lineno, raw in enumerate(file_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def parse_config(file_text="", cli_overrides=None, env=None):
    """Merge file values, then CLI overrides, then ``MMDGM_SEED``."""
    values = parse_lines(file_text or "")
    values.update({k: str(v) for k, v in (cli_overrides or {}).items()})
    env = os.environ if env is None else env
    if env.get("MMDGM_SEED"):
        values["seed"] = env["MMDGM_SEED"]
    unknown = sorted(set(values) - set(ALL_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    parsed = {k: _parse_value(k, v) for k, v in values.items()}
    train_kwargs = {k: v for k, v in parsed.items() if k in _TRAIN_FIELDS}
    run_kwargs = {k: v for k, v in parsed.items() if k in _RUN_FIELDS}
    try:
        train_cfg = TrainConfig(**train_kwargs)
        cfg = RunConfig(train=train_cfg, **run_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if (cfg.train_images is None) != (cfg.train_labels is None):
        raise ConfigError("train_images and train_labels must be given together")
    if (cfg.test_images is None) != (cfg.test_labels is None):
        raise ConfigError("test_images and test_labels must be given together")
    return cfg


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig):
    """Every key, resolved, one ``key = value`` per line (sorted)."""
    values = {k: getattr(cfg, k) for k in _RUN_FIELDS}
    values.update(dataclasses.asdict(cfg.train))
    values["hidden"] = tuple(cfg.train.hidden)
    values["update_groups"] = tuple(cfg.train.update_groups)
    return "".join(f"{k} = {_format_value(values[k])}\n" for k in sorted(values))


def require(cfg: RunConfig, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
