"""Training configuration: defaults, JSON loading and validation."""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace

from src.base_selection import DEFAULT_PROFILE_STEPS, STRATEGIES
from src.errors import ConfigError

log = logging.getLogger(__name__)

MODES = ("exact", "lbp_wht", "lora")
OPTIMIZERS = ("adam", "sgd")
ACTIVATIONS = ("gelu", "relu")


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 2000
    tokens: int = 49
    channels: int = 32
    classes: int = 4
    seed: int = 0
    difficulty: float = 1.0


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ModeSpec:
    """Backward mode of one token-wise linear layer."""

    mode: str = "exact"
    strategy: str = "lp_l1"
    param: int = 4
    profile_steps: int = DEFAULT_PROFILE_STEPS
    lora_rank: int = 8

    def label(self):
        if self.mode == "exact":
            return "exact"
        if self.mode == "lora":
            return f"lora-{self.lora_rank}"
        if self.strategy == "full":
            return "lbp_wht-full"
        return f"{self.strategy}-{self.param}"


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple = (32, 32)
    activation: str = "gelu"


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    default_mode: ModeSpec = field(default_factory=ModeSpec)
    layer_modes: tuple = ()
    frozen_prefix: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def mode_for(self, index):
        """Mode of the ``index``-th token-wise linear layer."""
        if index < len(self.layer_modes) and self.layer_modes[index] is not None:
            return self.layer_modes[index]
        return self.default_mode

    def with_mode(self, mode):
        """Copy of this config with every token-wise layer in ``mode``."""
        return replace(self, default_mode=mode, layer_modes=())

    def to_dict(self):
        data = asdict(self)
        data["model"]["hidden"] = list(self.model.hidden)
        data["layer_modes"] = [None if m is None else asdict(m) for m in self.layer_modes]
        return data


def config_defaults():
    """Return the default config as a plain dict."""
    return TrainConfig().to_dict()


def _merge(defaults, saved):
    out = copy.deepcopy(defaults)
    for key, value in saved.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"invalid {name}: {e}") from e


def _mode(data, name, defaults):
    if data is None:
        return None
    if isinstance(data, dict):
        data = _merge(defaults, data)
    spec = _section(ModeSpec, data, name)
    if spec.mode not in MODES:
        raise ConfigError(f"{name}.mode must be one of {MODES}, got {spec.mode!r}")
    if spec.mode == "lbp_wht":
        if spec.strategy not in STRATEGIES:
            raise ConfigError(f"{name}.strategy must be one of {STRATEGIES}")
        if spec.param < 1:
            raise ConfigError(f"{name}.param must be >= 1")
        if spec.strategy == "lhe" and spec.profile_steps < 1:
            raise ConfigError(f"{name}.profile_steps must be >= 1")
    if spec.mode == "lora" and spec.lora_rank < 1:
        raise ConfigError(f"{name}.lora_rank must be >= 1")
    return spec


def config_from_dict(saved):
    """Deep-merge ``saved`` over the defaults and validate it."""
    if not isinstance(saved, dict):
        raise ConfigError("config must be a JSON object")
    defaults = config_defaults()
    unknown = set(saved) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = _merge(defaults, saved)

    mode_defaults = defaults["default_mode"]
    model = dict(data["model"])
    model["hidden"] = tuple(int(h) for h in model.get("hidden", ()))
    cfg = TrainConfig(
        seed=int(data["seed"]),
        epochs=int(data["epochs"]),
        batch_size=int(data["batch_size"]),
        learning_rate=float(data["learning_rate"]),
        optimizer=_section(OptimizerSpec, data["optimizer"], "optimizer"),
        model=_section(ModelSpec, model, "model"),
        default_mode=_mode(data["default_mode"], "default_mode", mode_defaults),
        layer_modes=tuple(
            _mode(m, f"layer_modes[{k}]", data["default_mode"])
            for k, m in enumerate(data["layer_modes"] or ())
        ),
        frozen_prefix=int(data["frozen_prefix"]),
        dataset=_section(DatasetSpec, data["dataset"], "dataset"),
    )
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if not cfg.learning_rate >= 0:
        raise ConfigError("learning_rate must be >= 0")
    if cfg.optimizer.name not in OPTIMIZERS:
        raise ConfigError(f"optimizer.name must be one of {OPTIMIZERS}")
    if cfg.model.activation not in ACTIVATIONS:
        raise ConfigError(f"model.activation must be one of {ACTIVATIONS}")
    if any(h < 1 for h in cfg.model.hidden):
        raise ConfigError("model.hidden widths must be positive")
    if len(cfg.layer_modes) > len(cfg.model.hidden):
        raise ConfigError(
            f"{len(cfg.layer_modes)} layer_modes given for {len(cfg.model.hidden)} token layers"
        )
    if cfg.frozen_prefix < 0:
        raise ConfigError("frozen_prefix must be >= 0")
    ds = cfg.dataset
    if ds.n_samples < 2 or ds.tokens < 1 or ds.channels < 1 or ds.classes < 2:
        raise ConfigError("dataset needs n_samples >= 2, tokens >= 1, channels >= 1 and classes >= 2")
    if ds.difficulty < 0:
        raise ConfigError("dataset.difficulty must be >= 0")


def load_config(path):
    """Read a config JSON file; a missing or unreadable file is a ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            saved = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    log.info("loaded config %s", path)
    return saved


def load_train_config(path):
    return config_from_dict(load_config(path))


@dataclass(frozen=True)
class SweepConfig:
    base: TrainConfig
    strategy: str = "lp_l1"
    params: tuple = (1, 2, 4, 8)
    include_exact: bool = True
    lora_ranks: tuple = ()


def sweep_from_dict(data):
    if not isinstance(data, dict) or "base" not in data:
        raise ConfigError("sweep config needs a 'base' training config")
    unknown = set(data) - {"base", "sweep"}
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    base = config_from_dict(data["base"])
    defaults = {"strategy": "lp_l1", "params": [1, 2, 4, 8], "include_exact": True, "lora_ranks": []}
    sweep = _merge(defaults, data.get("sweep", {}))
    extra = set(sweep) - set(defaults)
    if extra:
        raise ConfigError(f"unknown keys in sweep: {sorted(extra)}")
    if sweep["strategy"] not in STRATEGIES:
        raise ConfigError(f"sweep.strategy must be one of {STRATEGIES}")
    params = tuple(int(p) for p in sweep["params"])
    if not params or any(p < 1 for p in params):
        raise ConfigError("sweep.params must be a non-empty list of positive integers")
    lora_ranks = tuple(int(r) for r in sweep["lora_ranks"] or ())
    if any(r < 1 for r in lora_ranks) or len(set(lora_ranks)) != len(lora_ranks):
        raise ConfigError("sweep.lora_ranks must be distinct positive integers")
    return SweepConfig(
        base=base,
        strategy=sweep["strategy"],
        params=params,
        include_exact=bool(sweep["include_exact"]),
        lora_ranks=lora_ranks,
    )
