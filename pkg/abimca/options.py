import logging
from dataclasses import dataclass, fields
from enum import Enum
from typing import Dict, Iterable, List, Mapping

from .errors import ConfigurationError

__all__ = (
    "Algorithm",
    "TrainConfig",
    "AbimcaConfig",
    "KMeansConfig",
    "SearchConfig",
    "read_config",
    "write_config",
)

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Algorithm(Enum):
    abimca = "abimca"
    kmeans = "mini-batch-kmeans"

    @classmethod
    def parse(cls, value) -> "Algorithm":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ConfigurationError(f"unknown algorithm: {value!r}") from None


def _encode(values, aliases=None):
    names = {v: k for k, v in (aliases or {}).items()}
    return [
        "=".join([names.get(name, name.replace("_", "-")), str(value.value if isinstance(value, Enum) else value)])
        for name, value in values.items()
        if value is not None
    ]


def _coerce(name, kind, value):
    if isinstance(value, str):
        value = value.strip()
        if kind is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ConfigurationError(f"{name}: expected a boolean, got {value!r}")
    try:
        if kind is int:
            number = float(value)
            if number != int(number):
                raise ValueError(value)
            return int(number)
        if kind is float:
            return float(value)
        if kind is bool:
            return bool(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: expected {kind.__name__}, got {value!r}") from None
    return value


class Options:
    """
    Base for option dataclasses: ``name=value`` encoding, loading from loose mappings
    (config files, search assignments) and validation.
    """

    # external name -> field name
    aliases: Dict[str, str] = {}

    def encode(self) -> List[str]:
        return _encode(vars(self), self.aliases)

    @classmethod
    def field_name(cls, key: str) -> str:
        key = key.strip()
        if key in cls.aliases:
            return cls.aliases[key]
        return key.replace("-", "_")

    @classmethod
    def from_mapping(cls, mapping: Mapping, strict: bool = True, **overrides):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, value in list(mapping.items()) + list(overrides.items()):
            name = cls.field_name(key)
            if name not in kinds:
                if strict:
                    raise ConfigurationError(f"unknown {cls.__name__} option: {key!r}")
                continue
            if value is None:
                continue
            values[name] = _coerce(key, kinds[name], value)
        options = cls(**values)
        options.validate()
        return options

    def replace(self, **changes):
        values = dict(vars(self))
        values.update(changes)
        options = type(self)(**values)
        options.validate()
        return options

    def validate(self):
        pass


@dataclass
class TrainConfig(Options):
    """
    Base autoencoder training: plain SGD on reconstruction MSE plus an L1 pull of the latent
    code towards ``latent_center``.
    """

    learning_rate: float = 1e-3
    penalty_weight: float = 1e-10
    latent_center: float = 0.5
    seed: int = 0

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning-rate must be > 0, got {self.learning_rate}")
        if not self.penalty_weight >= 0:
            raise ConfigurationError(f"penalty-weight must be >= 0, got {self.penalty_weight}")


@dataclass
class AbimcaConfig(Options):
    """
    Online clusterer settings.

    ``detection_threshold`` (eta) gates the creation of a new subsequence model,
    ``recognition_threshold`` = ``theta_factor`` * eta gates recognition of a stored one.
    """

    aliases = {
        "omega": "train_cycles",
        "eta": "detection_threshold",
        "seq-len": "window_length",
        "step-size": "stride",
    }

    learning_rate: float = 0.01
    train_cycles: int = 10
    detection_threshold: float = 0.05
    theta_factor: float = 2.0
    window_length: int = 10
    stride: int = 1
    score_weight: float = 1.0
    latent_center: float = 0.5
    penalty_weight: float = 1e-10
    allow_unknown_in_predict: bool = True
    seed: int = 0

    @property
    def recognition_threshold(self) -> float:
        return self.theta_factor * self.detection_threshold

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            penalty_weight=self.penalty_weight,
            latent_center=self.latent_center,
            seed=self.seed,
        )

    def validate(self):
        self.train_config.validate()
        if self.train_cycles < 1:
            raise ConfigurationError(f"omega must be >= 1, got {self.train_cycles}")
        if self.window_length < 2:
            raise ConfigurationError(f"seq-len must be >= 2, got {self.window_length}")
        if self.stride < 1:
            raise ConfigurationError(f"step-size must be >= 1, got {self.stride}")
        if not self.detection_threshold > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.detection_threshold}")
        if not self.recognition_threshold > self.detection_threshold:
            raise ConfigurationError(
                f"recognition threshold {self.recognition_threshold} must exceed eta {self.detection_threshold}"
            )
        if not self.score_weight > 0:
            raise ConfigurationError(f"score-weight must be > 0, got {self.score_weight}")


@dataclass
class KMeansConfig(Options):
    n_clusters: int = 4
    max_iter: int = 100
    batch_size: int = 1024
    seq_len: int = 1
    seed: int = 0

    def validate(self):
        for name in ("n_clusters", "max_iter", "batch_size", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name.replace('_', '-')} must be >= 1, got {getattr(self, name)}")


def _items(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


@dataclass
class SearchConfig(Options):
    """
    Random search settings; ``algorithm`` and ``dataset`` hold comma separated ids.
    """

    algorithm: str = ",".join(a.value for a in Algorithm)
    dataset: str = ""
    results_dir: str = ""
    samples: int = 300
    seed: int = 0
    workers: int = 1
    progress: bool = False

    @property
    def algorithms(self) -> List[Algorithm]:
        return [Algorithm.parse(name) for name in _items(self.algorithm)]

    @property
    def datasets(self) -> List[str]:
        return _items(self.dataset)

    def validate(self):
        if not self.algorithms:
            raise ConfigurationError("no algorithm given")
        if not self.datasets:
            raise ConfigurationError("no dataset given")
        if not self.results_dir:
            raise ConfigurationError("no results directory given")
        if self.samples < 1:
            raise ConfigurationError(f"samples must be >= 1, got {self.samples}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")


def parse_config_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_config(path) -> Dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fd:
            return parse_config_lines(fd, str(path))
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e


def write_config(path, options) -> None:
    lines = options.encode() if isinstance(options, Options) else _encode(dict(options))
    with open(path, "w", encoding="utf-8") as fd:
        for line in lines:
            key, value = line.split("=", 1)
            fd.write(f"{key} = {value}\n")
    logger.debug("config written to %s", path)
