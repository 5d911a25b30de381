import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from .autoencoder import AeModel, LossBreakdown, forward, init_model, loss, train_window
from .errors import InvalidArgumentError, ParseError, TrainingError
from .options import AbimcaConfig, parse_config_lines
from .series import LabelArray, SlidingWindow, StandardizationStats, TimeSeries, fit_stats, iter_windows, standardize
from .utils import json_dumps, json_loads

__all__ = (
    "RegistryEntry",
    "SubseqRegistry",
    "StepResult",
    "AbimcaEngine",
    "score",
    "process_window",
    "run_online",
    "predict_offline",
    "propagate_labels",
)

logger = logging.getLogger(__name__)

REGISTRY_FORMAT = "abimca-registry v1"
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RegistryEntry:
    id: int
    model: AeModel
    created_at: int


class SubseqRegistry:
    """
    Frozen subsequence models with contiguous ids starting at 1.
    """

    def __init__(self, stats: Optional[StandardizationStats] = None):
        self._entries: List[RegistryEntry] = []
        self.stats = stats

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[RegistryEntry]:
        return iter(self._entries)

    def __getitem__(self, model_id: int) -> RegistryEntry:
        if not 1 <= model_id <= len(self._entries):
            raise KeyError(model_id)
        return self._entries[model_id - 1]

    def __repr__(self):
        return f"<{type(self).__name__} models={len(self)}>"

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(entry.id for entry in self._entries)

    def add(self, model: AeModel, created_at: int) -> int:
        snapshot = model if model.frozen else model.copy().freeze()
        entry = RegistryEntry(len(self._entries) + 1, snapshot, created_at)
        self._entries.append(entry)
        return entry.id

    def to_dir(self, path: str, config: Optional[AbimcaConfig] = None):
        os.makedirs(path, exist_ok=True)
        entries = []
        for entry in self._entries:
            filename = f"model-{entry.id:04d}.txt"
            entry.model.to_file(os.path.join(path, filename))
            entries.append(
                {"id": entry.id, "file": filename, "created_at": entry.created_at, "digest": entry.model.digest()}
            )
        manifest = {
            "format": REGISTRY_FORMAT,
            "config": parse_config_lines(config.encode()) if config is not None else None,
            "stats": (
                {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()} if self.stats is not None else None
            ),
            "models": entries,
        }
        with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fd:
            fd.write(json_dumps(manifest))
        logger.info("registry with %d models written to %s", len(self), path)

    @classmethod
    def open(cls, path: str) -> Tuple["SubseqRegistry", Optional[AbimcaConfig]]:
        manifest_path = os.path.join(path, MANIFEST)
        try:
            with open(manifest_path, "rb") as fd:
                manifest = json_loads(fd.read())
        except FileNotFoundError:
            raise ParseError(f"{path}: no {MANIFEST}") from None
        except ValueError as e:
            raise ParseError(f"{manifest_path}: {e}") from e
        if manifest.get("format") != REGISTRY_FORMAT:
            raise ParseError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")

        stats = manifest.get("stats")
        registry = cls(StandardizationStats(stats["mean"], stats["std"]) if stats else None)
        for position, item in enumerate(manifest["models"], 1):
            if item["id"] != position:
                raise ParseError(f"{manifest_path}: model ids must be contiguous from 1, got {item['id']}")
            model = AeModel.open(os.path.join(path, item["file"]))
            if item.get("digest") and model.digest() != item["digest"]:
                raise ParseError(f"{item['file']}: digest mismatch")
            registry.add(model, int(item["created_at"]))
        config = AbimcaConfig.from_mapping(manifest["config"]) if manifest.get("config") else None
        return registry, config


@dataclass(frozen=True)
class StepResult:
    t: int
    label: int
    base_score: float
    subseq_scores: Tuple[float, ...]
    loss: LossBreakdown


def score(loss_value: Union[float, LossBreakdown], latent: np.ndarray, config: AbimcaConfig = AbimcaConfig()) -> float:
    """
    ``c_fw * mean|c_lc - h| + l / c_fw``

    >>> round(score(0.2, np.array([0.4, 0.6]), AbimcaConfig()), 12)
    0.3
    """
    if isinstance(loss_value, LossBreakdown):
        loss_value = loss_value.total
    deviation = float(np.mean(np.abs(config.latent_center - np.asarray(latent))))
    return config.score_weight * deviation + loss_value / config.score_weight


def _evaluate(model: AeModel, window, config: AbimcaConfig) -> Tuple[float, LossBreakdown]:
    reconstruction, latent, _ = forward(model, window)
    breakdown = loss(window, reconstruction, latent, config.train_config)
    return score(breakdown, latent, config), breakdown


def _subseq_scores(registry: SubseqRegistry, window, config: AbimcaConfig) -> Tuple[float, ...]:
    return tuple(_evaluate(entry.model, window, config)[0] for entry in registry)


class AbimcaEngine:
    """
    One logical stream: a continuously trained base model plus the registry of frozen
    subsequence models.
    """

    def __init__(
        self,
        config: AbimcaConfig,
        d: int,
        registry: Optional[SubseqRegistry] = None,
        model: Optional[AeModel] = None,
    ):
        config.validate()
        self.config = config
        self.train_config = config.train_config
        self.registry = registry if registry is not None else SubseqRegistry()
        self.model = model if model is not None else init_model(d, config.seed)
        if self.model.d != d:
            raise InvalidArgumentError(f"model for d={self.model.d}, stream has d={d}")
        self.d = d

    def __repr__(self):
        return f"<{type(self).__name__} d={self.d} models={len(self.registry)}>"

    def process_window(self, window: SlidingWindow) -> StepResult:
        config = self.config
        t = window.end_index
        try:
            train_window(self.model, window, self.train_config, config.train_cycles)
        except TrainingError as e:
            raise TrainingError(f"base model diverged: {e}", t=t) from e

        base_score, breakdown = _evaluate(self.model, window, config)
        if not np.isfinite(base_score):
            raise TrainingError("non-finite base score", t=t)
        scores = _subseq_scores(self.registry, window, config)

        if scores and min(scores) < config.recognition_threshold:
            # argmin returns the first minimum, i.e. the lowest id on ties
            label = int(np.argmin(scores)) + 1
        elif base_score <= config.detection_threshold:
            label = self.registry.add(self.model, t)
            logger.info("new subsequence model %d at t=%d (base score %.4g)", label, t, base_score)
        else:
            label = 0
        logger.debug("t=%d label=%d base=%.4g scores=%s", t, label, base_score, scores)
        return StepResult(t, label, base_score, scores, breakdown)


def process_window(state: AbimcaEngine, window: SlidingWindow) -> StepResult:
    return state.process_window(window)


def propagate_labels(n: int, assignments: Iterable[Tuple[int, int]], backfill: bool = False) -> LabelArray:
    """
    Spread per-window labels (assigned to the window's last step) over all steps: every step
    carries the most recent label, 0 before the first one (or the first label with ``backfill``).

    >>> propagate_labels(6, [(2, 1), (4, 2)]).tolist()
    [0, 0, 1, 1, 2, 2]
    """
    labels = np.zeros(n, dtype=np.int64)
    fresh = np.full(n, -1, dtype=np.int64)
    for t, label in assignments:
        fresh[t] = label
    current = 0
    if backfill:
        known = fresh[fresh >= 0]
        current = int(known[0]) if known.size else 0
    for t in range(n):
        if fresh[t] >= 0:
            current = fresh[t]
        labels[t] = current
    return LabelArray(labels)


def _prepare(series: TimeSeries, config: AbimcaConfig, stats: Optional[StandardizationStats]):
    config.validate()
    if series.n < config.window_length:
        raise InvalidArgumentError(f"series of {series.n} steps is shorter than the window ({config.window_length})")
    if stats is None:
        stats = fit_stats(series)
    return standardize(series, stats), stats


def run_online(
    series: TimeSeries,
    config: AbimcaConfig = AbimcaConfig(),
    stats: Optional[StandardizationStats] = None,
    engine: Optional[AbimcaEngine] = None,
) -> Tuple[LabelArray, List[StepResult], SubseqRegistry]:
    """
    Cluster a series online. Without ``stats`` the series is standardized with its own
    mean and standard deviation.
    """
    scaled, stats = _prepare(series, config, stats)
    if engine is None:
        engine = AbimcaEngine(config, series.d, SubseqRegistry(stats))
    elif engine.registry.stats is None:
        engine.registry.stats = stats

    steps = [engine.process_window(window) for window in iter_windows(scaled, config.window_length, config.stride)]
    labels = propagate_labels(series.n, ((step.t, step.label) for step in steps))
    logger.info("online run: %d windows, %d subsequence models", len(steps), len(engine.registry))
    return labels, steps, engine.registry


def predict_offline(
    series: TimeSeries,
    registry: SubseqRegistry,
    config: AbimcaConfig = AbimcaConfig(),
    stats: Optional[StandardizationStats] = None,
) -> LabelArray:
    """
    Label a series with stored subsequence models only (no training).
    """
    if not len(registry):
        raise InvalidArgumentError("registry is empty")
    scaled, _ = _prepare(series, config, stats if stats is not None else registry.stats)
    if registry[1].model.d != series.d:
        raise InvalidArgumentError(f"registry models expect d={registry[1].model.d}, series has d={series.d}")

    assignments = []
    for window in iter_windows(scaled, config.window_length, config.stride):
        scores = _subseq_scores(registry, window, config)
        best = int(np.argmin(scores))
        if config.allow_unknown_in_predict and not scores[best] < config.recognition_threshold:
            label = 0
        else:
            label = best + 1
        assignments.append((window.end_index, label))
    return propagate_labels(series.n, assignments, backfill=not config.allow_unknown_in_predict)
