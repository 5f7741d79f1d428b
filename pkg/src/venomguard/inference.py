"""Decision layer: fuse image scores with the geographic prior, average per
observation, then apply the venom-aware escalation rule."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import ClassTable, DatasetBundle
from .linalg_pca import pca_transform
from .losses import softmax
from .prior_model import PriorArtifact, _forward

_STAGES = ("raw", "combined", "aggregated")


@dataclass
class ScoreMatrix:
    """Per-example class scores with a pipeline stage tag."""

    values: np.ndarray
    stage: str

    def __post_init__(self):
        if self.stage not in _STAGES:
            raise ValueError(f"stage must be one of {_STAGES}, got {self.stage!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("scores must be a 2-D matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scores must be finite")
        if self.stage != "raw" and np.any(self.values < 0.0):
            raise ValueError(f"{self.stage} scores must be non-negative")


@dataclass
class EscalationPolicy:
    """Escalate to a venomous candidate only when confidence is below tau."""

    tau: float = 0.5
    top_k: int = 5

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class PredictionResult:
    observation_id: str
    class_id: int
    pre_escalation_class_id: int
    confidence: float


@dataclass
class PredictionOutput:
    """Final predictions plus every intermediate score stage.

    raw and combined rows align with bundle.observations.rows; aggregated
    rows align with results (sorted by observation id).
    """

    results: list[PredictionResult]
    raw: ScoreMatrix
    combined: ScoreMatrix
    aggregated: ScoreMatrix


def joint_scores(image_probs: np.ndarray, prior_logits: np.ndarray) -> np.ndarray:
    """Reweight image probabilities by softmax of the prior, renormalized."""
    image_probs = np.asarray(image_probs, dtype=np.float64)
    prior_logits = np.asarray(prior_logits, dtype=np.float64)
    if image_probs.shape != prior_logits.shape:
        raise ValueError("image scores and prior must have matching length")
    if np.any(image_probs < 0.0):
        raise ValueError("image scores must be non-negative")
    return _joint_with_weights(image_probs, softmax(prior_logits))


def _joint_with_weights(image_probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    joint = image_probs * weights
    total = joint.sum()
    if total <= 0.0:
        warnings.warn("joint scores vanished; falling back to image scores")
        return image_probs.copy()
    return joint / total


def aggregate_observation(rows: np.ndarray) -> np.ndarray:
    """Mean probability row over the images of one observation."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("need at least one score row per observation")
    return rows.mean(axis=0)


def escalate_venomous(
    row: np.ndarray, classes: ClassTable, policy: EscalationPolicy
) -> int:
    """Argmax when confident; otherwise prefer a venomous top-k candidate.

    Ties resolve to the lower class id throughout.
    """
    row = np.asarray(row, dtype=np.float64)
    flags = classes.venomous_flags
    if row.shape != flags.shape:
        raise ValueError("probability row and class table must align")
    if abs(row.sum() - 1.0) > 1e-9:
        raise ValueError("probability row must sum to 1")
    base = int(np.argmax(row))
    if row[base] >= policy.tau:
        return base
    k = min(policy.top_k, row.size)
    # lexsort: last key is primary, so order is score desc then id asc
    order = np.lexsort((np.arange(row.size), -row))[:k]
    for idx in order:
        if flags[idx]:
            return int(idx)
    return base


def worker_count() -> int:
    """Thread count for the prediction loop; VENOMGUARD_THREADS overrides."""
    raw = os.environ.get("VENOMGUARD_THREADS", "").strip()
    if raw in ("", "0"):
        return min(8, os.cpu_count() or 1)
    value = int(raw)
    if value < 1:
        raise ValueError("VENOMGUARD_THREADS must be a positive integer or 0")
    return value


def _row_probabilities(scores: np.ndarray, scores_are_logits: bool) -> np.ndarray:
    if scores_are_logits:
        shifted = scores - scores.max(axis=1, keepdims=True)
        expo = np.exp(shifted)
        return expo / expo.sum(axis=1, keepdims=True)
    if np.any(scores < 0.0):
        raise ValueError("probability scores must be non-negative")
    sums = scores.sum(axis=1)
    if np.any(sums <= 0.0):
        raise ValueError("probability score rows must have positive sum")
    return scores / sums[:, None]


def _prior_weights_by_location(
    bundle: DatasetBundle, prior: PriorArtifact
) -> np.ndarray:
    """softmax(prior) per location row, computed once and reused."""
    reduced = pca_transform(prior.pca, bundle.metadata_features)
    emb, _ = _forward(prior.mlp, reduced.values)
    logits = emb @ prior.prototypes.matrix
    shifted = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    return expo / expo.sum(axis=1, keepdims=True)


def predict_dataset(
    bundle: DatasetBundle,
    prior: PriorArtifact | None = None,
    policy: EscalationPolicy | None = None,
    scores_are_logits: bool = True,
) -> PredictionOutput:
    """Predict one class per observation, sorted by observation id."""
    policy = policy or EscalationPolicy()
    n_classes = len(bundle.classes.entries)
    scores = bundle.image_scores.values
    if scores.shape[1] != n_classes:
        raise ValueError(f"score width {scores.shape[1]} != class count {n_classes}")
    probs = _row_probabilities(scores, scores_are_logits)

    obs_rows = bundle.observations.rows
    image_idx = np.array([r.image_index for r in obs_rows], dtype=np.int64)
    raw = probs[image_idx] if obs_rows else np.empty((0, n_classes))

    if prior is not None:
        if prior.prototypes.n_classes != n_classes:
            raise ValueError("prior class count does not match the dataset")
        loc_weights = _prior_weights_by_location(bundle, prior)
        loc_idx = np.array(
            [bundle.locations.entries[r.location_code] for r in obs_rows],
            dtype=np.int64,
        )
        combined = np.empty_like(raw)
        for i in range(raw.shape[0]):
            combined[i] = _joint_with_weights(raw[i], loc_weights[loc_idx[i]])
    else:
        combined = raw.copy()

    groups = bundle.observations.groups()
    row_pos: dict[str, list[int]] = {obs_id: [] for obs_id in groups}
    for i, row in enumerate(obs_rows):
        row_pos[row.observation_id].append(i)
    items = sorted(row_pos.items())

    def predict_group(pair: tuple[str, list[int]]):
        obs_id, positions = pair
        agg = aggregate_observation(combined[positions])
        base = int(np.argmax(agg))
        final = escalate_venomous(agg, bundle.classes, policy)
        result = PredictionResult(
            observation_id=obs_id,
            class_id=final,
            pre_escalation_class_id=base,
            confidence=float(agg[base]),
        )
        return result, agg

    workers = worker_count()
    if workers <= 1 or len(items) < 2 * workers:
        pairs = [predict_group(pair) for pair in items]
    else:
        # chunked map keeps output order independent of scheduling
        chunks = [items[i::workers] for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: [predict_group(p) for p in ch], chunks))
        flat = {res.observation_id: (res, agg) for part in parts for res, agg in part}
        pairs = [flat[obs_id] for obs_id, _ in items]

    results = [res for res, _ in pairs]
    aggregated = (
        np.vstack([agg for _, agg in pairs]) if pairs else np.empty((0, n_classes))
    )
    return PredictionOutput(
        results=results,
        raw=ScoreMatrix(raw, "raw"),
        combined=ScoreMatrix(combined, "combined"),
        aggregated=ScoreMatrix(aggregated, "aggregated"),
    )


def write_predictions_csv(
    path: str | Path, results: list[PredictionResult], explain: bool = False
) -> None:
    lines = []
    if explain:
        lines.append("observation_id,class_id,pre_escalation_class_id,confidence")
        for r in results:
            lines.append(
                f"{r.observation_id},{r.class_id},{r.pre_escalation_class_id},{r.confidence!r}"
            )
    else:
        lines.append("observation_id,class_id")
        for r in results:
            lines.append(f"{r.observation_id},{r.class_id}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions_csv(path: str | Path) -> dict[str, int]:
    """Minimal reader for scoring: observation_id -> predicted class."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("observation_id,class_id"):
        raise ValueError(f"{path}: missing prediction header")
    out: dict[str, int] = {}
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) < 2:
            raise ValueError(f"{path}:{number}: expected observation_id,class_id")
        obs_id = parts[0]
        if obs_id in out:
            raise ValueError(f"{path}:{number}: duplicate observation {obs_id}")
        out[obs_id] = int(parts[1])
    return out
