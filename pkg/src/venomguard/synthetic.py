"""Deterministic long-tailed synthetic datasets, plus brute-force oracles.

The generator produces a complete bundle whose image scores are noisy
one-hot logits and whose location metadata carries a tunable amount of
class signal. The oracle_* functions are deliberately naive pure-Python
reimplementations used only to cross-check the main modules; they share
no code with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    CLASSES_FILENAME,
    EMBEDDINGS_FILENAME,
    LOCATIONS_FILENAME,
    METADATA_FILENAME,
    OBSERVATIONS_FILENAME,
    SCORES_FILENAME,
    ClassEntry,
    ClassTable,
    DatasetBundle,
    FeatureMatrix,
    LocationTable,
    ObservationRow,
    ObservationTable,
    write_feature_matrix,
)

TRUTH_FILENAME = "truth.csv"
MANIFEST_FILENAME = "manifest.txt"

# Signal levels chosen so image scores alone are mediocre while location
# metadata is informative enough for a trained prior to help.
LOGIT_SCALE = 2.0
LOGIT_NOISE = 1.0
EMBED_SCALE = 1.0
EMBED_NOISE = 0.25
CLUSTER_NOISE = 0.05


@dataclass
class SynthConfig:
    seed: int = 7
    n_classes: int = 50
    imbalance_ratio: float = 100.0
    dims_meta: int = 8
    dims_proto: int = 16
    venom_fraction: float = 0.25
    location_informativeness: float = 0.8
    n_observations: int = 5000
    images_per_observation: tuple[int, int] = (1, 3)

    def __post_init__(self):
        if min(self.n_classes, self.dims_meta, self.dims_proto, self.n_observations) < 1:
            raise ValueError("counts must be >= 1")
        if self.imbalance_ratio < 1:
            raise ValueError("imbalance_ratio must be >= 1")
        if not 0.0 <= self.venom_fraction <= 1.0:
            raise ValueError("venom_fraction must be in [0, 1]")
        if not 0.0 <= self.location_informativeness <= 1.0:
            raise ValueError("location_informativeness must be in [0, 1]")
        lo, hi = self.images_per_observation
        if not 1 <= lo <= hi:
            raise ValueError("images_per_observation must be an increasing range from >= 1")
        if self.n_observations < self.n_classes:
            raise ValueError("need at least one observation per class")


@dataclass
class GeneratedData:
    bundle: DatasetBundle
    truth: dict[str, int]
    class_counts: np.ndarray
    config: SynthConfig


def power_law_counts(n_obs: int, n_classes: int, ratio: float) -> np.ndarray:
    """Apportion observations with head:tail frequency ratio, minimum 1 each.

    Largest-remainder rounding keeps the split deterministic; ties go to
    the lower class id.
    """
    if n_classes == 1:
        return np.array([n_obs], dtype=np.int64)
    expo = np.arange(n_classes) / (n_classes - 1)
    weights = ratio ** (-expo)
    quotas = n_obs * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    frac = quotas - counts
    order = np.lexsort((np.arange(n_classes), -frac))
    counts[order[: n_obs - counts.sum()]] += 1
    while (counts == 0).any():
        zero = int(np.argmax(counts == 0))
        donor = int(np.argmax(counts))
        if counts[donor] <= 1:
            raise ValueError("not enough observations to cover every class")
        counts[donor] -= 1
        counts[zero] += 1
    return counts


def generate(cfg: SynthConfig) -> GeneratedData:
    """Build a full in-memory dataset; bitwise deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    c = cfg.n_classes
    counts = power_law_counts(cfg.n_observations, c, cfg.imbalance_ratio)

    n_venom = math.ceil(cfg.venom_fraction * c)
    venom_ids = set(
        int(i) for i in (rng.choice(c, size=n_venom, replace=False) if n_venom else [])
    )
    centers = rng.uniform(0.0, 1.0, size=(c, cfg.dims_meta))
    protos = rng.standard_normal((c, cfg.dims_proto))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    labels = np.repeat(np.arange(c), counts)
    labels = labels[rng.permutation(cfg.n_observations)]

    alpha = cfg.location_informativeness
    lo, hi = cfg.images_per_observation
    obs_rows: list[ObservationRow] = []
    truth: dict[str, int] = {}
    locations: dict[str, int] = {}
    metadata = np.empty((cfg.n_observations, cfg.dims_meta))
    logit_rows: list[np.ndarray] = []
    embed_rows: list[np.ndarray] = []

    image_index = 0
    for i, y in enumerate(int(v) for v in labels):
        obs_id = f"obs_{i:05d}"
        loc_code = f"loc_{i:05d}"
        truth[obs_id] = y
        locations[loc_code] = i
        cluster = centers[y] + CLUSTER_NOISE * rng.standard_normal(cfg.dims_meta)
        metadata[i] = alpha * cluster + (1.0 - alpha) * rng.uniform(
            0.0, 1.0, cfg.dims_meta
        )
        n_images = int(rng.integers(lo, hi + 1))
        for _ in range(n_images):
            logits = LOGIT_NOISE * rng.standard_normal(c)
            logits[y] += LOGIT_SCALE
            logit_rows.append(logits)
            embed_rows.append(
                EMBED_SCALE * protos[y]
                + EMBED_NOISE * rng.standard_normal(cfg.dims_proto)
            )
            obs_rows.append(ObservationRow(obs_id, image_index, y, loc_code))
            image_index += 1

    classes = ClassTable(
        [ClassEntry(k, f"species_{k:03d}", k in venom_ids) for k in range(c)]
    )
    bundle = DatasetBundle(
        classes=classes,
        observations=ObservationTable(obs_rows),
        image_scores=FeatureMatrix(np.vstack(logit_rows)),
        metadata_features=FeatureMatrix(metadata),
        locations=LocationTable(locations),
        embeddings=FeatureMatrix(np.vstack(embed_rows)),
    )
    return GeneratedData(bundle=bundle, truth=truth, class_counts=counts, config=cfg)


def write_dataset(gen: GeneratedData, directory: str | Path) -> None:
    """Write the bundle, ground truth, and a config manifest to a directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bundle = gen.bundle

    lines = ["class_id,name,venomous"]
    for e in bundle.classes.entries:
        lines.append(f"{e.class_id},{e.name},{int(e.venomous)}")
    (d / CLASSES_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["observation_id,image_index,class_id,location_code"]
    for r in bundle.observations.rows:
        lines.append(f"{r.observation_id},{r.image_index},{r.class_id},{r.location_code}")
    (d / OBSERVATIONS_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["location_code,metadata_index"]
    for code, idx in bundle.locations.entries.items():
        lines.append(f"{code},{idx}")
    (d / LOCATIONS_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["observation_id,class_id"]
    for obs_id in sorted(gen.truth):
        lines.append(f"{obs_id},{gen.truth[obs_id]}")
    (d / TRUTH_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    write_feature_matrix(bundle.image_scores, d / SCORES_FILENAME)
    write_feature_matrix(bundle.metadata_features, d / METADATA_FILENAME)
    if bundle.embeddings is not None:
        write_feature_matrix(bundle.embeddings, d / EMBEDDINGS_FILENAME)

    cfg = gen.config
    manifest = [
        f"seed = {cfg.seed}",
        f"n_classes = {cfg.n_classes}",
        f"imbalance_ratio = {cfg.imbalance_ratio!r}",
        f"dims_meta = {cfg.dims_meta}",
        f"dims_proto = {cfg.dims_proto}",
        f"venom_fraction = {cfg.venom_fraction!r}",
        f"location_informativeness = {cfg.location_informativeness!r}",
        f"n_observations = {cfg.n_observations}",
        f"images_per_observation = {cfg.images_per_observation[0]}-{cfg.images_per_observation[1]}",
        f"head_count = {int(gen.class_counts.max())}",
        f"tail_count = {int(gen.class_counts.min())}",
    ]
    (d / MANIFEST_FILENAME).write_text("\n".join(manifest) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Brute-force oracles. Plain Python on purpose: no numpy, no imports from the
# modules they check.
# ---------------------------------------------------------------------------

def oracle_seesaw(logits, label, counts, p=0.8, q=2.0):
    """Loop-based seesaw loss value on Python lists."""
    n = len(logits)
    exp_z = [math.exp(v) for v in logits]
    z_sum = sum(exp_z)
    sigma = [v / z_sum for v in exp_z]
    total = sum(counts)
    denom = exp_z[label]
    for j in range(n):
        if j == label:
            continue
        if p > 0 and total > 0 and counts[label] > 0:
            mitigation = min(1.0, (counts[j] / counts[label]) ** p)
        else:
            mitigation = 1.0
        if q > 0:
            compensation = max(1.0, (sigma[j] / sigma[label]) ** q)
        else:
            compensation = 1.0
        denom += mitigation * compensation * exp_z[j]
    return -math.log(exp_z[label] / denom)


def oracle_metric(
    truth,
    pred,
    venomous_flags,
    weights=(1.0, 1.0, 2.0, 5.0, 2.0),
    pdenom="status",
    all_classes=False,
):
    """Loop-based composite metric report as a plain dict."""
    n_classes = len(venomous_flags)
    conf = [[0] * n_classes for _ in range(n_classes)]
    for t, g in zip(truth, pred):
        conf[t][g] += 1

    f1s = []
    for k in range(n_classes):
        support = sum(conf[k])
        predicted = sum(conf[i][k] for i in range(n_classes))
        if support == 0 and not all_classes:
            continue
        prec = conf[k][k] / predicted if predicted else 0.0
        rec = conf[k][k] / support if support else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0)
    macro = 100.0 * sum(f1s) / len(f1s)

    hh = hv = vh = vv = n_h = n_v = 0
    for t in range(n_classes):
        for g in range(n_classes):
            count = conf[t][g]
            if venomous_flags[t]:
                n_v += count
            else:
                n_h += count
            if t == g:
                continue
            if venomous_flags[t]:
                if venomous_flags[g]:
                    vv += count
                else:
                    vh += count
            else:
                if venomous_flags[g]:
                    hv += count
                else:
                    hh += count
    if pdenom == "status":
        denoms = [n_h, n_h, n_v, n_v]
    elif pdenom == "all":
        denoms = [len(truth)] * 4
    else:
        denoms = [hh + hv + vh + vv] * 4
    ps = [
        (100.0 * count / d if d else 0.0)
        for count, d in zip((hh, hv, vh, vv), denoms)
    ]

    correct = sum(conf[k][k] for k in range(n_classes))
    numer = weights[0] * macro
    for w, pv in zip(weights[1:], ps):
        numer += w * (100.0 - pv)
    return {
        "macro_f1": macro,
        "p1": ps[0],
        "p2": ps[1],
        "p3": ps[2],
        "p4": ps[3],
        "accuracy": 100.0 * correct / len(truth),
        "composite": numer / sum(weights),
        "n_observations": len(truth),
    }


def oracle_predict(
    observations,
    venomous_flags,
    tau=0.5,
    top_k=5,
    prior_logits=None,
    scores_are_logits=True,
):
    """Loop-based prediction pipeline on plain lists.

    observations: list of (obs_id, score_rows, location_indices);
    prior_logits: per-location prior rows, or None for no prior.
    """
    out = {}
    for obs_id, rows, locs in observations:
        agg = [0.0] * len(venomous_flags)
        for row, loc in zip(rows, locs):
            if scores_are_logits:
                top = max(row)
                exps = [math.exp(v - top) for v in row]
                s = sum(exps)
                probs = [v / s for v in exps]
            else:
                s = sum(row)
                probs = [v / s for v in row]
            if prior_logits is not None:
                prow = prior_logits[loc]
                ptop = max(prow)
                pexp = [math.exp(v - ptop) for v in prow]
                psum = sum(pexp)
                joint = [pr * (pv / psum) for pr, pv in zip(probs, pexp)]
                jsum = sum(joint)
                probs = [v / jsum for v in joint] if jsum > 0 else probs
            for k, v in enumerate(probs):
                agg[k] += v / len(rows)
        best = 0
        for k in range(1, len(agg)):
            if agg[k] > agg[best]:
                best = k
        if agg[best] >= tau:
            out[obs_id] = best
            continue
        ranked = sorted(range(len(agg)), key=lambda k: (-agg[k], k))[:top_k]
        chosen = best
        for k in ranked:
            if venomous_flags[k]:
                chosen = k
                break
        out[obs_id] = chosen
    return out


def oracle_eigvals_jacobi(matrix):
    """Cyclic Jacobi eigenvalues of a small symmetric matrix, descending."""
    n = len(matrix)
    a = [[float(v) for v in row] for row in matrix]
    for i in range(n):
        for j in range(n):
            if abs(a[i][j] - a[j][i]) > 1e-9:
                raise ValueError("matrix is not symmetric")
    for _ in range(100):
        off = math.sqrt(
            sum(a[i][j] ** 2 for i in range(n) for j in range(n) if i != j)
        )
        if off < 1e-13:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p][q]) < 1e-300:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q])
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0)
                )
                cos = 1.0 / math.sqrt(t * t + 1.0)
                sin = t * cos
                for k in range(n):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p] = cos * akp - sin * akq
                    a[k][q] = sin * akp + cos * akq
                for k in range(n):
                    apk, aqk = a[p][k], a[q][k]
                    a[p][k] = cos * apk - sin * aqk
                    a[q][k] = sin * apk + cos * aqk
    return sorted((a[i][i] for i in range(n)), reverse=True)
