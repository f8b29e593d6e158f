"""Defenses for the learned detector.

Four mechanisms: defensive distillation (temperature-softened soft labels),
adversarial training (per-batch constrained adversarial augmentation),
an auxiliary adversarial-sample detector, and random input padding (the
measurement vector is embedded at a random offset inside a wider zero
vector, re-drawn every training epoch and on every inference call).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.stats

from . import attack as attack_mod
from . import neural
from .seeding import derive_seed

_PADDED_FORMAT = "fdialab-padded-mlp"
_PADDED_VERSION = 1


# ---------------------------------------------------------------------------
# random input padding
# ---------------------------------------------------------------------------

def pad_input(z: np.ndarray, pad_width: int, offset: int) -> np.ndarray:
    """Embed z into a zero vector of length len(z) + pad_width at ``offset``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("z must be a vector")
    if pad_width < 0:
        raise ValueError("pad_width must be nonnegative")
    if not 0 <= offset <= pad_width:
        raise ValueError(f"offset {offset} outside [0, {pad_width}]")
    out = np.zeros(z.size + pad_width)
    out[offset : offset + z.size] = z
    return out


class PaddedModel:
    """An MlpModel over padded inputs plus the offset-drawing stream.

    Offsets are uniform over the pad_width + 1 embedding positions; the
    stream is seeded, so a fixed seed reproduces the offset sequence.
    """

    def __init__(self, model: neural.MlpModel, m: int, pad_width: int, rng_seed: int):
        if model.input_dim != m + pad_width:
            raise ValueError(
                f"inner model expects width {model.input_dim}, not m + pad_width = {m + pad_width}"
            )
        self.model = model
        self.m = m
        self.pad_width = pad_width
        self.rng_seed = rng_seed
        self._rng = np.random.default_rng(rng_seed)

    def draw_offset(self) -> int:
        return int(self._rng.integers(0, self.pad_width + 1))

    def draw_offsets(self, count: int) -> np.ndarray:
        return self._rng.integers(0, self.pad_width + 1, size=count)


def infer_padded(pm: PaddedModel, z: np.ndarray) -> tuple[int, int]:
    """Classify z under one freshly drawn offset; returns (label, offset)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (pm.m,):
        raise ValueError(f"expected a measurement vector of length {pm.m}")
    offset = pm.draw_offset()
    label = int(neural.classify(pm.model, pad_input(z, pm.pad_width, offset)[None, :])[0])
    return label, offset


def classify_padded_batch(pm: PaddedModel, measurements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise classification, one fresh offset per row."""
    z = np.asarray(measurements, dtype=float)
    offsets = pm.draw_offsets(z.shape[0])
    padded = _embed_rows(z, pm.pad_width, offsets)
    return neural.classify(pm.model, padded), offsets


def _embed_rows(rows: np.ndarray, pad_width: int, offsets: np.ndarray) -> np.ndarray:
    count, m = rows.shape
    out = np.zeros((count, m + pad_width))
    cols = offsets[:, None] + np.arange(m)[None, :]
    out[np.arange(count)[:, None], cols] = rows
    return out


def padding_augmenter(m: int, pad_width: int, rng_seed: int, offset_log: list | None = None):
    """Batch hook that re-embeds each sample at a fresh uniform offset.

    Offsets come from a dedicated stream so the trainer's shuffle/dropout
    draws are untouched; with pad_width = 0 the hook is an exact identity.
    """
    offset_rng = np.random.default_rng(rng_seed)

    def augmenter(model, indices, batch_x, batch_targets, rng):
        offsets = offset_rng.integers(0, pad_width + 1, size=batch_x.shape[0])
        if offset_log is not None:
            offset_log.extend(int(o) for o in offsets)
        return _embed_rows(batch_x, pad_width, offsets), batch_targets

    return augmenter


def train_padded(
    inputs: np.ndarray,
    labels,
    pad_width: int,
    specs,
    cfg: neural.TrainConfig,
) -> tuple[PaddedModel, list[dict]]:
    """Train on padded inputs with fresh random offsets every epoch.

    ``specs`` must take rows of width m + pad_width. Except for the
    per-batch re-embedding, this is exactly neural.train; pad_width = 0
    reproduces plain training bit for bit.
    """
    x = np.asarray(inputs, dtype=float)
    specs = tuple(specs)
    if specs[0].input_dim != x.shape[1] + pad_width:
        raise ValueError(
            f"specs expect width {specs[0].input_dim}, data + pad gives {x.shape[1] + pad_width}"
        )
    model = neural.init_model(specs, temperature=1.0, rng_seed=cfg.rng_seed)
    hook = padding_augmenter(x.shape[1], pad_width, derive_seed(cfg.rng_seed, "padding-offsets"))
    log = neural.train(model, x, labels, cfg, augmenter=hook)
    pm = PaddedModel(model, m=x.shape[1], pad_width=pad_width,
                     rng_seed=derive_seed(cfg.rng_seed, "padding-infer"))
    return pm, log


def save_padded_model(pm: PaddedModel) -> bytes:
    doc = {
        "format": _PADDED_FORMAT,
        "version": _PADDED_VERSION,
        "m": pm.m,
        "pad_width": pm.pad_width,
        "rng_seed": pm.rng_seed,
        "model": json.loads(neural.save_model(pm.model).decode("ascii")),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def load_padded_model(payload: bytes) -> PaddedModel:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise neural.ModelFormatError(f"corrupt padded model payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _PADDED_FORMAT:
        raise neural.ModelFormatError("not a padded model container")
    if doc.get("version") != _PADDED_VERSION:
        raise neural.ModelFormatError(
            f"unsupported padded model version {doc.get('version')!r}"
        )
    try:
        inner = neural.load_model(json.dumps(doc["model"]).encode("utf-8"))
        return PaddedModel(inner, m=int(doc["m"]), pad_width=int(doc["pad_width"]),
                           rng_seed=int(doc["rng_seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, neural.ModelFormatError):
            raise
        raise neural.ModelFormatError(f"malformed padded model payload: {exc!r}") from exc


# ---------------------------------------------------------------------------
# defensive distillation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistillationConfig:
    temperature: float = 10.0
    teacher_rng_seed: int = 101
    student_rng_seed: int = 202

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def distill(
    inputs: np.ndarray,
    labels,
    specs,
    cfg: neural.TrainConfig,
    dcfg: DistillationConfig,
) -> neural.MlpModel:
    """Defensive distillation: teacher at T on hard labels, student on soft labels.

    The teacher is trained at temperature T, its softened probabilities at T
    become the student's targets, and the student (same architecture, fresh
    init) trains at T against the full probability vectors. The returned
    student has its temperature reset to 1 for deployment, so the logits the
    training-time softmax saw divided by T are exposed undivided and the
    deployed softmax saturates around the decision surface -- the defense's
    gradient-dampening mechanism. Training itself is the plain SGD loop on
    the temperature-T cross-entropy; its gradients carry the softmax's 1/T
    factor (and effectively 1/T**2 on the final layer), so high temperatures
    also damp how far the logits can grow within a fixed epoch budget. Both
    effects shrink the input gradients an attacker can query, at the cost of
    some clean accuracy at large T.
    """
    x = np.asarray(inputs, dtype=float)
    teacher = neural.init_model(specs, temperature=dcfg.temperature,
                                rng_seed=dcfg.teacher_rng_seed)
    neural.train(teacher, x, labels, cfg)
    soft_targets = neural.predict_proba(teacher, x)
    student = neural.init_model(specs, temperature=dcfg.temperature,
                                rng_seed=dcfg.student_rng_seed)
    neural.train(student, x, soft_targets, cfg)
    student.temperature = 1.0
    return student


# ---------------------------------------------------------------------------
# adversarial training
# ---------------------------------------------------------------------------

def adversarial_training(
    inputs: np.ndarray,
    labels,
    row_systems,
    specs,
    cfg: neural.TrainConfig,
    attack_cfg: attack_mod.AttackConfig | None = None,
) -> tuple[neural.MlpModel, list[dict]]:
    """Train with per-batch constrained adversarial copies of the false rows.

    ``row_systems[i]`` is the ConstraintSystem of row i (None for legitimate
    rows). Each batch's false rows are attacked against the current weights
    (iteration cap defaults to 50), the crafted vectors are appended with
    the false label, and the gradient step runs on the extended batch.
    Rows whose projected gradient vanishes are skipped, not fatal.
    """
    if attack_cfg is None:
        attack_cfg = attack_mod.AttackConfig(size=0.1, max_iters=50)
    x = np.asarray(inputs, dtype=float)
    row_systems = list(row_systems)
    if len(row_systems) != x.shape[0]:
        raise ValueError("need one constraint system entry per row")
    false_target = np.zeros(neural.CLASS_COUNT)
    false_target[attack_mod.FALSE_LABEL] = 1.0

    def augmenter(model, indices, batch_x, batch_targets, rng):
        rows = [
            r
            for r, gi in enumerate(indices)
            if batch_targets[r].argmax() == attack_mod.FALSE_LABEL
            and row_systems[gi] is not None
        ]
        if not rows:
            return batch_x, batch_targets
        systems = [row_systems[indices[r]] for r in rows]
        results = attack_mod.craft_batch(model, systems, batch_x[rows], attack_cfg)
        crafted = [
            batch_x[r] + res.v
            for r, res in zip(rows, results)
            if res.reason != "zero-gradient"
        ]
        if not crafted:
            return batch_x, batch_targets
        extra = np.vstack(crafted)
        extra_targets = np.tile(false_target, (extra.shape[0], 1))
        return np.vstack([batch_x, extra]), np.vstack([batch_targets, extra_targets])

    model = neural.init_model(specs, temperature=1.0, rng_seed=cfg.rng_seed)
    log = neural.train(model, x, labels, cfg, augmenter=augmenter)
    return model, log


# ---------------------------------------------------------------------------
# adversarial detection
# ---------------------------------------------------------------------------

def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = scipy.stats.rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def train_adversarial_detector(
    false_inputs: np.ndarray,
    adversarial_inputs: np.ndarray,
    specs,
    cfg: neural.TrainConfig,
    holdout_fraction: float = 0.15,
) -> tuple[neural.MlpModel, dict]:
    """Auxiliary classifier separating false from adversarial measurements.

    Returns the trained model and held-out metrics including AUC; near
    chance-level AUC means the two populations are not separable.
    """
    x_false = np.asarray(false_inputs, dtype=float)
    x_adv = np.asarray(adversarial_inputs, dtype=float)
    if x_false.ndim != 2 or x_adv.ndim != 2 or x_false.shape[1] != x_adv.shape[1]:
        raise ValueError("inputs must be (count, m) blocks of equal width")
    x = np.vstack([x_false, x_adv])
    y = np.concatenate([np.zeros(len(x_false), dtype=int), np.ones(len(x_adv), dtype=int)])
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    rng = np.random.default_rng(derive_seed(cfg.rng_seed, "detector-split"))
    order = rng.permutation(len(y))
    n_test = max(int(round(holdout_fraction * len(y))), 1)
    test_idx, train_idx = order[:n_test], order[n_test:]
    model = neural.init_model(specs, temperature=1.0, rng_seed=cfg.rng_seed)
    neural.train(model, x[train_idx], y[train_idx], cfg)
    metrics = neural.evaluate(model, x[test_idx], y[test_idx])
    scores = neural.predict_proba(model, x[test_idx])[:, 1]
    metrics["auc"] = auc_score(scores, y[test_idx])
    metrics["n_train"] = int(len(train_idx))
    metrics["n_test"] = int(len(test_idx))
    return model, metrics
