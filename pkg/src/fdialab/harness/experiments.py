"""Attack experiments and their metrics.

Recall is the fraction of attacked samples the defender still classifies as
false data. Bias and valid L2 norms are means of ||v||_2 and ||a + v||_2
over the successful (classified-normal) attacks only, and are absent when
no attack succeeds.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import attack as attack_mod
from .. import defense, fdia, neural
from .datasets import Dataset


@dataclass(frozen=True)
class MetricsRow:
    case: str
    k: int
    size: float
    recall: float
    bias_l2: float | None
    valid_l2: float | None
    n_success: int
    n_total: int


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    config: dict
    per_sample: dict[int, list[dict]]


@dataclass(frozen=True)
class VanillaRow:
    case: str
    k: int
    alpha: float
    recall: float
    bias_l2: float | None
    valid_l2: float | None
    n_success: int
    n_total: int


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def run_attack_experiment(
    model,
    h: np.ndarray,
    test_sets: dict[int, Dataset],
    attack_cfg: attack_mod.AttackConfig,
) -> MetricsReport:
    """Craft and evaluate white-box attacks over per-k test sets.

    ``model`` is a plain MlpModel or a defense.PaddedModel. Against a padded
    model the attacker crafts at the fixed cfg.padding_offset while each
    final verdict draws a fresh offset from the model's own stream.
    """
    padded = isinstance(model, defense.PaddedModel)
    b = fdia.residual_projector(h)
    rows: list[MetricsRow] = []
    per_sample: dict[int, list[dict]] = {}
    for k in sorted(test_sets):
        ds = test_sets[k]
        scenario = ds.scenarios[int(ds.scenario_ids[0])]
        cs = fdia.build_constraints(h, scenario, b=b)
        logs: list[dict] = []
        bias: list[float] = []
        valid: list[float] = []
        detected = 0
        for i in range(len(ds)):
            z_a = ds.values[i]
            start = time.perf_counter()
            if padded:
                result = attack_mod.attack_padded(model, cs, z_a, attack_cfg, a=ds.a[i])
            else:
                result = attack_mod.craft_perturbation(model, cs, z_a, attack_cfg, a=ds.a[i])
            wall = time.perf_counter() - start
            z_adv = z_a + result.v
            if padded:
                label, _ = defense.infer_padded(model, z_adv)
            else:
                label = int(neural.classify(model, z_adv[None, :])[0])
            flagged = label == attack_mod.FALSE_LABEL
            detected += int(flagged)
            if not flagged:
                bias.append(float(np.linalg.norm(result.v)))
                valid.append(float(np.linalg.norm(result.a_hat)))
            logs.append(
                {
                    "iterations": result.iterations,
                    "reason": result.reason,
                    "crafted_success": result.success,
                    "detected": flagged,
                    "wall_seconds": wall,
                    "v_l2": float(np.linalg.norm(result.v)),
                    "a_hat_l2": float(np.linalg.norm(result.a_hat)),
                }
            )
        n_total = len(ds)
        rows.append(
            MetricsRow(
                case=ds.case_name,
                k=int(k),
                size=attack_cfg.size,
                recall=detected / n_total,
                bias_l2=_mean_or_none(bias),
                valid_l2=_mean_or_none(valid),
                n_success=n_total - detected,
                n_total=n_total,
            )
        )
        per_sample[int(k)] = logs
    config = {
        "attack": asdict(attack_cfg),
        "model": "padded" if padded else "plain",
    }
    if padded:
        config["pad_width"] = model.pad_width
    return MetricsReport(rows=rows, config=config, per_sample=per_sample)


def run_vanilla_sweep(model, test_sets: dict[int, Dataset], alphas) -> list[VanillaRow]:
    """Evaluate the rescaling attack alpha * a across an alpha grid.

    The attacked vector is z + alpha a = z_a + (alpha - 1) a; bias counts
    the deviation (alpha - 1) a from the intended injection and valid the
    delivered injection alpha a, both over successful samples.
    """
    padded = isinstance(model, defense.PaddedModel)
    rows: list[VanillaRow] = []
    for k in sorted(test_sets):
        ds = test_sets[k]
        for alpha in alphas:
            alpha = float(alpha)
            values = ds.values + (alpha - 1.0) * ds.a
            if padded:
                labels, _ = defense.classify_padded_batch(model, values)
            else:
                labels = neural.classify(model, values)
            flagged = labels == attack_mod.FALSE_LABEL
            ok = ~flagged
            bias_norms = np.linalg.norm((alpha - 1.0) * ds.a[ok], axis=1)
            valid_norms = np.linalg.norm(alpha * ds.a[ok], axis=1)
            rows.append(
                VanillaRow(
                    case=ds.case_name,
                    k=int(k),
                    alpha=alpha,
                    recall=float(flagged.mean()),
                    bias_l2=float(bias_norms.mean()) if ok.any() else None,
                    valid_l2=float(valid_norms.mean()) if ok.any() else None,
                    n_success=int(ok.sum()),
                    n_total=len(ds),
                )
            )
    return rows


def generate_adversarial_rows(
    model: neural.MlpModel,
    h: np.ndarray,
    ds: Dataset,
    attack_cfg: attack_mod.AttackConfig,
) -> tuple[np.ndarray, np.ndarray, list[attack_mod.AdversarialResult]]:
    """Adversarial copies of every false row of ``ds`` against ``model``.

    Returns (false_rows, adversarial_rows, results); rows whose projected
    gradient vanished are dropped from both blocks.
    """
    false_idx = ds.false_rows()
    b = fdia.residual_projector(h)
    systems: dict[int, fdia.ConstraintSystem] = {}
    for sid in sorted(set(int(s) for s in ds.scenario_ids[false_idx])):
        systems[sid] = fdia.build_constraints(h, ds.scenarios[sid], b=b)
    row_systems = [systems[int(ds.scenario_ids[i])] for i in false_idx]
    results = attack_mod.craft_batch(model, row_systems, ds.values[false_idx], attack_cfg)
    keep = [i for i, res in enumerate(results) if res.reason != "zero-gradient"]
    false_rows = ds.values[false_idx][keep]
    adv_rows = false_rows + np.vstack([results[i].v for i in keep])
    return false_rows, adv_rows, [results[i] for i in keep]
