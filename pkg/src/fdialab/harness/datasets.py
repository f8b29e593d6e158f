"""Labeled measurement datasets: generation recipe, splits, and containers.

A training set is built from legitimate measurement vectors of which half
are polluted in place by stealthy injections. Every polluted row draws its
own attack scenario: k uniform over the configured range, indices without
replacement, and the injection magnitude follows sample_target_l1 against
the mean L1 norm of the legitimate vectors. Polluted rows are built only
from base vectors that pass the residual check, so every false row is
guaranteed stealthy.

Stored rows are measurement deviations: the case's fixed operating flow
profile (grid.flow_center) is subtracted from every measurement vector
before storage. Residual screening, tau calibration, and the injection
budget all use the raw vectors; the subtraction is a constant translation,
so injections, perturbations, stealth constraints, and every norm metric
over them are unchanged, while the classifier trains on inputs centered
near zero. Reconstruct a raw vector as row + grid.flow_center(case).

Containers: CSV (columns label,k,scenario_id,z_0..z_{m-1}) with a JSON
sidecar carrying scenarios and injected vectors, or a compact binary
container (.npz, written deterministically) for the large profile.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import estimation, fdia, grid
from ..seeding import derive_rng, derive_seed

_SIDECAR_FORMAT = "fdialab-dataset-sidecar"
_NPZ_FORMAT = "fdialab-dataset-npz"
_CONTAINER_VERSION = 1

# margin subtracted from tau when selecting pollution bases; keeps
# residual(z + a) under tau despite the ~1e-12 stealth drift
_TAU_MARGIN = 1e-9


class DatasetFormatError(ValueError):
    """A dataset container failed to parse or validate."""


@dataclass(frozen=True)
class GenerationConfig:
    rows: int = 30000
    pollute_fraction: float = 0.5
    k_min: int = 71            # inclusive
    k_max: int = 99            # inclusive
    spread: float = 0.005      # uniform angle spread around the operating point, radians
    noise_sigma: float = 0.01  # measurement noise standard deviation
    false_alarm_rate: float = 0.01
    calibration_rows: int = 4000

    def __post_init__(self):
        if self.rows <= 0:
            raise ValueError("rows must be positive")
        if not 0.0 <= self.pollute_fraction <= 1.0:
            raise ValueError("pollute_fraction must lie in [0, 1]")
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        if self.calibration_rows < 10:
            raise ValueError("calibration_rows must be at least 10")
        if not 0.0 < self.false_alarm_rate < 1.0:
            raise ValueError("false_alarm_rate must lie in (0, 1)")


@dataclass(frozen=True)
class MeasurementSample:
    """One labeled measurement vector with its injection provenance."""

    values: np.ndarray
    label: int
    scenario_id: int                 # -1 for legitimate rows
    a: np.ndarray | None             # injected vector for false rows


@dataclass
class Dataset:
    case_name: str
    values: np.ndarray               # (count, m)
    labels: np.ndarray               # (count,) ints, 0 normal / 1 false
    scenario_ids: np.ndarray         # (count,) ints, -1 for legitimate rows
    a: np.ndarray                    # (count, m); zero rows for legitimate samples
    scenarios: dict[int, fdia.AttackScenario]
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def sample(self, i: int) -> MeasurementSample:
        sid = int(self.scenario_ids[i])
        return MeasurementSample(
            values=self.values[i],
            label=int(self.labels[i]),
            scenario_id=sid,
            a=self.a[i] if sid >= 0 else None,
        )

    def false_rows(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    def subset(self, rows: np.ndarray, note: str | None = None) -> "Dataset":
        config = dict(self.config)
        if note:
            config["subset"] = note
        return Dataset(
            case_name=self.case_name,
            values=self.values[rows].copy(),
            labels=self.labels[rows].copy(),
            scenario_ids=self.scenario_ids[rows].copy(),
            a=self.a[rows].copy(),
            scenarios=dict(self.scenarios),
            config=config,
        )


def build_train_set(case: grid.GridCase, cfg: GenerationConfig, rng_seed: int) -> Dataset:
    """Generate the labeled training corpus for ``case``; see module docstring."""
    if cfg.k_min <= case.m - case.n:
        raise ValueError(
            f"k_min = {cfg.k_min} is infeasible: stealthy scenarios need k > m - n = {case.m - case.n}"
        )
    if cfg.k_max > case.m:
        raise ValueError(f"k_max = {cfg.k_max} exceeds the measurement count {case.m}")
    h = grid.build_h(case)
    est = estimation.Estimator(h)
    cal = grid.measure_batch(
        h,
        grid.sample_states(case, cfg.calibration_rows, cfg.spread, derive_seed(rng_seed, "calibration-states")),
        cfg.noise_sigma,
        derive_seed(rng_seed, "calibration-noise"),
    )
    tau = est.calibrate_tau(cal, cfg.false_alarm_rate)

    states = grid.sample_states(case, cfg.rows, cfg.spread, derive_seed(rng_seed, "states"))
    values = grid.measure_batch(h, states, cfg.noise_sigma, derive_seed(rng_seed, "noise"))
    mean_l1 = float(np.abs(values).sum(axis=1).mean())

    b = fdia.residual_projector(h)
    n_false = int(round(cfg.rows * cfg.pollute_fraction))
    residuals = est.residual_batch(values)
    eligible = residuals <= tau - _TAU_MARGIN
    order = derive_rng(rng_seed, "pollution-rows").permutation(cfg.rows)
    candidates = order[eligible[order]]
    if candidates.size < n_false:
        raise fdia.NumericalError(
            f"only {candidates.size} rows pass the residual check; need {n_false} to pollute"
        )
    polluted = np.sort(candidates[:n_false])

    labels = np.zeros(cfg.rows, dtype=int)
    scenario_ids = np.full(cfg.rows, -1, dtype=int)
    a = np.zeros_like(values)
    scenarios: dict[int, fdia.AttackScenario] = {}
    scen_rng = derive_rng(rng_seed, "scenarios")
    for sid, row in enumerate(polluted):
        k = int(scen_rng.integers(cfg.k_min, cfg.k_max + 1))
        idx = scen_rng.choice(case.m, size=k, replace=False)
        scenario = fdia.AttackScenario(m=case.m, compromised=tuple(int(i) for i in idx))
        cs = fdia.build_constraints(h, scenario, b=b)
        target = fdia.sample_target_l1(mean_l1, derive_seed(rng_seed, "l1", int(row)))
        vec = fdia.generate_false_data(cs, target, derive_seed(rng_seed, "a", int(row)))
        scenarios[sid] = scenario
        a[row] = vec.values
        values[row] += vec.values
        labels[row] = 1
        scenario_ids[row] = sid

    values -= grid.flow_center(case)

    config = {
        "kind": "train",
        "case": case.name,
        "rng_seed": int(rng_seed),
        "tau": tau,
        "mean_l1": mean_l1,
        "centered": True,
        "generation": asdict(cfg),
    }
    return Dataset(
        case_name=case.name,
        values=values,
        labels=labels,
        scenario_ids=scenario_ids,
        a=a,
        scenarios=scenarios,
        config=config,
    )


def build_test_sets(
    case: grid.GridCase,
    cfg: GenerationConfig,
    rng_seed: int,
    k_values=(75, 80, 85, 90),
    per_set: int = 1000,
) -> dict[int, Dataset]:
    """One fixed random scenario per k; ``per_set`` stealthy false samples each."""
    h = grid.build_h(case)
    est = estimation.Estimator(h)
    cal = grid.measure_batch(
        h,
        grid.sample_states(case, cfg.calibration_rows, cfg.spread, derive_seed(rng_seed, "calibration-states")),
        cfg.noise_sigma,
        derive_seed(rng_seed, "calibration-noise"),
    )
    tau = est.calibrate_tau(cal, cfg.false_alarm_rate)
    mean_l1 = float(np.abs(cal).sum(axis=1).mean())
    b = fdia.residual_projector(h)
    center = grid.flow_center(case)

    sets: dict[int, Dataset] = {}
    for k in k_values:
        if not case.m - case.n < k <= case.m:
            raise ValueError(f"test k = {k} infeasible for case with m - n = {case.m - case.n}")
        scenario = fdia.draw_scenario(case.m, int(k), derive_seed(rng_seed, "scenario", int(k)))
        cs = fdia.build_constraints(h, scenario, b=b)
        clean = _stealth_bases(case, h, est, tau, cfg, per_set, derive_seed(rng_seed, "bases", int(k)))
        values = np.empty_like(clean)
        a = np.empty_like(clean)
        for i in range(per_set):
            target = fdia.sample_target_l1(mean_l1, derive_seed(rng_seed, "l1", int(k), i))
            vec = fdia.generate_false_data(cs, target, derive_seed(rng_seed, "a", int(k), i))
            a[i] = vec.values
            values[i] = clean[i] + vec.values - center
        config = {
            "kind": "test",
            "case": case.name,
            "rng_seed": int(rng_seed),
            "k": int(k),
            "per_set": int(per_set),
            "tau": tau,
            "mean_l1": mean_l1,
            "centered": True,
            "generation": asdict(cfg),
        }
        sets[int(k)] = Dataset(
            case_name=case.name,
            values=values,
            labels=np.ones(per_set, dtype=int),
            scenario_ids=np.zeros(per_set, dtype=int),
            a=a,
            scenarios={0: scenario},
            config=config,
        )
    return sets


def _stealth_bases(case, h, est, tau, cfg, count, seed) -> np.ndarray:
    """Draw clean measurement vectors that pass the residual check."""
    rows = []
    have = 0
    for chunk in range(64):
        need = count - have
        if need <= 0:
            break
        draw = max(need + 16, int(need * 1.1))
        states = grid.sample_states(case, draw, cfg.spread, derive_seed(seed, "states", chunk))
        z = grid.measure_batch(h, states, cfg.noise_sigma, derive_seed(seed, "noise", chunk))
        ok = est.residual_batch(z) <= tau - _TAU_MARGIN
        kept = z[ok][:need]
        rows.append(kept)
        have += kept.shape[0]
    if have < count:
        raise fdia.NumericalError("could not draw enough stealthy base vectors")
    return np.vstack(rows)


def split_train_test(ds: Dataset, test_fraction: float = 0.15, rng_seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random split reserving ``test_fraction`` of rows for evaluation."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(rng_seed).permutation(len(ds))
    n_test = max(int(round(test_fraction * len(ds))), 1)
    return (
        ds.subset(np.sort(order[n_test:]), note="train-split"),
        ds.subset(np.sort(order[:n_test]), note="test-split"),
    )


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def _scenario_records(ds: Dataset) -> list[dict]:
    return [
        {"id": sid, "m": scen.m, "k": scen.k, "compromised": list(scen.compromised)}
        for sid, scen in sorted(ds.scenarios.items())
    ]


def _scenarios_from_records(records) -> dict[int, fdia.AttackScenario]:
    return {
        int(rec["id"]): fdia.AttackScenario(m=int(rec["m"]), compromised=tuple(rec["compromised"]))
        for rec in records
    }


def save_dataset(ds: Dataset, path: str) -> None:
    """Write a dataset container; format chosen by extension (.csv or .npz)."""
    if path.endswith(".csv"):
        _save_csv(ds, path)
    elif path.endswith(".npz"):
        _save_npz(ds, path)
    else:
        raise DatasetFormatError(f"unsupported dataset extension on {path!r}")


def load_dataset(path: str) -> Dataset:
    if path.endswith(".csv"):
        return _load_csv(path)
    if path.endswith(".npz"):
        return _load_npz(path)
    raise DatasetFormatError(f"unsupported dataset extension on {path!r}")


def sidecar_path(path: str) -> str:
    return path + ".sidecar.json"


def _save_csv(ds: Dataset, path: str) -> None:
    m = ds.m
    header = "label,k,scenario_id," + ",".join(f"z_{j}" for j in range(m))
    lines = [header]
    for i in range(len(ds)):
        sid = int(ds.scenario_ids[i])
        k = ds.scenarios[sid].k if sid >= 0 else 0
        cells = [str(int(ds.labels[i])), str(k), str(sid)]
        cells.extend(_format_float(x) for x in ds.values[i])
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    injected = []
    for i in np.flatnonzero(ds.scenario_ids >= 0):
        scen = ds.scenarios[int(ds.scenario_ids[i])]
        support = ds.a[i, list(scen.compromised)]
        injected.append({"row": int(i), "values": [float(x) for x in support]})
    sidecar = {
        "format": _SIDECAR_FORMAT,
        "version": _CONTAINER_VERSION,
        "case": ds.case_name,
        "config": ds.config,
        "scenarios": _scenario_records(ds),
        "injected": injected,
    }
    with open(sidecar_path(path), "w", encoding="ascii", newline="\n") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _load_csv(path: str) -> Dataset:
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"missing sidecar {sidecar_path(path)!r}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"corrupt sidecar: {exc}") from exc
    if sidecar.get("format") != _SIDECAR_FORMAT or sidecar.get("version") != _CONTAINER_VERSION:
        raise DatasetFormatError("unrecognized sidecar format or version")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in (raw.strip() for raw in fh) if line]
    if not lines:
        raise DatasetFormatError("empty dataset file")
    header = lines[0].split(",")
    if header[:3] != ["label", "k", "scenario_id"]:
        raise DatasetFormatError(f"unexpected dataset header {lines[0]!r}")
    m = len(header) - 3
    count = len(lines) - 1
    values = np.zeros((count, m))
    labels = np.zeros(count, dtype=int)
    scenario_ids = np.zeros(count, dtype=int)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != m + 3:
            raise DatasetFormatError(f"row {i} has {len(cells)} cells; expected {m + 3}")
        try:
            labels[i] = int(cells[0])
            scenario_ids[i] = int(cells[2])
            values[i] = [float(c) for c in cells[3:]]
        except ValueError as exc:
            raise DatasetFormatError(f"row {i} has a non-numeric cell: {exc}") from exc
    scenarios = _scenarios_from_records(sidecar["scenarios"])
    a = np.zeros_like(values)
    for rec in sidecar["injected"]:
        row = int(rec["row"])
        scen = scenarios[int(scenario_ids[row])]
        a[row, list(scen.compromised)] = rec["values"]
    return Dataset(
        case_name=str(sidecar["case"]),
        values=values,
        labels=labels,
        scenario_ids=scenario_ids,
        a=a,
        scenarios=scenarios,
        config=dict(sidecar["config"]),
    )


def _save_npz(ds: Dataset, path: str) -> None:
    """Deterministic zip container readable by np.load."""
    meta = {
        "format": _NPZ_FORMAT,
        "version": _CONTAINER_VERSION,
        "case": ds.case_name,
        "config": ds.config,
        "scenarios": _scenario_records(ds),
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("ascii")
    arrays = {
        "values": ds.values,
        "labels": ds.labels.astype(np.int64),
        "scenario_ids": ds.scenario_ids.astype(np.int64),
        "a": ds.a,
        "meta": np.frombuffer(meta_bytes, dtype=np.uint8),
    }
    from numpy.lib import format as npformat

    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            npformat.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def _load_npz(path: str) -> Dataset:
    try:
        with np.load(path) as blob:
            meta = json.loads(bytes(blob["meta"].tobytes()).decode("utf-8"))
            values = np.array(blob["values"], dtype=float)
            labels = np.array(blob["labels"], dtype=int)
            scenario_ids = np.array(blob["scenario_ids"], dtype=int)
            a = np.array(blob["a"], dtype=float)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"corrupt dataset container {path!r}: {exc}") from exc
    if meta.get("format") != _NPZ_FORMAT or meta.get("version") != _CONTAINER_VERSION:
        raise DatasetFormatError("unrecognized dataset container format or version")
    return Dataset(
        case_name=str(meta["case"]),
        values=values,
        labels=labels,
        scenario_ids=scenario_ids,
        a=a,
        scenarios=_scenarios_from_records(meta["scenarios"]),
        config=dict(meta["config"]),
    )
