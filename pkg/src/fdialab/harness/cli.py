"""Command line front end.

Subcommands cover the full pipeline: dataset generation, detector training
(plain, distilled, adversarially trained, padded), attack experiments with
metric reports, the rescaling baseline, and the adversarial-sample detector.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
3 numerical failure (singular system, infeasible scenario, diverged solve).
"""

from __future__ import annotations

import argparse
import glob
import importlib.resources
import json
import os
import sys
import time

import numpy as np

from .. import attack as attack_mod
from .. import defense, estimation, fdia, grid, neural
from ..seeding import derive_seed
from . import datasets, experiments, reports

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    fdia.NumericalError,
    fdia.InfeasibleScenarioError,
    estimation.EstimationError,
    np.linalg.LinAlgError,
)
_DATA_ERRORS = (
    grid.CaseFormatError,
    datasets.DatasetFormatError,
    neural.ModelFormatError,
    reports.ReportFormatError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    json.JSONDecodeError,
    UnicodeDecodeError,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this project reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config and case resolution
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"case", "generation", "training", "test"}


def load_profile(name_or_path: str) -> dict:
    """Load an experiment profile: a bundled name ("paper", "desk") or a path."""
    if os.path.sep in name_or_path or name_or_path.endswith(".json"):
        with open(name_or_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        ref = importlib.resources.files("fdialab") / "configs" / f"{name_or_path}.json"
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled profile named {name_or_path!r}")
        doc = json.loads(ref.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise reports.ReportFormatError("profile must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise reports.ReportFormatError(f"unknown profile keys: {sorted(unknown)}")
    return doc


def _resolve_case(args, profile: dict, fallback: str | None = None) -> grid.GridCase:
    name = getattr(args, "case", None) or fallback or profile.get("case", "case118")
    if name.endswith((".json", ".m")) and os.path.exists(name):
        return grid.load_case(name)
    return grid.load_bundled_case(name)


def _generation_config(profile: dict) -> datasets.GenerationConfig:
    return datasets.GenerationConfig(**profile.get("generation", {}))


def _train_config(args, profile: dict, seed: int) -> neural.TrainConfig:
    fields = dict(profile.get("training", {}))
    if getattr(args, "epochs", None) is not None:
        fields["epochs"] = args.epochs
    if getattr(args, "learning_rate", None) is not None:
        fields["learning_rate"] = args.learning_rate
    if getattr(args, "batch_size", None) is not None:
        fields["batch_size"] = args.batch_size
    return neural.TrainConfig(rng_seed=seed, **fields)


def _attack_config(args) -> attack_mod.AttackConfig:
    return attack_mod.AttackConfig(
        size=args.size,
        max_iters=args.iters,
        padding_offset=getattr(args, "offset", 0),
    )


def _load_any_model(path: str):
    """Load a serialized model, plain or padded, by its format tag."""
    with open(path, "rb") as fh:
        payload = fh.read()
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise neural.ModelFormatError(f"{path}: not a model file: {exc}") from exc
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt == "fdialab-padded-mlp":
        return defense.load_padded_model(payload)
    return neural.load_model(payload)


def _load_test_sets(data: str) -> dict[int, datasets.Dataset]:
    """Load per-k test sets from a directory of test_k*.{npz,csv} files."""
    if os.path.isdir(data):
        paths = sorted(glob.glob(os.path.join(data, "test_k*.npz")))
        paths += sorted(glob.glob(os.path.join(data, "test_k*.csv")))
    else:
        paths = [data]
    if not paths:
        raise datasets.DatasetFormatError(f"no test_k*.npz or test_k*.csv files under {data}")
    sets: dict[int, datasets.Dataset] = {}
    for path in paths:
        ds = datasets.load_dataset(path)
        false_idx = ds.false_rows()
        if len(false_idx) == 0:
            raise datasets.DatasetFormatError(f"{path}: test set has no false rows")
        k = ds.scenarios[int(ds.scenario_ids[false_idx[0]])].k
        sets[k] = ds
    return sets


def _train_split(ds: datasets.Dataset, seed: int):
    return datasets.split_train_test(ds, test_fraction=0.15, rng_seed=derive_seed(seed, "split"))


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _write_bytes(path: str, payload: bytes) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    profile = load_profile(args.config)
    case = _resolve_case(args, profile)
    gen = _generation_config(profile)
    ext = args.container
    os.makedirs(args.out, exist_ok=True)

    train = datasets.build_train_set(case, gen, rng_seed=args.seed)
    train_path = os.path.join(args.out, f"train.{ext}")
    datasets.save_dataset(train, train_path)

    test_cfg = profile.get("test", {})
    k_values = tuple(int(k) for k in test_cfg.get("k_values", (75, 80, 85, 90)))
    per_set = int(test_cfg.get("per_set", 1000))
    tests = datasets.build_test_sets(
        case, gen, rng_seed=derive_seed(args.seed, "test-sets"),
        k_values=sorted(k_values), per_set=per_set,
    )
    paths = {"train": train_path}
    for k, ds in tests.items():
        path = os.path.join(args.out, f"test_k{k}.{ext}")
        datasets.save_dataset(ds, path)
        paths[f"test_k{k}"] = path
    _emit({
        "command": "gen-data",
        "case": case.name,
        "rows": len(train),
        "false_rows": int(train.labels.sum()),
        "per_set": per_set,
        "paths": paths,
    })
    return EXIT_OK


def cmd_train(args) -> int:
    profile = load_profile(args.config)
    ds = datasets.load_dataset(args.data)
    fit, held = _train_split(ds, args.seed)
    cfg = _train_config(args, profile, seed=derive_seed(args.seed, "train"))
    model = neural.init_model(
        neural.detector_specs(ds.m), rng_seed=derive_seed(args.seed, "init")
    )
    start = time.perf_counter()
    neural.train(model, fit.values, fit.labels, cfg)
    wall = time.perf_counter() - start
    metrics = neural.evaluate(model, held.values, held.labels)
    _write_bytes(args.out, neural.save_model(model))
    _emit({"command": "train", "model": args.out, "wall_seconds": wall, **metrics})
    return EXIT_OK


def cmd_train_padded(args) -> int:
    profile = load_profile(args.config)
    ds = datasets.load_dataset(args.data)
    fit, held = _train_split(ds, args.seed)
    cfg = _train_config(args, profile, seed=derive_seed(args.seed, "train"))
    specs = neural.detector_specs(ds.m + args.pad_width)
    start = time.perf_counter()
    pm, _ = defense.train_padded(fit.values, fit.labels, args.pad_width, specs, cfg)
    wall = time.perf_counter() - start
    labels, _ = defense.classify_padded_batch(pm, held.values)
    metrics = {
        "accuracy": float((labels == held.labels).mean()),
        "recall": float((labels[held.labels == 1] == 1).mean()) if (held.labels == 1).any() else None,
    }
    _write_bytes(args.out, defense.save_padded_model(pm))
    _emit({
        "command": "train-padded",
        "model": args.out,
        "pad_width": args.pad_width,
        "total_width": ds.m + args.pad_width,
        "wall_seconds": wall,
        **metrics,
    })
    return EXIT_OK


def cmd_distill(args) -> int:
    profile = load_profile(args.config)
    ds = datasets.load_dataset(args.data)
    fit, held = _train_split(ds, args.seed)
    cfg = _train_config(args, profile, seed=derive_seed(args.seed, "train"))
    dcfg = defense.DistillationConfig(
        temperature=args.temperature,
        teacher_rng_seed=derive_seed(args.seed, "teacher"),
        student_rng_seed=derive_seed(args.seed, "student"),
    )
    start = time.perf_counter()
    student = defense.distill(fit.values, fit.labels, neural.detector_specs(ds.m), cfg, dcfg)
    wall = time.perf_counter() - start
    metrics = neural.evaluate(student, held.values, held.labels)
    _write_bytes(args.out, neural.save_model(student))
    _emit({
        "command": "distill",
        "model": args.out,
        "temperature": args.temperature,
        "wall_seconds": wall,
        **metrics,
    })
    return EXIT_OK


def cmd_adv_train(args) -> int:
    profile = load_profile(args.config)
    ds = datasets.load_dataset(args.data)
    case = _resolve_case(args, profile, fallback=ds.case_name)
    h = grid.build_h(case)
    fit, held = _train_split(ds, args.seed)
    cfg = _train_config(args, profile, seed=derive_seed(args.seed, "train"))
    attack_cfg = attack_mod.AttackConfig(size=args.size, max_iters=args.iters)

    b = fdia.residual_projector(h)
    systems = {
        sid: fdia.build_constraints(h, fit.scenarios[sid], b=b)
        for sid in sorted(set(int(s) for s in fit.scenario_ids if s >= 0))
    }
    row_systems = [
        systems[int(sid)] if sid >= 0 else None for sid in fit.scenario_ids
    ]
    start = time.perf_counter()
    model, _ = defense.adversarial_training(
        fit.values, fit.labels, row_systems,
        neural.detector_specs(ds.m), cfg, attack_cfg,
    )
    wall = time.perf_counter() - start
    metrics = neural.evaluate(model, held.values, held.labels)
    _write_bytes(args.out, neural.save_model(model))
    _emit({"command": "adv-train", "model": args.out, "wall_seconds": wall, **metrics})
    return EXIT_OK


def cmd_attack(args) -> int:
    profile = load_profile(args.config)
    model = _load_any_model(args.model)
    test_sets = _load_test_sets(args.data)
    any_set = next(iter(test_sets.values()))
    case = _resolve_case(args, profile, fallback=any_set.case_name)
    for ds in test_sets.values():
        if ds.case_name != case.name:
            raise datasets.DatasetFormatError(
                f"test set was generated for {ds.case_name!r}, not {case.name!r}"
            )
    h = grid.build_h(case)
    report = experiments.run_attack_experiment(model, h, test_sets, _attack_config(args))
    reports.export_report(report, args.format, args.out)
    walls = [s["wall_seconds"] for logs in report.per_sample.values() for s in logs]
    _emit({
        "command": "attack",
        "out": args.out,
        "rows": [
            {"k": r.k, "recall": r.recall, "n_success": r.n_success, "n_total": r.n_total}
            for r in report.rows
        ],
        "median_wall_seconds": float(np.median(walls)) if walls else None,
    })
    return EXIT_OK


def cmd_vanilla(args) -> int:
    model = _load_any_model(args.model)
    test_sets = _load_test_sets(args.data)
    alphas = [float(tok) for tok in args.alphas.split(",") if tok.strip()]
    if not alphas:
        raise ValueError("--alphas needs at least one value")
    rows = experiments.run_vanilla_sweep(model, test_sets, alphas)
    reports.export_vanilla(rows, args.format, args.out)
    _emit({
        "command": "vanilla",
        "out": args.out,
        "alphas": alphas,
        "mean_recall": float(np.mean([r.recall for r in rows])),
    })
    return EXIT_OK


def cmd_detect_adv(args) -> int:
    profile = load_profile(args.config)
    with open(args.model, "rb") as fh:
        model = neural.load_model(fh.read())
    ds = datasets.load_dataset(args.data)
    case = _resolve_case(args, profile, fallback=ds.case_name)
    h = grid.build_h(case)
    attack_cfg = attack_mod.AttackConfig(size=args.size, max_iters=args.iters)
    false_rows, adv_rows, _ = experiments.generate_adversarial_rows(model, h, ds, attack_cfg)
    cfg = _train_config(args, profile, seed=derive_seed(args.seed, "detector-train"))
    detector, metrics = defense.train_adversarial_detector(
        false_rows, adv_rows, neural.detector_specs(ds.m), cfg
    )
    _write_bytes(args.out, neural.save_model(detector))
    _emit({"command": "detect-adv", "model": args.out, **metrics})
    return EXIT_OK


def cmd_report(args) -> int:
    merged_rows = []
    config: dict = {}
    for path in args.inputs:
        if path.endswith(".json"):
            cfg, rows = reports.load_report_json(path)
        else:
            cfg, rows = reports.parse_report_csv(path)
        merged_rows.extend(rows)
        config.update(cfg)
    report = experiments.MetricsReport(rows=merged_rows, config=config, per_sample={})
    reports.export_report(report, args.format, args.out)
    _emit({"command": "report", "out": args.out, "rows": len(merged_rows)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fdialab",
        description="Grid state estimation, stealthy injections, detectors, and defenses.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=False, model=False, out_required=True):
        p.add_argument("--config", default="paper",
                       help="bundled profile name (paper, desk) or a JSON path")
        p.add_argument("--case", default=None,
                       help="bundled case name or a case file; overrides the profile")
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        if data:
            p.add_argument("--data", required=True, help=data if isinstance(data, str) else "dataset path")
        if model:
            p.add_argument("--model", required=True, help="serialized model path")
        p.add_argument("--out", required=out_required, help="output path")

    def train_flags(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--learning-rate", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate a training set and per-k test sets")
    common(p)
    p.add_argument("--container", choices=("npz", "csv"), default="npz")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the false-data detector")
    common(p, data="training set (train.npz or train.csv)")
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-padded", help="train a detector over randomly padded inputs")
    common(p, data="training set")
    train_flags(p)
    p.add_argument("--pad-width", type=int, required=True,
                   help="extra input width; offsets are drawn from 0..pad-width")
    p.set_defaults(func=cmd_train_padded)

    p = sub.add_parser("distill", help="defensive distillation at a softmax temperature")
    common(p, data="training set")
    train_flags(p)
    p.add_argument("--temperature", type=float, default=10.0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("adv-train", help="adversarial training with per-batch crafted rows")
    common(p, data="training set")
    train_flags(p)
    p.add_argument("--size", type=float, default=0.1, help="attack step size during training")
    p.add_argument("--iters", type=int, default=50, help="attack iteration cap during training")
    p.set_defaults(func=cmd_adv_train)

    p = sub.add_parser("attack", help="craft constrained attacks over the test sets")
    common(p, data="directory of test_k*.{npz,csv} files, or one such file", model=True)
    p.add_argument("--size", type=float, default=0.1, help="per-iteration max-norm step")
    p.add_argument("--iters", type=int, default=1000, help="iteration cap per sample")
    p.add_argument("--offset", type=int, default=0,
                   help="padding offset pinned by the attacker against a padded model")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("vanilla", help="rescaling baseline: replay alpha * injection")
    common(p, data="directory of test_k*.{npz,csv} files, or one such file", model=True)
    p.add_argument("--alphas", default="0.25,0.5,0.75,1.0,1.25,1.5,2.0",
                   help="comma-separated rescaling factors")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_vanilla)

    p = sub.add_parser("detect-adv", help="train a detector of adversarially perturbed rows")
    common(p, data="training set", model=True)
    train_flags(p)
    p.add_argument("--size", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=1000)
    p.set_defaults(func=cmd_detect_adv)

    p = sub.add_parser("report", help="merge and re-export metric reports")
    p.add_argument("--inputs", nargs="+", required=True, help="report files (csv or json)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"fdialab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"fdialab: bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"fdialab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
