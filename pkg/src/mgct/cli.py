"""Command-line entry point.

Subcommands: ``synth`` (write a synthetic dataset), ``train`` (one fold),
``cv`` (Monte Carlo cross-validation), ``ablate`` (model presets A..E),
``eval`` (score a checkpoint, emit Kaplan-Meier curves and a log-rank
report), ``verify`` (numerical invariant suite).

Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error.
Run directories are timestamp+seed named and never overwritten. ``MGCT_SEED``
is the seed fallback when neither flag nor config provides one.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import checkpoint as ckpt
from . import dataio, survival, verify
from .mgct_core import AblationSpec, FusionConfig, ModelSpec
from .train import (
    TrainConfig,
    cross_validate,
    predict,
    run_ablation_matrix,
    write_ablation_csv,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config file: strict schema, explicit defaults

_SCHEMA = {
    "dataset": {
        "manifest": (str, lambda v: True, "path to manifest.csv"),
        "category_map": (str, lambda v: True, "path to category_map.json"),
    },
    "train": {
        "epochs": (int, lambda v: v >= 0, ">= 0"),
        "learning_rate": (float, lambda v: v > 0, "> 0"),
        "weight_decay": (float, lambda v: v >= 0, ">= 0"),
        "accumulation": (int, lambda v: v >= 1, ">= 1"),
        "batch_size": (int, lambda v: v == 1, "fixed at 1"),
        "seed": (int, lambda v: True, "any integer"),
        "dropout": (float, lambda v: 0 <= v < 1, "in [0, 1)"),
        "loss_alpha": (float, lambda v: 0 <= v < 1, "in [0, 1)"),
        "snn_hidden": (int, lambda v: v >= 1, ">= 1"),
    },
    "model": {
        "s1": (int, lambda v: v >= 1, ">= 1"),
        "s2": (int, lambda v: v >= 1, ">= 1"),
        "d": (int, lambda v: v >= 1, ">= 1"),
        "heads": (int, lambda v: v >= 1, ">= 1"),
        "d_attn": (int, lambda v: v >= 1, ">= 1"),
        "d_ff": (int, lambda v: v >= 1, ">= 1"),
        "bins": (int, lambda v: v >= 2, ">= 2"),
        "residual": (bool, lambda v: True, "true/false"),
    },
    "cv": {
        "folds": (int, lambda v: v >= 1, ">= 1"),
        "ratio": (float, lambda v: 0 < v < 1, "in (0, 1)"),
        "jobs": (int, lambda v: v >= 1, ">= 1"),
    },
    "ablation": {
        "deep_fusion": (bool, lambda v: True, "true/false"),
        "mgca": (bool, lambda v: True, "true/false"),
        "gap": (bool, lambda v: True, "true/false"),
        "feedforward": (bool, lambda v: True, "true/false"),
    },
}


def default_config() -> dict:
    tc = TrainConfig()
    return {
        "dataset": {"manifest": "", "category_map": ""},
        "train": {
            "epochs": tc.epochs,
            "learning_rate": tc.learning_rate,
            "weight_decay": tc.weight_decay,
            "accumulation": tc.accumulation,
            "batch_size": tc.batch_size,
            "seed": tc.seed,
            "dropout": tc.dropout,
            "loss_alpha": tc.loss_alpha,
            "snn_hidden": tc.snn_hidden,
        },
        "model": asdict(FusionConfig()),
        "cv": {"folds": 5, "ratio": 0.2, "jobs": 1},
        "ablation": asdict(AblationSpec()),
    }


def validate_config(doc: dict) -> tuple[dict, set[str]]:
    """Merge a config document over the defaults, rejecting unknown or bad keys.

    Returns the merged config and the set of ``section.key`` names the
    document set explicitly.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    merged = default_config()
    provided: set[str] = set()
    problems: list[str] = []
    for section, values in doc.items():
        if section not in _SCHEMA:
            problems.append(f"unknown section {section!r}")
            continue
        if not isinstance(values, dict):
            problems.append(f"section {section!r} must be an object")
            continue
        for key, value in values.items():
            if key not in _SCHEMA[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            expected, pred, desc = _SCHEMA[section][key]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or isinstance(value, bool) != (expected is bool):
                problems.append(f"{section}.{key}: expected {expected.__name__} ({desc})")
                continue
            if not pred(value):
                problems.append(f"{section}.{key}: value {value!r} out of range ({desc})")
                continue
            merged[section][key] = value
            provided.add(f"{section}.{key}")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
    return merged, provided


def load_config(path) -> tuple[dict, set[str]]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(doc)


def to_train_config(cfg: dict, provided: set[str], seed_override: int | None) -> TrainConfig:
    # seed precedence: --seed flag, config value, MGCT_SEED, default
    t = dict(cfg["train"])
    if seed_override is not None:
        t["seed"] = seed_override
    elif "train.seed" not in provided and os.environ.get("MGCT_SEED"):
        t["seed"] = int(os.environ["MGCT_SEED"])
    return TrainConfig(
        epochs=t["epochs"],
        learning_rate=t["learning_rate"],
        weight_decay=t["weight_decay"],
        accumulation=t["accumulation"],
        batch_size=t["batch_size"],
        seed=t["seed"],
        fusion=FusionConfig(**cfg["model"]),
        snn_hidden=t["snn_hidden"],
        dropout=t["dropout"],
        loss_alpha=t["loss_alpha"],
    )


def resolve_seed(flag_seed: int | None, fallback: int = 0) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("MGCT_SEED")
    return int(env) if env else fallback


# ---------------------------------------------------------------------------
# run directories and dataset loading


def make_run_dir(base, seed: int) -> Path:
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    candidate = base / f"{stamp}-seed{seed}"
    n = 1
    while candidate.exists():
        n += 1
        candidate = base / f"{stamp}-seed{seed}-{n}"
    candidate.mkdir()
    return candidate


def load_dataset(cfg: dict) -> dataio.Dataset:
    manifest = cfg["dataset"]["manifest"]
    if not manifest:
        raise ConfigError("dataset.manifest is required for this command")
    cmap_path = cfg["dataset"]["category_map"] or str(Path(manifest).parent / "category_map.json")
    cmap = dataio.read_category_map(cmap_path)
    return dataio.load_samples(manifest, cmap)


def checkpoint_meta(result, dataset: dataio.Dataset) -> dict:
    return {
        "model": result.spec.to_dict(),
        "bin_edges": [float(x) for x in result.bin_edges],
        "auc_horizon": result.auc_horizon,
        "categories": list(dataset.category_map.categories),
        "fold": result.fold,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    seed = resolve_seed(args.seed)
    rm = dataio.RiskModel(censor_rate=args.censor_rate)
    ds = dataio.synthesize(args.n, d_in=args.d_in, s_categories=args.categories, risk_model=rm, seed=seed)
    manifest = dataio.write_dataset(ds, args.out)
    events = sum(s.event for s in ds.samples)
    print(f"wrote {len(ds.samples)} samples to {manifest}")
    print(f"observed deaths: {events}, censored: {len(ds.samples) - events}")
    print(f"bag width d_in={ds.d_in}, categories={len(ds.category_map.categories)}")
    return EXIT_OK


def _prepare_run(args):
    cfg, provided = load_config(args.config)
    train_cfg = to_train_config(cfg, provided, args.seed)
    dataset = load_dataset(cfg)
    run_dir = make_run_dir(args.out, train_cfg.seed)
    (run_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return cfg, train_cfg, dataset, run_dir


def _ablation_from(cfg: dict, model_flag: str | None) -> AblationSpec:
    if model_flag:
        return AblationSpec.preset(model_flag)
    return AblationSpec(**cfg["ablation"])


def cmd_train(args) -> int:
    cfg, train_cfg, dataset, run_dir = _prepare_run(args)
    ablation = _ablation_from(cfg, args.model)
    splits = dataio.monte_carlo_splits(dataset.ids, 1, ratio=cfg["cv"]["ratio"], seed=train_cfg.seed)
    from .train import train_fold

    result = train_fold(dataset, splits[0], train_cfg, ablation)
    write_metrics_csv(run_dir / "metrics.csv", [result])
    ckpt.save_checkpoint(run_dir / "fold_0.ckpt", result.arrays, checkpoint_meta(result, dataset))
    final = result.final_c_index
    print(f"run dir: {run_dir}")
    print(f"final c-index: {final if final is not None else 'undefined'}")
    if result.best_c_index is not None:
        print(f"best c-index: {result.best_c_index} at epoch {result.best_epoch} (last epoch is the checkpoint)")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg, train_cfg, dataset, run_dir = _prepare_run(args)
    ablation = _ablation_from(cfg, args.model)
    jobs = args.jobs if args.jobs is not None else cfg["cv"]["jobs"]
    cv = cross_validate(
        dataset, cfg["cv"]["folds"], train_cfg, ablation, ratio=cfg["cv"]["ratio"], jobs=jobs
    )
    write_metrics_csv(run_dir / "metrics.csv", cv.folds)
    for fr in cv.folds:
        ckpt.save_checkpoint(run_dir / f"fold_{fr.fold}.ckpt", fr.arrays, checkpoint_meta(fr, dataset))
    print(f"run dir: {run_dir}")
    if cv.errors:
        for fold, message in sorted(cv.errors.items()):
            print(f"fold {fold} FAILED: {message}", file=sys.stderr)
    print(f"c-index: {cv.c_index_mean} +/- {cv.c_index_std}")
    print(f"auc:     {cv.auc_mean} +/- {cv.auc_std}")
    return EXIT_RUNTIME if cv.errors else EXIT_OK


def cmd_ablate(args) -> int:
    cfg, train_cfg, dataset, run_dir = _prepare_run(args)
    jobs = args.jobs if args.jobs is not None else cfg["cv"]["jobs"]
    rows = run_ablation_matrix(
        dataset, train_cfg, k=cfg["cv"]["folds"], ratio=cfg["cv"]["ratio"], jobs=jobs
    )
    write_ablation_csv(run_dir / "ablation.csv", rows)
    print(f"run dir: {run_dir}")
    print(f"{'model':<6}{'c-index':>22}{'auc':>22}")
    failed = False
    for row in rows:
        cv = row.cv
        failed = failed or bool(cv.errors)
        ci = "undefined" if cv.c_index_mean is None else f"{cv.c_index_mean:.4f} +/- {cv.c_index_std:.4f}"
        auc = "undefined" if cv.auc_mean is None else f"{cv.auc_mean:.4f} +/- {cv.auc_std:.4f}"
        print(f"{row.model:<6}{ci:>22}{auc:>22}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_eval(args) -> int:
    arrays, meta = ckpt.load_checkpoint(args.checkpoint)
    spec = ModelSpec.from_dict(meta["model"])
    cmap_path = args.category_map or str(Path(args.manifest).parent / "category_map.json")
    cmap = dataio.read_category_map(cmap_path)
    dataset = dataio.load_samples(args.manifest, cmap)
    if dataset.d_in != spec.d_in:
        print(
            f"error: manifest bag width d_in={dataset.d_in} does not match checkpoint d_in={spec.d_in}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if tuple(dataset.gene_lengths) != tuple(spec.gene_lengths):
        print(
            f"error: genomic category lengths {dataset.gene_lengths} do not match "
            f"checkpoint {list(spec.gene_lengths)}",
            file=sys.stderr,
        )
        return EXIT_USAGE

    risks = [predict(s, arrays, spec).risk for s in dataset.samples]
    labels = [survival.SurvivalLabel(s.t, s.event) for s in dataset.samples]
    ci = survival.concordance_index(risks, labels)
    auc = survival.binary_auc(risks, labels, meta["auc_horizon"])
    print(f"samples: {len(labels)}")
    print(f"c-index: {ci if ci is not None else 'undefined'}")
    print(f"auc(horizon={meta['auc_horizon']:.4g} months): {auc if auc is not None else 'undefined'}")

    low_idx, high_idx = survival.stratify(risks, labels)
    low = [labels[i] for i in low_idx]
    high = [labels[i] for i in high_idx]
    out_prefix = Path(args.km_out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    for name, group in (("low", low), ("high", high)):
        path = out_prefix.parent / f"{out_prefix.name}_{name}.csv"
        with open(path, "w", newline="") as fh:
            fh.write("time,survival\n")
            for t, s in survival.kaplan_meier(group):
                fh.write(f"{t!r},{s!r}\n")
    result = survival.logrank_test(low, high)
    report = {
        "n_low": len(low),
        "n_high": len(high),
        "statistic": result.statistic,
        "p_value": result.p_value,
        "defined": result.defined,
    }
    (out_prefix.parent / f"{out_prefix.name}_logrank.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    if result.defined:
        print(f"log-rank: statistic={result.statistic:.6g} p={result.p_value:.6g}")
    else:
        print("log-rank: undefined (no events)")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.inject:
        verify.inject_fault(args.inject)
    results = verify.run_checks()
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<34} {detail}")
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgct", description="Multimodal survival prediction with mutual-guided cross-attention."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--d-in", dest="d_in", type=int, default=16, help="patch embedding width")
    p.add_argument("--censor-rate", type=float, default=dataio.RiskModel().censor_rate)
    p.add_argument("--categories", type=int, default=6, help="genomic category count")
    p.set_defaults(fn=cmd_synth)

    for name, fn, extra in (
        ("train", cmd_train, True),
        ("cv", cmd_cv, True),
        ("ablate", cmd_ablate, False),
    ):
        p = sub.add_parser(name, help=f"{name} using a JSON config")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="runs", help="base directory for run outputs")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        if extra:
            p.add_argument("--model", default=None, help="ablation preset A..E")
        if name in ("cv", "ablate"):
            p.add_argument("--jobs", type=int, default=None, help="parallel fold workers")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--km-out", dest="km_out", required=True, help="prefix for KM/log-rank outputs")
    p.add_argument("--category-map", dest="category_map", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the numerical invariant suite")
    p.add_argument("--inject", default=None, help="inject a known fault (test fixture)")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, dataio.IngestError, dataio.FormatError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
