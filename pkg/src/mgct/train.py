"""Optimization loop, Monte Carlo cross-validation, and the ablation matrix.

Batch size is fixed at 1 (bags vary in size); gradients are averaged over an
accumulation window before each Adam step, so the learning rate behaves like
an effective batch of ``accumulation`` samples. Everything is deterministic
given (seed, config, dataset).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from . import survival
from .dataio import BagSample, Dataset, FoldSplit, monte_carlo_splits
from .embedders import DROPOUT_DEFAULT, SNN_HIDDEN_DEFAULT
from .mgct_core import AblationSpec, FusionConfig, ModelSpec, forward_logits, init_model_arrays

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    accumulation: int = 32
    batch_size: int = 1  # fixed; bags have varying sizes
    seed: int = 0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    snn_hidden: int = SNN_HIDDEN_DEFAULT
    dropout: float = DROPOUT_DEFAULT
    loss_alpha: float = 0.0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.accumulation < 1:
            raise ValueError("accumulation must be >= 1")
        if self.batch_size != 1:
            raise ValueError("batch size is fixed at 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        self.fusion.validate()


@dataclass
class AdamState:
    step_count: int = 0
    skipped: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> dict[str, np.ndarray]:
    """One Adam update with L2 decay folded into the gradient (lambda * theta).

    Returns fresh parameter arrays; moments live in ``state``. A non-finite
    gradient skips the whole step (logged), leaving params and state untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("skipping update %d: non-finite gradient in %s", state.step_count + 1, name)
            return params
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    out: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = grads[name] + weight_decay * theta
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---------------------------------------------------------------------------
# single-sample passes


def sample_loss_and_grads(
    sample: BagSample,
    arrays: dict[str, np.ndarray],
    spec: ModelSpec,
    label: survival.SurvivalLabel,
    dropout: float = 0.0,
    dropout_key: tuple[int, int] | None = None,
    loss_alpha: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward + backward for one sample; returns (loss, per-parameter grads)."""
    tape = nk.Tape()
    leaves = {name: tape.leaf(arr) for name, arr in arrays.items()}
    logits, _ = forward_logits(
        sample.patches,
        sample.genomic,
        leaves,
        spec,
        tape=tape,
        training=True,
        dropout_p=dropout,
        dropout_key=dropout_key,
    )
    loss = survival.nll_loss(nk.sigmoid(logits), label, alpha=loss_alpha)
    grads = nk.backward(loss, tape)
    return loss.item(), {name: grads[leaf] for name, leaf in leaves.items()}


def predict(sample: BagSample, arrays: dict[str, np.ndarray], spec: ModelSpec) -> survival.SurvivalPrediction:
    """Evaluation-mode prediction (no tape, no dropout)."""
    logits, _ = forward_logits(sample.patches, sample.genomic, arrays, spec)
    hazards = 1.0 / (1.0 + np.exp(-np.clip(logits.data, -500, 500)))
    return survival.SurvivalPrediction.from_hazards(hazards.ravel())


# ---------------------------------------------------------------------------
# fold training


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    c_index: float | None  # None when no validation pair is comparable
    auc: float | None


@dataclass
class FoldResult:
    fold: int
    arrays: dict[str, np.ndarray]
    spec: ModelSpec
    history: list[EpochMetrics]
    bin_edges: np.ndarray
    auc_horizon: float
    best_epoch: int | None
    best_c_index: float | None

    @property
    def final_c_index(self) -> float | None:
        return self.history[-1].c_index if self.history else None

    @property
    def final_auc(self) -> float | None:
        return self.history[-1].auc if self.history else None


def _median_uncensored_time(samples: list[BagSample]) -> float:
    times = [s.t for s in samples if s.event == 1]
    if not times:
        times = [s.t for s in samples]
    return float(np.median(times))


def evaluate(
    samples: list[BagSample],
    arrays: dict[str, np.ndarray],
    spec: ModelSpec,
    horizon: float,
) -> tuple[list[float], float | None, float | None]:
    """Risks plus C-index and fixed-horizon AUC for a sample list."""
    risks = [predict(s, arrays, spec).risk for s in samples]
    labels = [survival.SurvivalLabel(s.t, s.event) for s in samples]
    return risks, survival.concordance_index(risks, labels), survival.binary_auc(risks, labels, horizon)


def train_fold(
    dataset: Dataset,
    split: FoldSplit,
    config: TrainConfig,
    ablation: AblationSpec = AblationSpec(),
) -> FoldResult:
    """Train one Monte Carlo fold and score the held-out samples per epoch.

    Time bins and the AUC horizon are derived from training-fold labels only.
    """
    config.validate()
    train_samples = dataset.subset(split.train_ids)
    val_samples = dataset.subset(split.val_ids)
    if not train_samples:
        raise ValueError(f"fold {split.fold}: empty training set")

    train_labels = [survival.SurvivalLabel(s.t, s.event) for s in train_samples]
    edges = survival.time_bin_edges(train_labels, config.fusion.bins)
    horizon = _median_uncensored_time(train_samples)
    label_of = {
        s.sample_id: survival.SurvivalLabel(s.t, s.event, bin=survival.assign_bin(s.t, edges))
        for s in train_samples
    }

    spec = ModelSpec(
        d_in=dataset.d_in,
        gene_lengths=tuple(dataset.gene_lengths),
        snn_hidden=config.snn_hidden,
        fusion=config.fusion,
        ablation=ablation,
    )
    arrays = init_model_arrays(spec, seed=[config.seed, split.fold])
    state = AdamState()
    history: list[EpochMetrics] = []
    dropout_step = 0

    for epoch in range(config.epochs):
        order_rng = np.random.default_rng([config.seed, split.fold, epoch])
        order = order_rng.permutation(len(train_samples))
        pending: dict[str, np.ndarray] | None = None
        pending_count = 0
        loss_sum = 0.0

        def flush():
            nonlocal arrays, pending, pending_count
            if pending_count == 0:
                return
            mean_grads = {n: g / pending_count for n, g in pending.items()}
            arrays = adam_step(
                arrays,
                mean_grads,
                state,
                lr=config.learning_rate,
                weight_decay=config.weight_decay,
            )
            pending = None
            pending_count = 0

        for idx in order:
            s = train_samples[idx]
            loss, grads = sample_loss_and_grads(
                s,
                arrays,
                spec,
                label_of[s.sample_id],
                dropout=config.dropout,
                dropout_key=(config.seed, dropout_step),
                loss_alpha=config.loss_alpha,
            )
            dropout_step += 1
            loss_sum += loss
            if pending is None:
                pending = grads
            else:
                for n in pending:
                    pending[n] = pending[n] + grads[n]
            pending_count += 1
            if pending_count == config.accumulation:
                flush()
        flush()

        if val_samples:
            _, ci, auc = evaluate(val_samples, arrays, spec, horizon)
        else:
            ci, auc = None, None
        history.append(EpochMetrics(epoch=epoch, loss=loss_sum / len(train_samples), c_index=ci, auc=auc))

    scored = [(em.c_index, em.epoch) for em in history if em.c_index is not None]
    best_c, best_epoch = max(scored) if scored else (None, None)
    return FoldResult(
        fold=split.fold,
        arrays=arrays,
        spec=spec,
        history=history,
        bin_edges=edges,
        auc_horizon=horizon,
        best_epoch=best_epoch,
        best_c_index=best_c,
    )


# ---------------------------------------------------------------------------
# cross-validation and the ablation matrix


@dataclass
class CrossValidationResult:
    folds: list[FoldResult]
    errors: dict[int, str]
    c_index_mean: float | None
    c_index_std: float | None
    auc_mean: float | None
    auc_std: float | None


def _aggregate(values: list[float | None]) -> tuple[float | None, float | None]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None, None
    return float(np.mean(defined)), float(np.std(defined))  # population std


def _run_fold_task(args) -> FoldResult:
    dataset, split, config, ablation = args
    return train_fold(dataset, split, config, ablation)


def cross_validate(
    dataset: Dataset,
    k: int,
    config: TrainConfig,
    ablation: AblationSpec = AblationSpec(),
    ratio: float = 0.2,
    jobs: int = 1,
) -> CrossValidationResult:
    """Run ``train_fold`` over k Monte Carlo splits and aggregate final metrics.

    A fold that raises is recorded in ``errors`` (never silently dropped) and
    excluded from the aggregates.
    """
    splits = monte_carlo_splits(dataset.ids, k, ratio=ratio, seed=config.seed)
    results: list[FoldResult] = []
    errors: dict[int, str] = {}
    if jobs > 1:
        tasks = [(dataset, sp, config, ablation) for sp in splits]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for sp, outcome in zip(splits, pool.map(_run_fold_task, tasks)):
                results.append(outcome)
    else:
        for sp in splits:
            try:
                results.append(train_fold(dataset, sp, config, ablation))
            except Exception as exc:  # noqa: BLE001 - fold failures are reported
                log.warning("fold %d failed: %s", sp.fold, exc)
                errors[sp.fold] = str(exc)
    ci_mean, ci_std = _aggregate([r.final_c_index for r in results])
    auc_mean, auc_std = _aggregate([r.final_auc for r in results])
    return CrossValidationResult(
        folds=results,
        errors=errors,
        c_index_mean=ci_mean,
        c_index_std=ci_std,
        auc_mean=auc_mean,
        auc_std=auc_std,
    )


@dataclass
class AblationRow:
    model: str
    ablation: AblationSpec
    cv: CrossValidationResult


def run_ablation_matrix(
    dataset: Dataset, config: TrainConfig, k: int = 5, ratio: float = 0.2, jobs: int = 1
) -> list[AblationRow]:
    """Cross-validate every preset A..E on the same splits."""
    rows = []
    for name in AblationSpec.preset_names():
        ablation = AblationSpec.preset(name)
        cv = cross_validate(dataset, k, config, ablation, ratio=ratio, jobs=jobs)
        rows.append(AblationRow(model=name, ablation=ablation, cv=cv))
    return rows


def parameter_count(arrays: dict[str, np.ndarray]) -> int:
    return int(sum(a.size for a in arrays.values()))


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(value: float | None) -> str:
    return "nan" if value is None else repr(float(value))


def write_metrics_csv(path, folds: list[FoldResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "fold", "c_index", "auc", "loss"])
        for fr in folds:
            for em in fr.history:
                writer.writerow([em.epoch, fr.fold, _fmt(em.c_index), _fmt(em.auc), _fmt(em.loss)])


def write_ablation_csv(path, rows: list[AblationRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "model",
                "deep_fusion",
                "mgca",
                "gap",
                "feedforward",
                "c_index_mean",
                "c_index_std",
                "auc_mean",
                "auc_std",
            ]
        )
        for row in rows:
            ab = row.ablation
            writer.writerow(
                [
                    row.model,
                    int(ab.deep_fusion),
                    int(ab.mgca),
                    int(ab.gap),
                    int(ab.feedforward),
                    _fmt(row.cv.c_index_mean),
                    _fmt(row.cv.c_index_std),
                    _fmt(row.cv.auc_mean),
                    _fmt(row.cv.auc_std),
                ]
            )
