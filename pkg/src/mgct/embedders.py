"""Per-modality embedders mapping raw inputs to d-wide token columns.

Genomics: one independent two-hidden-layer network per functional category
(ELU activations, alpha dropout after each hidden layer), projected to d and
assembled column-wise into a (d, S) token matrix. Histology: a single affine
map applied to each patch column, giving (d, N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk

SNN_HIDDEN_DEFAULT = 256  # two hidden layers of this width per category
DROPOUT_DEFAULT = 0.25


def xavier_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _leaf(arrays: dict, name: str, tape: nk.Tape | None) -> nk.Tensor:
    arr = arrays[name]
    if isinstance(arr, nk.Tensor):  # caller already registered the leaves
        return arr
    return tape.leaf(arr) if tape is not None else nk.Tensor(arr)


def affine(w: nk.Tensor, x: nk.Tensor, b: nk.Tensor) -> nk.Tensor:
    """w @ x + b with the bias column broadcast across x's columns."""
    return nk.add(nk.matmul(w, x), b)


@dataclass
class SnnCategoryParams:
    w1: nk.Tensor  # (hidden, len_s)
    b1: nk.Tensor  # (hidden, 1)
    w2: nk.Tensor  # (hidden, hidden)
    b2: nk.Tensor  # (hidden, 1)
    w_out: nk.Tensor  # (d, hidden)
    b_out: nk.Tensor  # (d, 1)


@dataclass
class SnnParams:
    per_category: list[SnnCategoryParams]


@dataclass
class PatchProjParams:
    weight: nk.Tensor  # (d, d_in)
    bias: nk.Tensor  # (d, 1)


def init_snn_arrays(
    gene_lengths: list[int], d: int, hidden: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for s, length in enumerate(gene_lengths):
        arrays[f"snn.c{s}.w1"] = xavier_uniform(hidden, length, rng)
        arrays[f"snn.c{s}.b1"] = np.zeros((hidden, 1))
        arrays[f"snn.c{s}.w2"] = xavier_uniform(hidden, hidden, rng)
        arrays[f"snn.c{s}.b2"] = np.zeros((hidden, 1))
        arrays[f"snn.c{s}.w_out"] = xavier_uniform(d, hidden, rng)
        arrays[f"snn.c{s}.b_out"] = np.zeros((d, 1))
    return arrays


def bind_snn(arrays: dict[str, np.ndarray], n_categories: int, tape: nk.Tape | None) -> SnnParams:
    cats = []
    for s in range(n_categories):
        cats.append(
            SnnCategoryParams(
                w1=_leaf(arrays, f"snn.c{s}.w1", tape),
                b1=_leaf(arrays, f"snn.c{s}.b1", tape),
                w2=_leaf(arrays, f"snn.c{s}.w2", tape),
                b2=_leaf(arrays, f"snn.c{s}.b2", tape),
                w_out=_leaf(arrays, f"snn.c{s}.w_out", tape),
                b_out=_leaf(arrays, f"snn.c{s}.b_out", tape),
            )
        )
    return SnnParams(per_category=cats)


def init_patch_proj_arrays(d_in: int, d: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {"patch.w": xavier_uniform(d, d_in, rng), "patch.b": np.zeros((d, 1))}


def bind_patch_proj(arrays: dict[str, np.ndarray], tape: nk.Tape | None) -> PatchProjParams:
    return PatchProjParams(weight=_leaf(arrays, "patch.w", tape), bias=_leaf(arrays, "patch.b", tape))


def embed_genomics(
    raw: list,
    params: SnnParams,
    training: bool = False,
    dropout_p: float = 0.0,
    dropout_key: tuple[int, int] | None = None,
) -> nk.Tensor:
    """Embed S raw category vectors into a (d, S) token matrix.

    Column s is a function of category s alone. ``dropout_key`` is the
    (seed, step) pair that makes training-mode dropout reproducible; the
    per-layer component of the counter key is derived internally.
    """
    if len(raw) != len(params.per_category):
        raise nk.ShapeError(
            f"got {len(raw)} category vectors for {len(params.per_category)} category networks"
        )
    if training and dropout_p > 0.0 and dropout_key is None:
        raise ValueError("training-mode dropout needs a (seed, step) key")
    seed, step = dropout_key if dropout_key is not None else (0, 0)
    columns = None
    for s, (vec, p) in enumerate(zip(raw, params.per_category)):
        x = vec if isinstance(vec, nk.Tensor) else nk.Tensor(np.asarray(vec, dtype=np.float64).reshape(-1, 1))
        if x.rows != p.w1.cols:
            raise nk.ShapeError(
                f"category {s}: vector length {x.rows} does not match weights ({p.w1.cols})"
            )
        a = nk.elu(affine(p.w1, x, p.b1))
        a = nk.alpha_dropout(a, dropout_p, (seed, 2 * s, step), training)
        a = nk.elu(affine(p.w2, a, p.b2))
        a = nk.alpha_dropout(a, dropout_p, (seed, 2 * s + 1, step), training)
        col = affine(p.w_out, a, p.b_out)
        columns = col if columns is None else nk.concat(columns, col, "cols")
    return columns


def embed_patches(patches, params: PatchProjParams) -> nk.Tensor:
    """Project a (d_in, N) bag to (d, N), column by column."""
    x = patches if isinstance(patches, nk.Tensor) else nk.Tensor(patches)
    if x.rows != params.weight.cols:
        raise nk.ShapeError(
            f"bag width {x.rows} does not match projection input width {params.weight.cols}"
        )
    return affine(params.weight, x, params.bias)
