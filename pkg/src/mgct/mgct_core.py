"""Mutual-guided cross-modality fusion of histology and genomic tokens.

One fusion layer runs cross-attention (queries from one modality, keys and
values from the other), optionally pools its tokens down to a single bag
embedding with a gated tanh/sigmoid scorer, and passes the result through a
two-linear-layer feed-forward block back to width d. Two directional stacks
per stage, two stages:

    stage 1: (query=G, context=H) and (query=H, context=G), pooled, then
             joined token-wise into a width-d pair R_F1;
    stage 2: (query=R_F1, context=H) and (query=H, context=R_F1), pooled,
             joined feature-wise into the final (2d, 1) embedding.

Within a stack, layer s > 1 consumes layer s-1's output as its query with
the same context; only the last layer of a stack pools, so intermediate
layers preserve their token count. No positional information exists
anywhere, which makes the pipeline permutation-invariant over patches.

Ablation toggles degrade the pipeline toward a concat baseline: without
attention a layer passes its query tokens through unchanged, without gated
pooling the stage end takes a uniform mean, without the feed-forward block
the pooled token is emitted directly, and without deep fusion stage 2 is
dropped and the stage-1 pair is flattened feature-wise. With every toggle
off the model reduces to mean-pooled genomic and histology embeddings
concatenated into the classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numkit as nk
from .embedders import (
    PatchProjParams,
    SnnParams,
    affine,
    bind_patch_proj,
    bind_snn,
    embed_genomics,
    embed_patches,
    init_patch_proj_arrays,
    init_snn_arrays,
    xavier_uniform,
    _leaf,
)


@dataclass(frozen=True)
class FusionConfig:
    s1: int = 1  # fusion layers per direction, stage 1
    s2: int = 2  # fusion layers per direction, stage 2
    d: int = 64  # token width
    heads: int = 1
    d_attn: int = 64  # gated-pooling scorer width
    d_ff: int = 128  # feed-forward hidden width
    bins: int = 4  # discrete hazard bins
    residual: bool = False  # optional skip connections (off: plain stack)

    def validate(self) -> None:
        if self.s1 < 1 or self.s2 < 1:
            raise ValueError("both fusion stages need at least one layer")
        if self.heads < 1 or self.d % self.heads != 0:
            raise ValueError(f"token width {self.d} must divide into {self.heads} heads")
        if self.d_attn < 1 or self.d_ff < 1:
            raise ValueError("d_attn and d_ff must be positive")
        if self.bins < 2:
            raise ValueError("need at least 2 hazard bins")


@dataclass(frozen=True)
class AblationSpec:
    deep_fusion: bool = True
    mgca: bool = True
    gap: bool = True
    feedforward: bool = True

    # cumulative presets, weakest model first
    _PRESETS = {
        "A": (False, False, False, False),
        "B": (True, False, False, False),
        "C": (True, True, False, False),
        "D": (True, True, True, False),
        "E": (True, True, True, True),
    }

    @classmethod
    def preset(cls, name: str) -> "AblationSpec":
        try:
            flags = cls._PRESETS[name.upper()]
        except KeyError:
            raise ValueError(f"unknown model preset {name!r}; expected one of A..E") from None
        return cls(*flags)

    @classmethod
    def preset_names(cls) -> list[str]:
        return list(cls._PRESETS)


FULL_MODEL = AblationSpec()


@dataclass
class MgcaParams:
    w_q: nk.Tensor  # (d, d)
    w_k: nk.Tensor  # (d, d)
    w_v: nk.Tensor  # (d, d)
    heads: int = 1


@dataclass
class GatedPoolParams:
    v: nk.Tensor  # (d_attn, d), tanh branch
    u: nk.Tensor  # (d_attn, d), sigmoid branch
    w: nk.Tensor  # (1, d_attn), scorer


@dataclass
class MlpParams:
    w_in: nk.Tensor  # (d_ff, d)
    b_in: nk.Tensor
    w_out: nk.Tensor  # (d, d_ff), projection back to token width
    b_out: nk.Tensor


@dataclass
class MgctLayerParams:
    mgca: MgcaParams | None
    pool: GatedPoolParams | None  # only stage-final layers pool
    mlp: MlpParams | None


@dataclass
class HeadParams:
    w: nk.Tensor  # (bins, 2d)
    b: nk.Tensor  # (bins, 1)


@dataclass
class FusionParams:
    stage1_gh: list[MgctLayerParams]  # query = genomic tokens
    stage1_hg: list[MgctLayerParams]  # query = patch tokens
    stage2_fh: list[MgctLayerParams]  # query = stage-1 pair
    stage2_hf: list[MgctLayerParams]  # query = patch tokens


@dataclass
class MgctParams:
    snn: SnnParams
    patch: PatchProjParams
    fusion: FusionParams
    head: HeadParams


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to lay out (and re-create) the trainable arrays."""

    d_in: int
    gene_lengths: tuple[int, ...]
    snn_hidden: int = 256
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "gene_lengths": list(self.gene_lengths),
            "snn_hidden": self.snn_hidden,
            "fusion": asdict(self.fusion),
            "ablation": asdict(self.ablation),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return cls(
            d_in=int(doc["d_in"]),
            gene_lengths=tuple(int(x) for x in doc["gene_lengths"]),
            snn_hidden=int(doc["snn_hidden"]),
            fusion=FusionConfig(**doc["fusion"]),
            ablation=AblationSpec(**doc["ablation"]),
        )


# ---------------------------------------------------------------------------
# attention and pooling


def mgca(
    query_tokens: nk.Tensor,
    context_tokens: nk.Tensor,
    params: MgcaParams,
    attn_sink: list | None = None,
) -> nk.Tensor:
    """Cross-modality attention: (d, m) queries against (d, n) context.

    Scaled dot-product attention per head; the output keeps the query token
    count. ``attn_sink`` collects each head's (m, n) weight rows.
    """
    if query_tokens.cols < 1 or context_tokens.cols < 1:
        raise ValueError("attention needs non-empty query and context token sets")
    q = nk.matmul(params.w_q, query_tokens)
    k = nk.matmul(params.w_k, context_tokens)
    v = nk.matmul(params.w_v, context_tokens)
    d = q.rows
    h = params.heads
    if d % h != 0:
        raise nk.ShapeError(f"width {d} not divisible by {h} heads")
    d_k = d // h
    if h == 1:
        qs, ks, vs = [q], [k], [v]
    else:
        sizes = [d_k] * h
        qs = nk.split(q, sizes, "rows")
        ks = nk.split(k, sizes, "rows")
        vs = nk.split(v, sizes, "rows")
    out = None
    inv = 1.0 / math.sqrt(d_k)
    for qi, ki, vi in zip(qs, ks, vs):
        weights = nk.softmax_rows(nk.scale(nk.matmul(nk.transpose(qi), ki), inv))  # (m, n)
        if attn_sink is not None:
            attn_sink.append(weights.data)
        head = nk.matmul(vi, nk.transpose(weights))  # (d_k, m)
        out = head if out is None else nk.concat(out, head, "rows")
    return out


def gated_attention_pool(
    tokens: nk.Tensor, params: GatedPoolParams
) -> tuple[nk.Tensor, nk.Tensor]:
    """Pool (d, n) tokens to (d, 1) with tanh/sigmoid-gated softmax weights.

    Returns (pooled, alpha) where alpha is the (1, n) simplex weighting.
    """
    if tokens.cols < 1:
        raise ValueError("cannot pool an empty token set")
    gates = nk.mul(nk.tanh(nk.matmul(params.v, tokens)), nk.sigmoid(nk.matmul(params.u, tokens)))
    alpha = nk.softmax_rows(nk.matmul(params.w, gates))  # (1, n)
    pooled = nk.matmul(tokens, nk.transpose(alpha))  # (d, 1)
    return pooled, alpha


def mean_pool(tokens: nk.Tensor) -> tuple[nk.Tensor, nk.Tensor]:
    """Uniform-weight pooling; the ablation stand-in for the gated scorer."""
    n = tokens.cols
    alpha = nk.Tensor(np.full((1, n), 1.0 / n))
    return nk.matmul(tokens, nk.transpose(alpha)), alpha


# ---------------------------------------------------------------------------
# fusion layer and pipeline


def mgct_layer(
    query_tokens: nk.Tensor,
    context_tokens: nk.Tensor,
    params: MgctLayerParams,
    stage_final: bool,
    ablation: AblationSpec = FULL_MODEL,
    residual: bool = False,
    attn_sink: list | None = None,
    alpha_sink: list | None = None,
) -> nk.Tensor:
    """One fusion layer: attention, stage-final pooling, feed-forward."""
    if ablation.mgca:
        r = mgca(query_tokens, context_tokens, params.mgca, attn_sink=attn_sink)
        if residual:
            r = nk.add(r, query_tokens)
    else:
        r = query_tokens
    if stage_final:
        if ablation.gap:
            r, alpha = gated_attention_pool(r, params.pool)
        else:
            r, alpha = mean_pool(r)
        if alpha_sink is not None:
            alpha_sink.append(alpha.data)
    if ablation.feedforward:
        hidden = nk.relu(affine(params.mlp.w_in, r, params.mlp.b_in))
        out = affine(params.mlp.w_out, hidden, params.mlp.b_out)
        if residual:
            out = nk.add(out, r)
        return out
    return r


def _run_stack(
    query: nk.Tensor,
    context: nk.Tensor,
    layers: list[MgctLayerParams],
    ablation: AblationSpec,
    residual: bool,
    attn_sink: list | None,
    alpha_sink: list | None,
) -> nk.Tensor:
    x = query
    last = len(layers) - 1
    for i, lp in enumerate(layers):
        x = mgct_layer(
            x,
            context,
            lp,
            stage_final=(i == last),
            ablation=ablation,
            residual=residual,
            attn_sink=attn_sink,
            alpha_sink=alpha_sink,
        )
    return x


def fuse(
    patch_tokens: nk.Tensor,
    genomic_tokens: nk.Tensor,
    params: FusionParams,
    config: FusionConfig,
    ablation: AblationSpec = FULL_MODEL,
    attn_sink: list | None = None,
    alpha_sink: list | None = None,
) -> nk.Tensor:
    """Two-stage bidirectional fusion of (d, N) patch and (d, S) genomic tokens
    into the final (2d, 1) multimodal embedding."""
    kw = dict(
        ablation=ablation, residual=config.residual, attn_sink=attn_sink, alpha_sink=alpha_sink
    )
    gh = _run_stack(genomic_tokens, patch_tokens, params.stage1_gh, **kw)  # (d, 1)
    hg = _run_stack(patch_tokens, genomic_tokens, params.stage1_hg, **kw)  # (d, 1)
    if not ablation.deep_fusion:
        return nk.concat(gh, hg, "rows")
    pair = nk.concat(gh, hg, "cols")  # (d, 2): the stage-1 token pair
    fh = _run_stack(pair, patch_tokens, params.stage2_fh, **kw)
    hf = _run_stack(patch_tokens, pair, params.stage2_hf, **kw)
    return nk.concat(fh, hf, "rows")


def classify(r_final: nk.Tensor, head: HeadParams) -> nk.Tensor:
    """Affine map from the fused (2d, 1) embedding to per-bin hazard logits."""
    if r_final.rows != head.w.cols or r_final.cols != 1:
        raise nk.ShapeError(
            f"classifier expects ({head.w.cols}, 1) input, got {r_final.shape}"
        )
    return affine(head.w, r_final, head.b)


# ---------------------------------------------------------------------------
# parameter layout


def _layer_names(config: FusionConfig, ablation: AblationSpec):
    """Yield (prefix, stage_final) for every fusion layer the model owns."""
    stacks = [("s1.gh", config.s1), ("s1.hg", config.s1)]
    if ablation.deep_fusion:
        stacks += [("s2.fh", config.s2), ("s2.hf", config.s2)]
    for stack, depth in stacks:
        for i in range(depth):
            yield f"{stack}.{i}", i == depth - 1


def init_model_arrays(spec: ModelSpec, seed, head_init: str = "zeros") -> dict[str, np.ndarray]:
    """Freshly initialized trainable arrays: Xavier-uniform weights, zero biases.

    The classifier head starts at zero by default so the initial risk score
    carries no random-readout noise; at the training budget used here (batch
    1, 32-step accumulation, small learning rate) a randomly initialized head
    drowns the learned signal and the ranking never recovers. Pass
    ``head_init="xavier"`` to exercise every gradient path from a generic
    position (e.g. for gradient checking).
    """
    spec.fusion.validate()
    rng = np.random.default_rng(seed)
    d = spec.fusion.d
    arrays: dict[str, np.ndarray] = {}
    arrays.update(init_snn_arrays(list(spec.gene_lengths), d, spec.snn_hidden, rng))
    arrays.update(init_patch_proj_arrays(spec.d_in, d, rng))
    for prefix, stage_final in _layer_names(spec.fusion, spec.ablation):
        if spec.ablation.mgca:
            arrays[f"{prefix}.attn.wq"] = xavier_uniform(d, d, rng)
            arrays[f"{prefix}.attn.wk"] = xavier_uniform(d, d, rng)
            arrays[f"{prefix}.attn.wv"] = xavier_uniform(d, d, rng)
        if stage_final and spec.ablation.gap:
            arrays[f"{prefix}.pool.v"] = xavier_uniform(spec.fusion.d_attn, d, rng)
            arrays[f"{prefix}.pool.u"] = xavier_uniform(spec.fusion.d_attn, d, rng)
            arrays[f"{prefix}.pool.w"] = xavier_uniform(1, spec.fusion.d_attn, rng)
        if spec.ablation.feedforward:
            arrays[f"{prefix}.mlp.w_in"] = xavier_uniform(spec.fusion.d_ff, d, rng)
            arrays[f"{prefix}.mlp.b_in"] = np.zeros((spec.fusion.d_ff, 1))
            arrays[f"{prefix}.mlp.w_out"] = xavier_uniform(d, spec.fusion.d_ff, rng)
            arrays[f"{prefix}.mlp.b_out"] = np.zeros((d, 1))
    if head_init == "xavier":
        arrays["head.w"] = xavier_uniform(spec.fusion.bins, 2 * d, rng)
    elif head_init == "zeros":
        arrays["head.w"] = np.zeros((spec.fusion.bins, 2 * d))
    else:
        raise ValueError(f"unknown head_init {head_init!r}")
    arrays["head.b"] = np.zeros((spec.fusion.bins, 1))
    return arrays


def _bind_layer(
    arrays: dict[str, np.ndarray],
    prefix: str,
    stage_final: bool,
    spec: ModelSpec,
    tape: nk.Tape | None,
) -> MgctLayerParams:
    attn = None
    if spec.ablation.mgca:
        attn = MgcaParams(
            w_q=_leaf(arrays, f"{prefix}.attn.wq", tape),
            w_k=_leaf(arrays, f"{prefix}.attn.wk", tape),
            w_v=_leaf(arrays, f"{prefix}.attn.wv", tape),
            heads=spec.fusion.heads,
        )
    pool = None
    if stage_final and spec.ablation.gap:
        pool = GatedPoolParams(
            v=_leaf(arrays, f"{prefix}.pool.v", tape),
            u=_leaf(arrays, f"{prefix}.pool.u", tape),
            w=_leaf(arrays, f"{prefix}.pool.w", tape),
        )
    mlp = None
    if spec.ablation.feedforward:
        mlp = MlpParams(
            w_in=_leaf(arrays, f"{prefix}.mlp.w_in", tape),
            b_in=_leaf(arrays, f"{prefix}.mlp.b_in", tape),
            w_out=_leaf(arrays, f"{prefix}.mlp.w_out", tape),
            b_out=_leaf(arrays, f"{prefix}.mlp.b_out", tape),
        )
    return MgctLayerParams(mgca=attn, pool=pool, mlp=mlp)


def bind_model(
    arrays: dict[str, np.ndarray], spec: ModelSpec, tape: nk.Tape | None
) -> MgctParams:
    """Wrap flat arrays into the typed parameter tree, as tape leaves if given."""
    layers = {
        prefix: _bind_layer(arrays, prefix, stage_final, spec, tape)
        for prefix, stage_final in _layer_names(spec.fusion, spec.ablation)
    }

    def stack(name: str, depth: int) -> list[MgctLayerParams]:
        return [layers[f"{name}.{i}"] for i in range(depth)]

    fusion = FusionParams(
        stage1_gh=stack("s1.gh", spec.fusion.s1),
        stage1_hg=stack("s1.hg", spec.fusion.s1),
        stage2_fh=stack("s2.fh", spec.fusion.s2) if spec.ablation.deep_fusion else [],
        stage2_hf=stack("s2.hf", spec.fusion.s2) if spec.ablation.deep_fusion else [],
    )
    return MgctParams(
        snn=bind_snn(arrays, len(spec.gene_lengths), tape),
        patch=bind_patch_proj(arrays, tape),
        fusion=fusion,
        head=HeadParams(w=_leaf(arrays, "head.w", tape), b=_leaf(arrays, "head.b", tape)),
    )


def forward_logits(
    patches: np.ndarray,
    genomic: list[np.ndarray],
    arrays: dict[str, np.ndarray],
    spec: ModelSpec,
    tape: nk.Tape | None = None,
    training: bool = False,
    dropout_p: float = 0.0,
    dropout_key: tuple[int, int] | None = None,
    attn_sink: list | None = None,
    alpha_sink: list | None = None,
) -> tuple[nk.Tensor, MgctParams]:
    """Full pipeline for one sample: embed both modalities, fuse, classify.

    Returns (hazard logits as a (bins, 1) tensor, bound parameter tree).
    """
    params = bind_model(arrays, spec, tape)
    g = embed_genomics(
        genomic, params.snn, training=training, dropout_p=dropout_p, dropout_key=dropout_key
    )
    h = embed_patches(patches, params.patch)
    fused = fuse(
        h,
        g,
        params.fusion,
        spec.fusion,
        ablation=spec.ablation,
        attn_sink=attn_sink,
        alpha_sink=alpha_sink,
    )
    return classify(fused, params.head), params
