"""Named numerical invariant checks, runnable as a suite.

Each check returns (passed, detail). The suite backs the ``verify`` CLI
command: gradient agreement against central finite differences, simplex
invariants of attention and pooling weights, permutation invariance of the
fusion pipeline, and layout round-trips. Sizes are kept small so the whole
suite runs in seconds.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numkit as nk
from . import survival
from .gradcheck import finite_difference, max_relative_error, relative_error
from .mgct_core import (
    AblationSpec,
    FusionConfig,
    ModelSpec,
    bind_model,
    forward_logits,
    fuse,
    gated_attention_pool,
    init_model_arrays,
)

GRAD_TOL = 1e-4
SIMPLEX_TOL = 1e-12
PERMUTATION_TOL = 1e-9


def _check_op_gradient(build) -> tuple[bool, str]:
    """``build(tensors) -> scalar tensor`` checked against finite differences."""
    rng = np.random.default_rng(11)
    params = {"x": rng.uniform(-2.0, 2.0, (3, 4)), "y": rng.uniform(-2.0, 2.0, (3, 4))}
    tape = nk.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    loss = build(leaves)
    grads = nk.backward(loss, tape)
    analytic = {k: grads[v] for k, v in leaves.items()}
    numeric = finite_difference(lambda p: build({k: nk.Tensor(v) for k, v in p.items()}).item(), params)
    err, name = max_relative_error(analytic, numeric)
    return err < GRAD_TOL, f"max rel err {err:.3g} ({name})"


def check_matmul_gradient() -> tuple[bool, str]:
    return _check_op_gradient(lambda t: nk.sum_all(nk.matmul(t["x"], nk.transpose(t["y"]))))


def check_softmax_gradient() -> tuple[bool, str]:
    w = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
    return _check_op_gradient(lambda t: nk.sum_all(nk.mul(nk.softmax_rows(t["x"]), nk.Tensor(w))))


def _elementwise_check(kind: str) -> Callable[[], tuple[bool, str]]:
    def check() -> tuple[bool, str]:
        w = np.linspace(0.5, 1.5, 12).reshape(3, 4)
        return _check_op_gradient(
            lambda t: nk.sum_all(nk.mul(nk.elementwise(t["x"], kind), nk.Tensor(w)))
        )

    check.__name__ = f"check_{kind}_gradient"
    return check


check_tanh_gradient = _elementwise_check("tanh")
check_sigmoid_gradient = _elementwise_check("sigmoid")
check_relu_gradient = _elementwise_check("relu")
check_elu_gradient = _elementwise_check("elu")


def check_loss_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    logits = rng.uniform(-1.5, 1.5, (4, 1))
    label = survival.SurvivalLabel(t=10.0, event=1, bin=2)

    def run(p):
        return survival.nll_loss(nk.sigmoid(nk.Tensor(p["logits"])), label)

    tape = nk.Tape()
    leaf = tape.leaf(logits)
    loss = survival.nll_loss(nk.sigmoid(leaf), label)
    grads = nk.backward(loss, tape)
    numeric = finite_difference(lambda p: run(p).item(), {"logits": logits})
    err = relative_error(grads[leaf], numeric["logits"])
    return err < GRAD_TOL, f"max rel err {err:.3g}"


def _tiny_spec(ablation: AblationSpec = AblationSpec()) -> ModelSpec:
    return ModelSpec(
        d_in=5,
        gene_lengths=(3, 2, 4),
        snn_hidden=6,
        fusion=FusionConfig(s1=1, s2=2, d=8, heads=2, d_attn=6, d_ff=12, bins=4),
        ablation=ablation,
    )


def check_model_gradient() -> tuple[bool, str]:
    spec = _tiny_spec()
    arrays = init_model_arrays(spec, seed=3, head_init="xavier")
    rng = np.random.default_rng(8)
    patches = rng.uniform(-2.0, 2.0, (5, 7))
    genomic = [rng.uniform(-2.0, 2.0, n) for n in spec.gene_lengths]
    label = survival.SurvivalLabel(t=8.0, event=1, bin=1)

    def run(p) -> float:
        logits, _ = forward_logits(
            patches, genomic, p, spec, training=True, dropout_p=0.25, dropout_key=(3, 0)
        )
        return survival.nll_loss(nk.sigmoid(logits), label).item()

    tape = nk.Tape()
    leaves = {k: tape.leaf(v) for k, v in arrays.items()}
    logits, _ = forward_logits(
        patches, genomic, leaves, spec, tape=tape, training=True, dropout_p=0.25, dropout_key=(3, 0)
    )
    loss = survival.nll_loss(nk.sigmoid(logits), label)
    grads = nk.backward(loss, tape)
    analytic = {k: grads[v] for k, v in leaves.items()}
    numeric = finite_difference(run, arrays)
    err, name = max_relative_error(analytic, numeric)
    return err < GRAD_TOL, f"max rel err {err:.3g} ({name})"


def check_attention_simplex() -> tuple[bool, str]:
    rng = np.random.default_rng(21)
    spec = _tiny_spec()
    arrays = init_model_arrays(spec, seed=4, head_init="xavier")
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 16))
        patches = rng.uniform(-2.0, 2.0, (5, n))
        genomic = [rng.uniform(-2.0, 2.0, ln) for ln in spec.gene_lengths]
        attn: list[np.ndarray] = []
        alphas: list[np.ndarray] = []
        forward_logits(patches, genomic, arrays, spec, attn_sink=attn, alpha_sink=alphas)
        for w in attn + alphas:
            worst = max(worst, float(np.abs(w.sum(axis=1) - 1.0).max()))
            if w.min() < 0:
                return False, "negative attention weight"
    return worst < SIMPLEX_TOL, f"max row-sum deviation {worst:.3g}"


def check_patch_permutation_invariance() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    spec = _tiny_spec()
    arrays = init_model_arrays(spec, seed=9, head_init="xavier")
    params = bind_model(arrays, spec, None)
    from . import embedders as emb

    patches = rng.uniform(-2.0, 2.0, (5, 9))
    genomic = [rng.uniform(-2.0, 2.0, n) for n in spec.gene_lengths]
    g = emb.embed_genomics(genomic, params.snn)
    base = fuse(emb.embed_patches(patches, params.patch), g, params.fusion, spec.fusion).data
    worst = 0.0
    for _ in range(20):
        perm = rng.permutation(patches.shape[1])
        out = fuse(
            emb.embed_patches(patches[:, perm], params.patch), g, params.fusion, spec.fusion
        ).data
        worst = max(worst, float(np.abs(out - base).max()))
    return worst < PERMUTATION_TOL, f"max deviation {worst:.3g}"


def check_pooling_simplex() -> tuple[bool, str]:
    from .mgct_core import GatedPoolParams

    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(50):
        d, n = int(rng.integers(1, 12)), int(rng.integers(1, 16))
        pool = GatedPoolParams(
            v=nk.Tensor(rng.uniform(-1, 1, (4, d))),
            u=nk.Tensor(rng.uniform(-1, 1, (4, d))),
            w=nk.Tensor(rng.uniform(-1, 1, (1, 4))),
        )
        _, alpha = gated_attention_pool(nk.Tensor(rng.uniform(-2, 2, (d, n))), pool)
        worst = max(worst, abs(float(alpha.data.sum()) - 1.0))
        if alpha.data.min() < 0:
            return False, "negative pooling weight"
    return worst < SIMPLEX_TOL, f"max weight-sum deviation {worst:.3g}"


def check_concat_split_roundtrip() -> tuple[bool, str]:
    rng = np.random.default_rng(29)
    a = rng.uniform(-2, 2, (4, 3))
    b = rng.uniform(-2, 2, (4, 5))
    joined = nk.concat(nk.Tensor(a), nk.Tensor(b), "cols")
    ra, rb = nk.split(joined, [3, 5], "cols")
    ok = np.array_equal(ra.data, a) and np.array_equal(rb.data, b)
    return ok, "bitwise" if ok else "mismatch"


ALL_CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("matmul_gradient", check_matmul_gradient),
    ("softmax_gradient", check_softmax_gradient),
    ("tanh_gradient", check_tanh_gradient),
    ("sigmoid_gradient", check_sigmoid_gradient),
    ("relu_gradient", check_relu_gradient),
    ("elu_gradient", check_elu_gradient),
    ("loss_gradient", check_loss_gradient),
    ("model_gradient", check_model_gradient),
    ("attention_simplex", check_attention_simplex),
    ("pooling_simplex", check_pooling_simplex),
    ("patch_permutation_invariance", check_patch_permutation_invariance),
    ("concat_split_roundtrip", check_concat_split_roundtrip),
]


def inject_fault(name: str) -> None:
    """Deliberately corrupt one numeric rule (test fixture for the verifier)."""
    if name == "tanh-grad-sign":
        fwd, deriv = nk.ELEMENTWISE_KINDS["tanh"]
        nk.ELEMENTWISE_KINDS["tanh"] = (fwd, lambda x, y: -deriv(x, y))
    else:
        raise ValueError(f"unknown fault {name!r}")


def run_checks() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in ALL_CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
