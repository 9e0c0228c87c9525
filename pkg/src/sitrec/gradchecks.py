"""Finite-difference verification of every differentiable piece.

Each check compares reverse-mode gradients against central differences at
eps=1e-5 and reports the worst relative error. Multi-output ops are probed
through a fixed random linear functional so the scalar objective has
nontrivial gradients everywhere. Only meaningful in 64-bit mode.
"""

from __future__ import annotations

import numpy as np

from . import numeric as nm
from .data import SyntheticSpec, generate_synthetic
from .features import (
    attention_context_batch,
    fusion_verb_logits_batch,
    init_attention_params,
    init_fusion_params,
)
from .models import Model, ModelKind
from .numeric import ParameterStore, Tensor, check_store_gradients, finite_diff_check
from .rnn import init_lstm_params, lstm_step, project, unroll, zero_state
from .train import verb_class_weights

EPS = 1e-5
TOLERANCE = 1e-4

# Composite objectives are scaled by a constant before checking. Gradient
# correctness is invariant under constant scaling, but the scaling keeps
# central-difference roundoff (~1e-16 * |f| / eps) below the 1e-8 floor of
# the relative-error denominator, so coordinates whose true derivative is
# legitimately tiny do not drown in float64 cancellation noise.
LOSS_SCALE = 1.0 / 256.0


def _probe(rng, shape):
    return Tensor(rng.normal(size=shape))


def check_numeric_ops(seed: int) -> dict[str, float]:
    """FD error per forward op, each input checked separately."""
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}

    def run(name, fn, point):
        out[name] = finite_diff_check(fn, point, EPS)

    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    pm = _probe(rng, (3, 2))
    run("matmul/a", lambda x: nm.sum_all(nm.elementwise_mul(nm.matmul(x, b), pm)), a)
    run("matmul/b", lambda x: nm.sum_all(nm.elementwise_mul(nm.matmul(a, x), pm)), b)

    m = Tensor(rng.normal(size=(3, 4)))
    bias = Tensor(rng.normal(size=(4,)))
    pa = _probe(rng, (3, 4))
    run("add/a", lambda x: nm.sum_all(nm.elementwise_mul(nm.add(x, m), pa)), m)
    run("add/bias", lambda x: nm.sum_all(nm.elementwise_mul(nm.add(m, x), pa)), bias)

    run("elementwise_mul", lambda x: nm.sum_all(nm.elementwise_mul(x, pa)), m)
    run("scale", lambda x: nm.sum_all(nm.scale(x, -1.7)), m)
    run("add_scalar", lambda x: nm.sum_all(nm.add_scalar(x, 0.3)), m)
    run("transpose", lambda x: nm.sum_all(nm.elementwise_mul(nm.transpose(x), _probe_fixed)), m)

    c2 = Tensor(rng.normal(size=(3, 2)))
    pc = _probe(rng, (3, 6))
    run("concat", lambda x: nm.sum_all(nm.elementwise_mul(nm.concat([x, c2], axis=1), pc)), m)

    run("sigmoid", lambda x: nm.sum_all(nm.elementwise_mul(nm.sigmoid(x), pa)), m)
    run("tanh", lambda x: nm.sum_all(nm.elementwise_mul(nm.tanh(x), pa)), m)
    relu_in = Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.5)
    run("relu", lambda x: nm.sum_all(nm.elementwise_mul(nm.relu(x), pa)), relu_in)

    run("softmax", lambda x: nm.sum_all(nm.elementwise_mul(nm.softmax(x), pa)), m)
    run("log_softmax", lambda x: nm.sum_all(nm.elementwise_mul(nm.log_softmax(x), pa)), m)

    table = Tensor(rng.normal(size=(5, 3)))
    idx = np.array([0, 2, 2, 4])
    pe = _probe(rng, (4, 3))
    run("embedding_lookup",
        lambda x: nm.sum_all(nm.elementwise_mul(nm.embedding_lookup(x, idx), pe)), table)

    pv = _probe(rng, (4,))
    run("mean_pool", lambda x: nm.sum_all(nm.elementwise_mul(nm.mean_pool(x, axis=0), pv)), m)
    spread = Tensor(rng.permutation(12).reshape(3, 4) + 0.3 * rng.normal(size=(3, 4)))
    run("max_pool", lambda x: nm.sum_all(nm.elementwise_mul(nm.max_pool(x, axis=0), pv)), spread)

    gap = Tensor(m.data + 0.5)
    run("maximum/a", lambda x: nm.sum_all(nm.elementwise_mul(nm.maximum(x, m), pa)), gap)
    run("maximum/b", lambda x: nm.sum_all(nm.elementwise_mul(nm.maximum(gap, x), pa)), m)

    logits = Tensor(rng.normal(size=(3, 5)))
    targets = np.array([1, 0, 4])
    weights = rng.uniform(0.5, 2.0, size=5)
    pw = _probe(rng, (3,))
    run("weighted_cross_entropy",
        lambda x: nm.sum_all(nm.elementwise_mul(
            nm.weighted_cross_entropy(x, targets, weights), pw)), logits)

    col = Tensor(rng.normal(size=(3, 1)))
    run("scale_rows/x", lambda x: nm.sum_all(nm.elementwise_mul(nm.scale_rows(x, col), pa)), m)
    run("scale_rows/col", lambda x: nm.sum_all(nm.elementwise_mul(nm.scale_rows(m, x), pa)), col)

    pr = _probe(rng, (6, 4))
    run("repeat_rows", lambda x: nm.sum_all(nm.elementwise_mul(nm.repeat_rows(x, 2), pr)), m)
    wide = Tensor(rng.normal(size=(6, 4)))
    run("sum_segments",
        lambda x: nm.sum_all(nm.elementwise_mul(nm.sum_segments(x, 2), pa)), wide)
    run("reshape", lambda x: nm.sum_all(nm.elementwise_mul(nm.reshape(x, (2, 6)), _probe_rs)), m)
    run("slice_cols", lambda x: nm.sum_all(nm.elementwise_mul(nm.slice_cols(x, 1, 3), _probe_sc)), m)
    run("sum_all", lambda x: nm.sum_all(x), m)
    return out


# Fixed probes for ops whose output shape differs from the input.
_probe_fixed = Tensor(np.random.default_rng(1234).normal(size=(4, 3)))
_probe_rs = Tensor(np.random.default_rng(1235).normal(size=(2, 6)))
_probe_sc = Tensor(np.random.default_rng(1236).normal(size=(3, 2)))


def check_rnn(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}
    hidden, inp, batch = 5, 4, 2

    store = ParameterStore(seed)
    params = init_lstm_params(store, "lstm", inp, hidden)
    x = Tensor(rng.normal(size=(batch, inp)))
    state = zero_state(hidden, batch)
    state.h.data[:] = rng.normal(size=(batch, hidden)) * 0.3
    state.c.data[:] = rng.normal(size=(batch, hidden)) * 0.3

    def step_loss():
        return nm.scale(nm.sum_all(lstm_step(params, state, x).h), LOSS_SCALE)

    out["lstm_step/params"] = check_store_gradients(step_loss, store, EPS)
    out["lstm_step/x"] = finite_diff_check(
        lambda t: nm.scale(nm.sum_all(lstm_step(params, state, t).h), LOSS_SCALE), x, EPS)

    seq = [Tensor(rng.normal(size=(batch, inp))) for _ in range(4)]

    def unroll_loss():
        states = unroll(params, seq)
        total = nm.sum_all(states[0].h)
        for s in states[1:]:
            total = nm.add(total, nm.sum_all(s.h))
        return nm.scale(total, LOSS_SCALE)

    out["unroll4/params"] = check_store_gradients(unroll_loss, store, EPS)

    pstore = ParameterStore(seed + 1)
    w = pstore.add("w", (3, hidden))
    b = pstore.add("b", (3,), init="zeros")
    h = Tensor(rng.normal(size=(batch, hidden)))
    out["project"] = check_store_gradients(
        lambda: nm.scale(nm.sum_all(project(h, w, b)), LOSS_SCALE), pstore, EPS)
    return out


def check_features(seed: int) -> dict[str, float]:
    from .features import FeatureDims

    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}
    dims = FeatureDims(dg=4, dr=3, dc=3, grid=2)

    store = ParameterStore(seed)
    fusion = init_fusion_params(store, "fusion", 3, dims)
    globals_ = Tensor(rng.normal(size=(2, dims.dg)))
    regions = rng.normal(size=(2, 2, dims.dr))
    probe = Tensor(rng.normal(size=(2, 3)))

    def fusion_loss():
        logits = fusion_verb_logits_batch(fusion, globals_, regions)
        return nm.scale(nm.sum_all(nm.elementwise_mul(logits, probe)), LOSS_SCALE)

    out["fusion/boxes"] = check_store_gradients(fusion_loss, store, EPS)

    def fallback_loss():
        logits = fusion_verb_logits_batch(fusion, globals_, None)
        return nm.scale(nm.sum_all(nm.elementwise_mul(logits, probe)), LOSS_SCALE)

    out["fusion/global"] = check_store_gradients(fallback_loss, store, EPS)

    astore = ParameterStore(seed + 1)
    attn = init_attention_params(astore, "attn", hidden_size=4, dims=dims, attn_size=3)
    h = Tensor(rng.normal(size=(2, 4)))
    grids = rng.normal(size=(2, dims.grid, dims.grid, dims.dc))
    cprobe = Tensor(rng.normal(size=(2, dims.dc)))

    def attn_loss():
        ctx, _ = attention_context_batch(attn, h, grids)
        return nm.scale(nm.sum_all(nm.elementwise_mul(ctx, cprobe)), LOSS_SCALE)

    out["attention_context"] = check_store_gradients(attn_loss, astore, EPS)
    out["attention_context/h"] = finite_diff_check(
        lambda t: nm.scale(nm.sum_all(nm.elementwise_mul(
            attention_context_batch(attn, t, grids)[0], cprobe)), LOSS_SCALE), h, EPS)
    return out


def _tiny_data(seed: int):
    spec = SyntheticSpec(
        n_verbs=2, max_roles=2, n_nouns=4, pool_size=2,
        dg=4, dr=3, dc=2, grid=2, sigma=0.1,
        n_train=6, n_dev=2, n_test=2, seed=seed, perturb_prob=0.2,
    )
    return generate_synthetic(spec)


def _randomize(store: ParameterStore, rng, scale: float = 0.4) -> None:
    """Move parameters off the training init to a generic point.

    At the careful LSTM init several coordinates have true derivatives
    around 1e-8, where central differences are pure roundoff; a random
    point of moderate scale gives every path a healthy gradient.
    """
    for name in store.names():
        t = store[name]
        t.data = rng.normal(size=t.data.shape) * scale


def check_model_losses(seed: int) -> dict[str, float]:
    """FD over every parameter of each architecture's training loss."""
    data = _tiny_data(seed)
    lex = data.lexicon
    train = data.splits["train"]
    out: dict[str, float] = {}
    variants = [
        ("model_a", ModelKind("a")),
        ("model_b", ModelKind("b")),
        ("model_c", ModelKind("c")),
        ("model_d", ModelKind("d")),
        ("model_d_attn", ModelKind("d", use_attention=True)),
    ]
    weights = verb_class_weights(lex)
    batch = train.pairs()[:2]
    rng = np.random.default_rng(seed + 77)
    for name, kind in variants:
        model = Model(kind, lex, data.dims, hidden_size=4, embed_size=3,
                      attn_size=3, seed=seed, verb_class_weights=weights)
        _randomize(model.store, rng)
        out[name] = check_store_gradients(
            lambda m=model: nm.scale(m.batch_loss(batch, 0), LOSS_SCALE),
            model.store, EPS)
    return out


MODULES = {
    "numeric": check_numeric_ops,
    "rnn": check_rnn,
    "features": check_features,
    "models": check_model_losses,
}


def run_gradchecks(module: str = "all", seeds=(0,)) -> dict[str, float]:
    """Worst FD error per check name across the given seeds."""
    names = list(MODULES) if module == "all" else [module]
    for n in names:
        if n not in MODULES:
            raise ValueError(f"unknown gradcheck module {n!r}")
    worst: dict[str, float] = {}
    for n in names:
        for seed in seeds:
            for check, err in MODULES[n](int(seed)).items():
                key = f"{n}.{check}"
                worst[key] = max(worst.get(key, 0.0), err)
    return worst
