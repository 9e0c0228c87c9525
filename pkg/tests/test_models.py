"""Step plans, masked distributions, and the loss/probability consistency."""

import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from sitrec.models import (
    IMAGE_FEATURE,
    Model,
    ModelError,
    ModelKind,
    PREV_TOKEN,
    TARGET_NONE,
    TARGET_NOUN,
    TARGET_VERB,
    VERB_EMBEDDING,
    build_plan,
)
from sitrec.schema import FORWARD, REVERSED, parse_lexicon
from sitrec.train import verb_class_weights

FOUR_ROLE_DOC = json.dumps({
    "verbs": [
        {"id": "arranging", "roles": ["Agent", "Item", "Tool", "Place"]},
        {"id": "rearing", "roles": ["Agent", "Place"]},
        {"id": "waving", "roles": ["Agent"]},
    ],
    "nouns": ["woman", "flowers", "vase", "countertop", "horse", "outside"],
})


@pytest.fixture(scope="module")
def lex():
    return parse_lexicon(FOUR_ROLE_DOC)


def make_model(bundle, kind, seed=0, weighted=False, **sizes):
    weights = verb_class_weights(bundle.lexicon) if weighted else None
    defaults = dict(hidden_size=8, embed_size=6, attn_size=4)
    defaults.update(sizes)
    return Model(kind, bundle.lexicon, bundle.dims, seed=seed,
                 verb_class_weights=weights, **defaults)


class TestBuildPlan:
    def test_kind_a_four_roles_is_five_steps_four_noun_targets(self, lex):
        plan = build_plan(ModelKind("a"), lex, "arranging")
        assert len(plan.steps) == 5
        targets = [s for s in plan.steps if s.target == TARGET_NOUN]
        assert len(targets) == 4
        assert plan.steps[0].input_source == VERB_EMBEDDING
        assert plan.steps[0].target == TARGET_NOUN
        assert all(s.input_source == PREV_TOKEN for s in plan.steps[1:])
        assert plan.steps[-1].target == TARGET_NONE
        assert plan.noun_roles == ("Agent", "Item", "Tool", "Place")

    def test_kind_b_unknown_verb_targets_verb_first(self, lex):
        plan = build_plan(ModelKind("b"), lex, None)
        assert len(plan.steps) == 1
        assert plan.steps[0].input_source == IMAGE_FEATURE
        assert plan.steps[0].target == TARGET_VERB

    def test_kind_b_full_plan(self, lex):
        plan = build_plan(ModelKind("b"), lex, "rearing")
        assert [s.target for s in plan.steps] == [TARGET_VERB, TARGET_NOUN, TARGET_NOUN]
        assert plan.steps[1].input_source == PREV_TOKEN

    def test_kind_c_single_role_is_two_steps_one_target(self, lex):
        plan = build_plan(ModelKind("c"), lex, "waving")
        assert len(plan.steps) == 2
        assert plan.steps[0].input_source == VERB_EMBEDDING
        assert plan.steps[0].target == TARGET_NONE
        assert plan.steps[1].input_source == IMAGE_FEATURE
        assert plan.steps[1].target == TARGET_NOUN

    def test_reversed_plan_reverses_noun_roles_only(self, lex):
        for kind_name in ("a", "b", "c", "d"):
            fwd = build_plan(ModelKind(kind_name, FORWARD), lex, "arranging")
            rev = build_plan(ModelKind(kind_name, REVERSED), lex, "arranging")
            assert len(fwd.steps) == len(rev.steps)
            assert rev.noun_roles == tuple(reversed(fwd.noun_roles))

    def test_missing_verb_rejected_for_a_c_d(self, lex):
        for kind_name in ("a", "c", "d"):
            with pytest.raises(ModelError):
                build_plan(ModelKind(kind_name), lex, None)

    def test_attention_only_for_c_and_d(self):
        with pytest.raises(ModelError):
            ModelKind("a", use_attention=True)
        ModelKind("d", use_attention=True)

    def test_attention_plan_drops_image_step(self, lex):
        plan = build_plan(ModelKind("d", use_attention=True), lex, "rearing")
        assert all(s.input_source != IMAGE_FEATURE for s in plan.steps)
        assert len(plan.steps) == 3  # two roles + trailing step


class TestStepProbabilities:
    def test_kind_b_step1_admits_only_verbs(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("b"))
        rec = tiny_bundle.splits["train"].features[0]
        plan = build_plan(model.kind, model.lex, None)
        probs = model.step_probabilities(plan, [], rec)
        assert probs[: model.n_nouns].sum() == 0.0
        npt.assert_allclose(probs[model.n_nouns:].sum(), 1.0, atol=1e-9)

    def test_kind_b_noun_steps_admit_only_nouns(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("b"))
        ex, rec = tiny_bundle.splits["train"].pairs()[0]
        plan = build_plan(model.kind, model.lex, ex.verb)
        probs = model.step_probabilities(plan, [model.verb_token(ex.verb)], rec)
        assert probs[model.n_nouns:].sum() == 0.0
        npt.assert_allclose(probs.sum(), 1.0, atol=1e-9)

    def test_noun_only_kinds_have_no_verb_slots(self, tiny_bundle):
        for kind_name in ("a", "c", "d"):
            model = make_model(tiny_bundle, ModelKind(kind_name))
            ex, rec = tiny_bundle.splits["train"].pairs()[0]
            plan = build_plan(model.kind, model.lex, ex.verb)
            probs = model.step_probabilities(plan, [], rec)
            assert probs.shape == (model.n_nouns,)
            npt.assert_allclose(probs.sum(), 1.0, atol=1e-9)

    def test_distributions_sum_to_one_on_random_inputs(self, tiny_bundle):
        rng = np.random.default_rng(0)
        model = make_model(tiny_bundle, ModelKind("d"), seed=3)
        pairs = tiny_bundle.splits["train"].pairs()
        for _ in range(10):
            ex, rec = pairs[rng.integers(len(pairs))]
            plan = build_plan(model.kind, model.lex, ex.verb)
            prefix = []
            for _ in plan.target_steps:
                probs = model.step_probabilities(plan, prefix, rec)
                npt.assert_allclose(probs.sum(), 1.0, atol=1e-9)
                prefix.append(int(np.argmax(probs)))


class TestLoss:
    def test_untrained_single_target_loss_is_log_k(self):
        doc = json.dumps({
            "verbs": [{"id": "v", "roles": ["r"]}],
            "nouns": [f"n{i}" for i in range(7)],
        })
        lex = parse_lexicon(doc)
        from sitrec.data import SyntheticSpec, generate_synthetic
        from sitrec.features import FeatureDims
        from sitrec.schema import AnnotatedExample, Situation

        model = Model(ModelKind("a"), lex, FeatureDims(dg=4, dr=3), seed=0)
        sit = Situation("v", ("n0",))
        ex = AnnotatedExample("e", "v", (sit, sit, sit), 0)
        loss = float(model.loss(ex, 0, None).data)
        assert abs(loss - math.log(lex.n_nouns)) < 0.1

    @pytest.mark.parametrize("kind", [
        ModelKind("a"), ModelKind("b"), ModelKind("c"), ModelKind("d"),
        ModelKind("d", use_attention=True), ModelKind("c", direction=REVERSED),
    ])
    def test_exp_neg_loss_equals_product_of_step_probabilities(self, tiny_bundle, kind):
        """The sequential factorization: loss == -sum(log p_t) at the targets."""
        model = make_model(tiny_bundle, kind, seed=7)
        for ex, rec in tiny_bundle.splits["train"].pairs()[:4]:
            loss = float(model.loss(ex, 1, rec).data)
            plan = build_plan(model.kind, model.lex, ex.verb)
            tokens = model.noun_tokens(ex.annotations[1])
            if kind.kind == "b":
                tokens = [model.verb_token(ex.verb)] + tokens
            logp = 0.0
            prefix = []
            for tok in tokens:
                probs = model.step_probabilities(plan, prefix, rec)
                logp += math.log(probs[tok])
                prefix.append(tok)
            assert abs(loss + logp) < 1e-9

    def test_weighted_verb_step_scales_kind_b_loss(self, tiny_bundle):
        lex = tiny_bundle.lexicon
        weights = verb_class_weights(lex)
        plain = make_model(tiny_bundle, ModelKind("b"), seed=9, weighted=False)
        weighted = make_model(tiny_bundle, ModelKind("b"), seed=9, weighted=True)
        ex, rec = tiny_bundle.splits["train"].pairs()[0]
        lw = float(weighted.loss(ex, 0, rec).data)
        lp = float(plain.loss(ex, 0, rec).data)
        w = weights[lex.verb_index(ex.verb)]
        # Only the verb step scales; noun steps are identical.
        plan = build_plan(plain.kind, lex, ex.verb)
        vprobs = plain.step_probabilities(plan, [], rec)
        verb_nll = -math.log(vprobs[plain.verb_token(ex.verb)])
        npt.assert_allclose(lw - lp, (w - 1.0) * verb_nll, atol=1e-9)

    def test_same_inputs_same_loss(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("c"), seed=11)
        ex, rec = tiny_bundle.splits["train"].pairs()[2]
        a = float(model.loss(ex, 0, rec).data)
        b = float(model.loss(ex, 0, rec).data)
        assert a == b

    def test_batch_loss_is_mean_of_singletons(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("a"), seed=13)
        batch = tiny_bundle.splits["train"].pairs()[:3]
        total = float(model.batch_loss(batch, 0).data)
        singles = [float(model.batch_loss([p], 0).data) for p in batch]
        npt.assert_allclose(total, np.mean(singles), atol=1e-12)

    def test_annotation_index_out_of_range(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("a"))
        ex, rec = tiny_bundle.splits["train"].pairs()[0]
        with pytest.raises(ModelError):
            model.loss(ex, 5, rec)


class TestModelConstruction:
    def test_kind_b_extends_output_vocabulary(self, tiny_bundle):
        lex = tiny_bundle.lexicon
        b = make_model(tiny_bundle, ModelKind("b"))
        a = make_model(tiny_bundle, ModelKind("a"))
        assert b.output_size == lex.n_nouns + lex.n_verbs
        assert a.output_size == lex.n_nouns

    def test_attention_requires_grid_dims(self, tiny_bundle):
        from sitrec.features import FeatureDims

        with pytest.raises(ModelError):
            Model(ModelKind("d", use_attention=True), tiny_bundle.lexicon,
                  FeatureDims(dg=6, dr=4), seed=0)

    def test_verb_scores_unsupported_for_kind_a(self, tiny_bundle):
        model = make_model(tiny_bundle, ModelKind("a"))
        rec = tiny_bundle.splits["train"].features[0]
        with pytest.raises(ModelError):
            model.verb_scores(rec)
