"""Constrained inference over the sequence models.

Greedy decoding picks the most likely admissible token at each step;
beam search keeps the `width` best partial noun sequences, length-
synchronized. All tie-breaking is total and documented: lowest token
index per step (greedy), (score, token sequence) lexicographic for beams,
and lowest verb index when ranking verbs.
"""

from __future__ import annotations

import numpy as np

from .features import FeatureRecord
from .metrics import GTVERB, TOP1, TOP5, ExampleScore, Metrics, aggregate, score_example
from .models import Model, Stepper, TARGET_VERB, build_plan
from .schema import Situation


class DecodeError(ValueError):
    pass


def _resolve_verb(model: Model, rec: FeatureRecord | None, verb: str | None) -> str:
    if verb is not None:
        return verb
    if not model.supports_verb_prediction:
        raise DecodeError("kind a decodes nouns only; pass the verb explicitly")
    if model.kind.kind == "b":
        prefix = build_plan(model.kind, model.lex, None)
        probs = model.step_probabilities(prefix, [], rec)
        return model.lex.verbs[int(np.argmax(probs)) - model.n_nouns]
    scores = model.verb_scores(rec)
    return model.lex.verbs[int(np.argmax(scores))]


def greedy_decode(model: Model, rec: FeatureRecord | None,
                  verb: str | None = None) -> Situation:
    """Most likely admissible token at each step, fed forward."""
    verb = _resolve_verb(model, rec, verb)
    plan = build_plan(model.kind, model.lex, verb)
    stepper = Stepper(model, plan, rec)
    tokens: list[int] = []
    for step_idx in plan.target_steps:
        probs = stepper.next_probs()
        if plan.steps[step_idx].target == TARGET_VERB:
            tok = model.verb_token(verb)
        else:
            tok = int(np.argmax(probs))
            tokens.append(tok)
        stepper.advance(tok)
    return model.situation_from_tokens(verb, tokens)


def sequence_logprob(model: Model, rec: FeatureRecord | None, verb: str,
                     noun_tokens: list[int]) -> float:
    """Sum of log step probabilities of the noun tokens, conditioned on verb."""
    plan = build_plan(model.kind, model.lex, verb)
    stepper = Stepper(model, plan, rec)
    total = 0.0
    it = iter(noun_tokens)
    for step_idx in plan.target_steps:
        probs = stepper.next_probs()
        if plan.steps[step_idx].target == TARGET_VERB:
            tok = model.verb_token(verb)
        else:
            tok = int(next(it))
            p = probs[tok]
            if p <= 0.0:
                return float("-inf")
            total += float(np.log(p))
        stepper.advance(tok)
    return total


def topk_verb_decode(action_model: Model, noun_model: Model,
                     rec: FeatureRecord, k: int) -> list[tuple[Situation, float]]:
    """Greedy noun decode under each of the k best-scoring verbs.

    Results are ordered by descending verb score, ties toward the lower
    verb index; k is capped at the verb count.
    """
    if k < 1:
        raise DecodeError("k must be >= 1")
    scores = action_model.verb_scores(rec)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    out = []
    for vi in order[: min(k, len(scores))]:
        verb = action_model.lex.verbs[vi]
        out.append((greedy_decode(noun_model, rec, verb=verb), float(scores[vi])))
    return out


def beam_search(model: Model, rec: FeatureRecord | None, verb: str | None,
                width: int) -> tuple[Situation, list[tuple[Situation, float]]]:
    """Length-synchronized beam over the noun steps.

    Hypotheses carry cumulative log-probability; candidates are ranked by
    (score desc, token sequence lexicographic asc), which makes width 1
    coincide with greedy decoding exactly.
    """
    if width < 1:
        raise DecodeError("beam width must be >= 1")
    verb = _resolve_verb(model, rec, verb)
    plan = build_plan(model.kind, model.lex, verb)
    beams: list[tuple[float, tuple[int, ...], Stepper]] = [
        (0.0, (), Stepper(model, plan, rec))
    ]
    for step_idx in plan.target_steps:
        step = plan.steps[step_idx]
        if step.target == TARGET_VERB:
            for _, _, stepper in beams:
                stepper.next_probs()
                stepper.advance(model.verb_token(verb))
            continue
        candidates: list[tuple[float, tuple[int, ...], Stepper]] = []
        for lp, toks, stepper in beams:
            probs = stepper.next_probs()
            for tok in np.nonzero(probs > 0.0)[0]:
                candidates.append((lp + float(np.log(probs[tok])), toks + (int(tok),), stepper))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for lp, toks, parent in candidates[:width]:
            child = parent.clone()
            child.advance(toks[-1])
            beams.append((lp, toks, child))
    ranked = [
        (model.situation_from_tokens(verb, list(toks)), lp) for lp, toks, _ in beams
    ]
    return ranked[0][0], ranked


# ---------------------------------------------------------------------------
# dataset-level evaluation


def rank_predictions(model, rec: FeatureRecord, k: int) -> list[Situation]:
    """Top-k situations from any trainable model (RNN kinds, CRF, discrete)."""
    if hasattr(model, "rank_situations"):
        return model.rank_situations(rec, k)
    return [sit for sit, _ in topk_verb_decode(model, model, rec, k)]


def rank_predictions_scored(model, rec: FeatureRecord, k: int) -> list[tuple[Situation, float]]:
    if hasattr(model, "crf_infer"):
        return model.crf_infer(rec, k)
    if hasattr(model, "rank_scored"):
        return model.rank_scored(rec, k)
    return topk_verb_decode(model, model, rec, k)


def decode_with_verb(model, rec: FeatureRecord, verb: str) -> Situation:
    if hasattr(model, "conditioned_on_verb"):
        return model.conditioned_on_verb(rec, verb)
    return greedy_decode(model, rec, verb=verb)


def evaluate_dataset(model, dataset, settings: tuple[str, ...] | None = None,
                     value_all_single_annotation: bool = False
                     ) -> tuple[Metrics, list[ExampleScore]]:
    """Score every example of a dataset under the requested settings."""
    if settings is None:
        settings = (TOP1, TOP5, GTVERB) if model.supports_verb_prediction else (GTVERB,)
    lex = dataset.lexicon
    scores = []
    for ex in dataset.examples:
        rec = dataset.features[ex.feature_ref]
        results = {}
        if TOP1 in settings or TOP5 in settings:
            ranked = rank_predictions(model, rec, 5)
            if TOP1 in settings:
                results[TOP1] = score_example(lex, ranked, ex, TOP1,
                                              value_all_single_annotation)
            if TOP5 in settings:
                results[TOP5] = score_example(lex, ranked, ex, TOP5,
                                              value_all_single_annotation)
        if GTVERB in settings:
            sit = decode_with_verb(model, rec, ex.verb)
            results[GTVERB] = score_example(lex, [sit], ex, GTVERB,
                                            value_all_single_annotation)
        scores.append(ExampleScore(example_id=ex.example_id, verb=ex.verb,
                                   results=results))
    return aggregate(scores), scores
