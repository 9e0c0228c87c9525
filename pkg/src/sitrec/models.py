"""The four sequence architectures for verb + role-filler prediction.

Kinds:
    a   no-vision noun decoder driven by the ground-truth verb
    b   one shared recurrent net predicting verb then nouns from image features
    c   dedicated affine verb classifier + noun decoder fed image features
    d   fusion verb classifier (region max-pool) + noun decoder

Every kind runs a StepPlan: a per-step description of what feeds the
recurrent cell and what (if anything) is predicted. Token space is nouns
followed by verbs; kinds a/c/d project onto the noun block only, kind b
onto the full extended vocabulary with per-step support masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from . import rnn
from .features import (
    AttentionParams,
    FeatureDims,
    FeatureRecord,
    FusionParams,
    attention_context_batch,
    fusion_verb_logits,
    fusion_verb_logits_batch,
    init_attention_params,
    init_fusion_params,
)
from .numeric import MASK_BIAS, ParameterStore, Tensor
from .schema import FORWARD, AnnotatedExample, Lexicon, encode_targets, role_order

MODEL_KINDS = ("a", "b", "c", "d")

VERB_EMBEDDING = "verb-embedding"
IMAGE_FEATURE = "image-feature"
PREV_TOKEN = "previous-token-embedding"

TARGET_NONE = "none"
TARGET_VERB = "verb"
TARGET_NOUN = "noun"


class ModelError(ValueError):
    """Invalid model configuration or unsupported operation for a kind."""


@dataclass(frozen=True)
class ModelKind:
    kind: str
    direction: str = FORWARD
    use_attention: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.use_attention and self.kind not in ("c", "d"):
            raise ModelError("attention variant exists for kinds c and d only")


@dataclass(frozen=True)
class PlanStep:
    input_source: str
    target: str = TARGET_NONE
    role: str | None = None


@dataclass(frozen=True)
class StepPlan:
    kind: ModelKind
    verb: str | None
    steps: tuple[PlanStep, ...]

    @property
    def target_steps(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.steps) if s.target != TARGET_NONE)

    @property
    def noun_roles(self) -> tuple[str, ...]:
        return tuple(s.role for s in self.steps if s.target == TARGET_NOUN)


def build_plan(kind: ModelKind, lex: Lexicon, verb: str | None) -> StepPlan:
    """Lay out inputs and prediction targets per time step for one example.

    Kind b accepts verb=None, producing the one-step prefix plan whose
    single target is the verb; the full plan is rebuilt once a verb is
    chosen. All other kinds require the verb up front because it fixes the
    number and order of the roles to fill.
    """
    if kind.kind == "b" and verb is None:
        return StepPlan(kind=kind, verb=None, steps=(PlanStep(IMAGE_FEATURE, TARGET_VERB),))
    if verb is None:
        raise ModelError(f"kind {kind.kind!r} needs a verb to build its plan")
    roles = role_order(lex, verb, kind.direction)

    steps: list[PlanStep]
    if kind.kind == "a" or kind.use_attention:
        # Noun-only chain: the verb embedding stands in for a start token,
        # so the first role is predicted at step 1. The final step consumes
        # the last noun and predicts nothing.
        steps = [PlanStep(VERB_EMBEDDING, TARGET_NOUN, roles[0])]
        steps += [PlanStep(PREV_TOKEN, TARGET_NOUN, r) for r in roles[1:]]
        steps.append(PlanStep(PREV_TOKEN, TARGET_NONE))
    elif kind.kind == "b":
        steps = [PlanStep(IMAGE_FEATURE, TARGET_VERB)]
        steps += [PlanStep(PREV_TOKEN, TARGET_NOUN, r) for r in roles]
    else:  # c, d without attention
        steps = [PlanStep(VERB_EMBEDDING, TARGET_NONE), PlanStep(IMAGE_FEATURE, TARGET_NOUN, roles[0])]
        steps += [PlanStep(PREV_TOKEN, TARGET_NOUN, r) for r in roles[1:]]
    return StepPlan(kind=kind, verb=verb, steps=tuple(steps))


class Model:
    """One architecture bound to a lexicon, with training and inference paths."""

    def __init__(self, kind: ModelKind, lex: Lexicon, dims: FeatureDims,
                 hidden_size: int = 64, embed_size: int = 64, attn_size: int = 32,
                 seed: int = 0, verb_class_weights: np.ndarray | None = None):
        if kind.use_attention and (dims.grid < 1 or dims.dc < 1):
            raise ModelError("attention variant requires grid features")
        self.kind = kind
        self.lex = lex
        self.dims = dims
        self.hidden_size = hidden_size
        self.embed_size = embed_size
        self.attn_size = attn_size
        self.n_nouns = lex.n_nouns
        self.n_verbs = lex.n_verbs
        self.output_size = self.n_nouns + (self.n_verbs if kind.kind == "b" else 0)
        if verb_class_weights is not None:
            verb_class_weights = np.asarray(verb_class_weights, dtype=np.float64)
            if verb_class_weights.shape != (self.n_verbs,):
                raise ModelError("verb_class_weights must have one entry per verb")
        self.verb_class_weights = verb_class_weights

        self.store = ParameterStore(seed)
        self.store.add("embed.table", (self.n_nouns + self.n_verbs, embed_size))
        lstm_input = embed_size + (dims.dc if kind.use_attention else 0)
        self.lstm = rnn.init_lstm_params(self.store, "lstm", lstm_input, hidden_size)
        self.store.add("out.weight", (self.output_size, hidden_size))
        self.store.add("out.bias", (self.output_size,), init="zeros")

        self.image_embed = None
        if kind.kind in ("b", "c", "d") and not kind.use_attention:
            self.store.add("image_embed.weight", (embed_size, dims.dg), group="image_embed")
            self.store.add("image_embed.bias", (embed_size,), init="zeros", group="image_embed")
            self.image_embed = True

        self.attention: AttentionParams | None = None
        if kind.use_attention:
            self.attention = init_attention_params(
                self.store, "attention", hidden_size, dims, attn_size=attn_size
            )

        self.fusion: FusionParams | None = None
        if kind.kind == "c":
            self.store.add("verb_classifier.weight", (self.n_verbs, dims.dg), group="verb")
            self.store.add("verb_classifier.bias", (self.n_verbs,), init="zeros", group="verb")
        elif kind.kind == "d":
            self.fusion = init_fusion_params(self.store, "fusion", self.n_verbs, dims)

        # Per-position support masks over the output layer (kind b only:
        # for the other kinds the output layer is the noun block itself).
        if kind.kind == "b":
            noun_bias = np.zeros(self.output_size)
            noun_bias[self.n_nouns:] = MASK_BIAS
            verb_bias = np.zeros(self.output_size)
            verb_bias[: self.n_nouns] = MASK_BIAS
            self._noun_mask = noun_bias
            self._verb_mask = verb_bias
        else:
            self._noun_mask = None
            self._verb_mask = None

    # -- token helpers ------------------------------------------------------

    def verb_token(self, verb: str) -> int:
        return self.n_nouns + self.lex.verb_index(verb)

    def noun_tokens(self, sit) -> list[int]:
        return encode_targets(self.lex, sit, self.kind.direction)

    def situation_from_tokens(self, verb: str, tokens: list[int]):
        from .schema import decode_tokens

        return decode_tokens(self.lex, verb, tokens, self.kind.direction)

    @property
    def supports_verb_prediction(self) -> bool:
        return self.kind.kind != "a"

    def _mask_for(self, step: PlanStep) -> np.ndarray | None:
        if self.kind.kind != "b":
            return None
        return self._verb_mask if step.target == TARGET_VERB else self._noun_mask

    # -- forward machinery --------------------------------------------------

    def _image_rows(self, globals_: Tensor) -> Tensor:
        w = self.store["image_embed.weight"]
        b = self.store["image_embed.bias"]
        return nm.add(nm.matmul(globals_, nm.transpose(w)), b)

    def _embed_rows(self, tokens: np.ndarray) -> Tensor:
        return nm.embedding_lookup(self.store["embed.table"], tokens)

    def _project(self, h: Tensor) -> Tensor:
        return rnn.project(h, self.store["out.weight"], self.store["out.bias"])

    def _run_group(self, plan_steps: tuple[PlanStep, ...], verb_tokens: np.ndarray,
                   target_tokens: np.ndarray, globals_: Tensor | None,
                   grids: np.ndarray | None):
        """Teacher-forced forward over one group of same-length examples.

        target_tokens is [B x n_targets] in plan order (verb target already
        mapped into the extended space for kind b). Yields
        (step, logits Tensor, column of targets) per targeted step.
        """
        batch = verb_tokens.shape[0]
        state = rnn.zero_state(self.hidden_size, batch)
        t_idx = 0
        prev_tokens: np.ndarray | None = None
        for step in plan_steps:
            if step.input_source == VERB_EMBEDDING:
                x = self._embed_rows(verb_tokens)
            elif step.input_source == IMAGE_FEATURE:
                x = self._image_rows(globals_)
            else:
                x = self._embed_rows(prev_tokens)
            if self.kind.use_attention:
                ctx, _ = attention_context_batch(self.attention, state.h, grids)
                x = nm.concat([x, ctx], axis=1)
            state = rnn.lstm_step(self.lstm, state, x)
            if step.target != TARGET_NONE:
                logits = self._project(state.h)
                mask = self._mask_for(step)
                if mask is not None:
                    logits = nm.add(logits, Tensor(np.broadcast_to(mask, logits.shape).copy()))
                yield step, logits, target_tokens[:, t_idx]
                prev_tokens = target_tokens[:, t_idx]
                t_idx += 1

    def _group_targets(self, examples: list[AnnotatedExample], ann_index: int) -> np.ndarray:
        cols = []
        for ex in examples:
            sit = ex.annotations[ann_index]
            tokens = self.noun_tokens(sit)
            if self.kind.kind == "b":
                tokens = [self.verb_token(ex.verb)] + tokens
            cols.append(tokens)
        return np.asarray(cols, dtype=np.int64)

    def _sequence_loss_sum(self, batch: list[tuple[AnnotatedExample, FeatureRecord | None]],
                           ann_index: int) -> Tensor:
        """Sum over examples of the per-example plan loss (graph scalar)."""
        by_len: dict[int, list[int]] = {}
        for i, (ex, _) in enumerate(batch):
            by_len.setdefault(len(self.lex.frame_of[ex.verb]), []).append(i)

        total: Tensor | None = None
        extended_weights = None
        if self.kind.kind == "b" and self.verb_class_weights is not None:
            extended_weights = np.ones(self.output_size)
            extended_weights[self.n_nouns:] = self.verb_class_weights

        for _, idxs in sorted(by_len.items()):
            examples = [batch[i][0] for i in idxs]
            recs = [batch[i][1] for i in idxs]
            plan0 = build_plan(self.kind, self.lex, examples[0].verb)
            verb_tokens = np.asarray([self.verb_token(ex.verb) for ex in examples])
            targets = self._group_targets(examples, ann_index)
            globals_ = None
            if any(s.input_source == IMAGE_FEATURE for s in plan0.steps):
                globals_ = Tensor(np.stack([r.global_vec for r in recs]))
            grids = None
            if self.kind.use_attention:
                if any(r.grid is None for r in recs):
                    raise ModelError("attention model needs grid features for every example")
                grids = np.stack([r.grid for r in recs])
            for step, logits, tgt in self._run_group(
                plan0.steps, verb_tokens, targets, globals_, grids
            ):
                weights = extended_weights if step.target == TARGET_VERB else None
                losses = nm.weighted_cross_entropy(logits, tgt, weights)
                part = nm.sum_all(losses)
                total = part if total is None else nm.add(total, part)
        return total

    # -- public training surface ---------------------------------------------

    def loss(self, example: AnnotatedExample, ann_index: int,
             rec: FeatureRecord | None) -> Tensor:
        """Sum of per-step cross-entropies over the plan's targets."""
        if not 0 <= ann_index < len(example.annotations):
            raise ModelError(f"annotation index {ann_index} out of range")
        self.lex.validate_example(example)
        return self._sequence_loss_sum([(example, rec)], ann_index)

    def verb_classifier_loss_sum(self, batch) -> Tensor | None:
        """Weighted verb cross-entropy summed over the batch (kinds c/d)."""
        if self.kind.kind not in ("c", "d"):
            return None
        w = self.verb_class_weights
        total: Tensor | None = None
        if self.kind.kind == "c":
            globals_ = Tensor(np.stack([r.global_vec for _, r in batch]))
            logits = nm.add(
                nm.matmul(globals_, nm.transpose(self.store["verb_classifier.weight"])),
                self.store["verb_classifier.bias"],
            )
            tgt = np.asarray([self.lex.verb_index(ex.verb) for ex, _ in batch])
            total = nm.sum_all(nm.weighted_cross_entropy(logits, tgt, w))
        else:
            by_count: dict[int, list[int]] = {}
            for i, (_, r) in enumerate(batch):
                by_count.setdefault(r.regions.shape[0], []).append(i)
            for count, idxs in sorted(by_count.items()):
                globals_ = Tensor(np.stack([batch[i][1].global_vec for i in idxs]))
                regions = None
                if count:
                    regions = np.stack([batch[i][1].regions for i in idxs])
                logits = fusion_verb_logits_batch(self.fusion, globals_, regions)
                tgt = np.asarray([self.lex.verb_index(batch[i][0].verb) for i in idxs])
                part = nm.sum_all(nm.weighted_cross_entropy(logits, tgt, w))
                total = part if total is None else nm.add(total, part)
        return total

    def batch_loss(self, batch: list[tuple[AnnotatedExample, FeatureRecord | None]],
                   ann_index: int) -> Tensor:
        """Training objective: mean plan loss, plus mean verb-classifier loss
        for the kinds with a dedicated action path."""
        total = self._sequence_loss_sum(batch, ann_index)
        verb_part = self.verb_classifier_loss_sum(batch)
        if verb_part is not None:
            total = nm.add(total, verb_part)
        return nm.scale(total, 1.0 / len(batch))

    def compute_batch(self, batch, ann_index: int):
        """Trainer protocol: (loss value, gradient dict) for one minibatch."""
        self.store.zero_grads()
        loss = self.batch_loss(batch, ann_index)
        nm.backward(loss)
        return float(loss.data), self.store.grads()

    # -- inference surface ---------------------------------------------------

    def verb_scores(self, rec: FeatureRecord) -> np.ndarray:
        """Scores used to rank verbs: classifier logits (c/d) or the
        step-1 verb distribution (b)."""
        if self.kind.kind == "a":
            raise ModelError("kind a has no action prediction path")
        if self.kind.kind == "c":
            w = self.store["verb_classifier.weight"].data
            b = self.store["verb_classifier.bias"].data
            return w @ rec.global_vec + b
        if self.kind.kind == "d":
            return fusion_verb_logits(self.fusion, rec).data.copy()
        plan = build_plan(self.kind, self.lex, None)
        probs = self.step_probabilities(plan, [], rec)
        return probs[self.n_nouns:]

    def step_probabilities(self, plan: StepPlan, prefix_tokens, rec: FeatureRecord | None) -> np.ndarray:
        """Masked distribution over the next target token given a prefix.

        The prefix lists the already-decided target tokens in plan order
        (for kind b the first entry is the verb token in extended space).
        """
        stepper = Stepper(self, plan, rec)
        for tok in prefix_tokens:
            stepper.next_probs()
            stepper.advance(int(tok))
        return stepper.next_probs()


class Stepper:
    """Incremental plan execution for decoding: probabilities per target
    step, with chosen tokens fed back as the following inputs."""

    def __init__(self, model: Model, plan: StepPlan, rec: FeatureRecord | None):
        self.model = model
        self.plan = plan
        self.rec = rec
        self._state = rnn.zero_state(model.hidden_size, 1)
        self._i = 0
        self._prev_token: int | None = None
        self._pending = False  # probs emitted, awaiting advance()
        if model.kind.use_attention and (rec is None or rec.grid is None):
            raise ModelError("attention model needs grid features")

    def clone(self) -> "Stepper":
        out = Stepper.__new__(Stepper)
        out.model, out.plan, out.rec = self.model, self.plan, self.rec
        out._state = rnn.LstmState(
            h=Tensor(self._state.h.data.copy()), c=Tensor(self._state.c.data.copy())
        )
        out._i = self._i
        out._prev_token = self._prev_token
        out._pending = self._pending
        return out

    def _input_for(self, step: PlanStep) -> Tensor:
        m = self.model
        if step.input_source == VERB_EMBEDDING:
            x = m._embed_rows(np.asarray([m.verb_token(self.plan.verb)]))
        elif step.input_source == IMAGE_FEATURE:
            x = m._image_rows(Tensor(self.rec.global_vec.reshape(1, -1)))
        else:
            if self._prev_token is None:
                raise ModelError("plan consumed a previous token before any was chosen")
            x = m._embed_rows(np.asarray([self._prev_token]))
        if m.kind.use_attention:
            ctx, _ = attention_context_batch(
                m.attention, self._state.h, self.rec.grid.reshape(1, *self.rec.grid.shape)
            )
            x = nm.concat([x, ctx], axis=1)
        return x

    def next_probs(self) -> np.ndarray:
        """Execute through the next targeted step; return its masked softmax."""
        if self._pending:
            raise ModelError("advance() must consume the pending step first")
        m = self.model
        while self._i < len(self.plan.steps):
            step = self.plan.steps[self._i]
            x = self._input_for(step)
            self._state = rnn.lstm_step(m.lstm, self._state, x)
            self._i += 1
            if step.target != TARGET_NONE:
                logits = m._project(self._state.h).data[0].copy()
                mask = m._mask_for(step)
                if mask is not None:
                    logits = logits + mask
                shifted = logits - logits.max()
                e = np.exp(shifted)
                self._pending = True
                return e / e.sum()
        raise ModelError("plan has no further target steps")

    def advance(self, token: int) -> None:
        if not self._pending:
            raise ModelError("no pending step to advance")
        self._prev_token = int(token)
        self._pending = False
