"""Globally normalized baseline with exact inference, plus the frequency-
restricted discrete classifier.

The joint score of a situation factorizes into one verb potential and one
potential per (verb, role, noun) tuple, each log-linear in the global
feature vector. Because roles are conditionally independent given the
verb, the partition function reduces to a product of per-role sums inside
a sum over verbs, so the normalizer, the argmax, and the log-likelihood
gradient are all exact and cheap.
"""

from __future__ import annotations

import numpy as np

from .features import FeatureDims, FeatureRecord
from .numeric import ParameterStore
from .schema import AnnotatedExample, Lexicon, Situation


class CrfError(ValueError):
    pass


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


class CrfModel:
    """Exact log-linear situation scorer over the lexicon's valid tuples."""

    supports_verb_prediction = True

    def __init__(self, lex: Lexicon, dims: FeatureDims, seed: int = 0,
                 init_scale: float = 0.01):
        self.lex = lex
        self.dims = dims
        # Tuple rows grouped contiguously per (verb, role); nouns inside a
        # group are in noun-index order so argmax tie-breaks fall on the
        # lowest noun index.
        self.tuple_keys: list[tuple[str, str, str]] = []
        self.group_slices: dict[str, list[tuple[str, int, int]]] = {}
        self.row_of: dict[tuple[str, str, str], int] = {}
        for verb in lex.verbs:
            groups = []
            for role in lex.frame_of[verb]:
                nouns = lex.valid_nouns(verb, role)
                start = len(self.tuple_keys)
                for n in nouns:
                    self.row_of[(verb, role, n)] = len(self.tuple_keys)
                    self.tuple_keys.append((verb, role, n))
                groups.append((role, start, len(self.tuple_keys)))
            self.group_slices[verb] = groups

        self.store = ParameterStore(seed)
        self.store.add("verb_weights", (lex.n_verbs, dims.dg), scale=init_scale)
        self.store.add("tuple_weights", (len(self.tuple_keys), dims.dg), scale=init_scale)

    # -- potentials ----------------------------------------------------------

    def _log_potentials(self, rec: FeatureRecord) -> tuple[np.ndarray, np.ndarray]:
        g = rec.global_vec
        s_verb = self.store["verb_weights"].data @ g
        s_tuple = self.store["tuple_weights"].data @ g
        return s_verb, s_tuple

    def crf_score(self, rec: FeatureRecord, sit: Situation) -> float:
        """Unnormalized log-score: log psi_v plus the sum of log psi_r."""
        self.lex.validate_situation(sit)
        s_verb, s_tuple = self._log_potentials(rec)
        total = float(s_verb[self.lex.verb_index(sit.verb)])
        for role, noun in zip(self.lex.frame_of[sit.verb], sit.fillers):
            key = (sit.verb, role, noun)
            if key not in self.row_of:
                raise CrfError(f"situation uses invalid tuple {key!r}")
            total += float(s_tuple[self.row_of[key]])
        return total

    def log_partition(self, rec: FeatureRecord) -> float:
        """log of the sum of exp-scores over every valid situation."""
        s_verb, s_tuple = self._log_potentials(rec)
        totals = self._verb_totals(s_verb, s_tuple)
        return _logsumexp(totals)

    def _verb_totals(self, s_verb: np.ndarray, s_tuple: np.ndarray) -> np.ndarray:
        totals = np.empty(self.lex.n_verbs)
        for vi, verb in enumerate(self.lex.verbs):
            acc = s_verb[vi]
            for _, start, end in self.group_slices[verb]:
                acc += _logsumexp(s_tuple[start:end])
            totals[vi] = acc
        return totals

    def score_normalized(self, rec: FeatureRecord, sit: Situation) -> float:
        return self.crf_score(rec, sit) - self.log_partition(rec)

    # -- exact inference -----------------------------------------------------

    def crf_infer(self, rec: FeatureRecord, k: int = 1) -> list[tuple[Situation, float]]:
        """Top-k situations by exact maximization.

        Factorization makes the best frame per verb the per-role argmax;
        verbs are ranked by their maximized scores. Ties break toward the
        lower verb index (ranking) and the lower noun index (argmax).
        """
        if k < 1:
            raise CrfError("k must be >= 1")
        s_verb, s_tuple = self._log_potentials(rec)
        best: list[tuple[float, int, Situation]] = []
        for vi, verb in enumerate(self.lex.verbs):
            score = float(s_verb[vi])
            fillers = []
            for role, start, end in self.group_slices[verb]:
                j = int(np.argmax(s_tuple[start:end]))
                score += float(s_tuple[start + j])
                fillers.append(self.tuple_keys[start + j][2])
            best.append((score, vi, Situation(verb=verb, fillers=tuple(fillers))))
        best.sort(key=lambda t: (-t[0], t[1]))
        return [(sit, score) for score, _, sit in best[:k]]

    def rank_situations(self, rec: FeatureRecord, k: int) -> list[Situation]:
        return [sit for sit, _ in self.crf_infer(rec, k)]

    def conditioned_on_verb(self, rec: FeatureRecord, verb: str) -> Situation:
        """Best realized frame for a fixed verb (per-role argmax)."""
        _, s_tuple = self._log_potentials(rec)
        fillers = []
        for role, start, end in self.group_slices[verb]:
            j = int(np.argmax(s_tuple[start:end]))
            fillers.append(self.tuple_keys[start + j][2])
        return Situation(verb=verb, fillers=tuple(fillers))

    # -- training ------------------------------------------------------------

    def compute_batch(self, batch: list[tuple[AnnotatedExample, FeatureRecord]],
                      ann_index: int):
        """Exact negative log-likelihood and its analytic gradient.

        d(logZ)/d(tuple score) is the verb posterior times the in-group
        softmax; subtracting the ground-truth indicators gives the NLL
        gradient in score space, which maps onto the weights through the
        feature vector.
        """
        n_t = len(self.tuple_keys)
        n_v = self.lex.n_verbs
        coef_v = np.zeros((len(batch), n_v))
        coef_t = np.zeros((len(batch), n_t))
        feats = np.stack([rec.global_vec for _, rec in batch])
        nll = 0.0
        for bi, (ex, rec) in enumerate(batch):
            sit = ex.annotations[ann_index]
            s_verb, s_tuple = self._log_potentials(rec)
            totals = self._verb_totals(s_verb, s_tuple)
            log_z = _logsumexp(totals)
            p_verb = np.exp(totals - log_z)
            coef_v[bi] = p_verb
            for vi, verb in enumerate(self.lex.verbs):
                for _, start, end in self.group_slices[verb]:
                    block = s_tuple[start:end]
                    q = np.exp(block - _logsumexp(block))
                    coef_t[bi, start:end] = p_verb[vi] * q
            gt_score = float(s_verb[self.lex.verb_index(sit.verb)])
            coef_v[bi, self.lex.verb_index(sit.verb)] -= 1.0
            for role, noun in zip(self.lex.frame_of[sit.verb], sit.fillers):
                key = (sit.verb, role, noun)
                if key not in self.row_of:
                    raise CrfError(f"training situation uses invalid tuple {key!r}")
                gt_score += float(s_tuple[self.row_of[key]])
                coef_t[bi, self.row_of[key]] -= 1.0
            nll += log_z - gt_score
        scale = 1.0 / len(batch)
        grads = {
            "verb_weights": scale * (coef_v.T @ feats),
            "tuple_weights": scale * (coef_t.T @ feats),
        }
        return nll * scale, grads


def frame_frequencies(examples: list[AnnotatedExample]) -> dict[tuple[str, tuple[str, ...]], int]:
    """Occurrence counts of complete realized frames over all annotations."""
    counts: dict[tuple[str, tuple[str, ...]], int] = {}
    for ex in examples:
        for ann in ex.annotations:
            key = (ann.verb, ann.fillers)
            counts[key] = counts.get(key, 0) + 1
    return counts


def select_frames(lex: Lexicon, train_examples: list[AnnotatedExample],
                  frames_per_verb: int = 10) -> list[Situation]:
    """The most frequent frames per verb, ties broken lexicographically."""
    if not train_examples:
        raise CrfError("discrete classifier needs a nonempty training set")
    counts = frame_frequencies(train_examples)
    observed = {verb for verb, _ in counts}
    missing = [v for v in lex.verbs if v not in observed]
    if missing:
        raise CrfError(f"verbs with zero training frames: {missing}")
    per_verb: dict[str, list[tuple[tuple[str, ...], int]]] = {}
    for (verb, fillers), c in counts.items():
        per_verb.setdefault(verb, []).append((fillers, c))
    classes = []
    for verb in lex.verbs:
        entries = sorted(per_verb[verb], key=lambda fc: (-fc[1], fc[0]))
        for fillers, _ in entries[:frames_per_verb]:
            classes.append(Situation(verb=verb, fillers=fillers))
    return classes


def discrete_classifier(lex: Lexicon, dims: FeatureDims,
                        train_examples: list[AnnotatedExample], seed: int = 0,
                        frames_per_verb: int = 10) -> "DiscreteClassifier":
    """Build the baseline restricted to the top frames seen in training."""
    classes = select_frames(lex, train_examples, frames_per_verb)
    return DiscreteClassifier(lex, dims, classes, seed=seed)


class DiscreteClassifier:
    """Softmax over a fixed list of complete realized frames.

    The class list comes from select_frames (or a checkpoint), so an
    unobserved frame can never be predicted.
    """

    supports_verb_prediction = True

    def __init__(self, lex: Lexicon, dims: FeatureDims, classes: list[Situation],
                 seed: int = 0, init_scale: float = 0.01):
        if not classes:
            raise CrfError("discrete classifier needs at least one frame class")
        self.lex = lex
        self.dims = dims
        self.classes = list(classes)
        self.class_index = {
            (s.verb, s.fillers): i for i, s in enumerate(self.classes)
        }
        self.store = ParameterStore(seed)
        self.store.add("weight", (len(self.classes), dims.dg), scale=init_scale)
        self.store.add("bias", (len(self.classes),), init="zeros")

    def _logits(self, rec: FeatureRecord) -> np.ndarray:
        return self.store["weight"].data @ rec.global_vec + self.store["bias"].data

    def compute_batch(self, batch, ann_index: int):
        """Cross-entropy over kept frames; examples whose annotation falls
        outside the kept set contribute nothing."""
        feats, targets = [], []
        for ex, rec in batch:
            sit = ex.annotations[ann_index]
            ci = self.class_index.get((sit.verb, sit.fillers))
            if ci is not None:
                feats.append(rec.global_vec)
                targets.append(ci)
        grads = {
            "weight": np.zeros_like(self.store["weight"].data),
            "bias": np.zeros_like(self.store["bias"].data),
        }
        if not feats:
            return 0.0, grads
        x = np.stack(feats)
        logits = x @ self.store["weight"].data.T + self.store["bias"].data
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        rows = np.arange(len(targets))
        nll = -logp[rows, targets].sum() / len(batch)
        delta = np.exp(logp)
        delta[rows, targets] -= 1.0
        delta /= len(batch)
        grads["weight"] = delta.T @ x
        grads["bias"] = delta.sum(axis=0)
        return float(nll), grads

    def rank_scored(self, rec: FeatureRecord, k: int) -> list[tuple[Situation, float]]:
        logits = self._logits(rec)
        order = sorted(range(len(self.classes)), key=lambda i: (-logits[i], i))
        return [(self.classes[i], float(logits[i])) for i in order[:k]]

    def rank_situations(self, rec: FeatureRecord, k: int) -> list[Situation]:
        return [sit for sit, _ in self.rank_scored(rec, k)]

    def conditioned_on_verb(self, rec: FeatureRecord, verb: str) -> Situation:
        logits = self._logits(rec)
        candidates = [
            (i, s) for i, s in enumerate(self.classes) if s.verb == verb
        ]
        if not candidates:
            raise CrfError(f"no kept frames for verb {verb!r}")
        best = max(candidates, key=lambda t: (logits[t[0]], -t[0]))
        return best[1]
