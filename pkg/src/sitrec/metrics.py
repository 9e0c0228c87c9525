"""Scoring of predicted situations against triple-annotated ground truth.

Settings: top1 scores the single best prediction, top5 looks for the
ground-truth verb among the first five, gtverb scores a decode that was
conditioned on the true verb. A predicted role filler counts as correct
when it equals that role's filler in ANY of the three annotations (each
role may match a different annotation); value is the per-role match rate,
value-all the all-roles flag. Under the predicted-verb settings a wrong
verb zeroes both. Fillers outside the training vocabulary can occur in
dev/test annotations; predictions always come from the vocabulary, so
plain identifier equality implements the never-match rule for them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .schema import AnnotatedExample, Lexicon, Situation

TOP1 = "top1"
TOP5 = "top5"
GTVERB = "gtverb"
SETTINGS = (TOP1, TOP5, GTVERB)

METRIC_KEYS = (
    "verb@1", "value@1", "value-all@1",
    "verb@5", "value@5", "value-all@5",
    "value@gt", "value-all@gt", "mean",
)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    """The nine-entry table; mean averages the other eight entries."""

    verb_top1: float | None = None
    value_top1: float | None = None
    value_all_top1: float | None = None
    verb_top5: float | None = None
    value_top5: float | None = None
    value_all_top5: float | None = None
    value_gt: float | None = None
    value_all_gt: float | None = None

    @property
    def mean(self) -> float | None:
        parts = (
            self.verb_top1, self.value_top1, self.value_all_top1,
            self.verb_top5, self.value_top5, self.value_all_top5,
            self.value_gt, self.value_all_gt,
        )
        if any(p is None for p in parts):
            return None
        return sum(parts) / len(parts)

    def as_dict(self) -> dict[str, float | None]:
        return {
            "verb@1": self.verb_top1,
            "value@1": self.value_top1,
            "value-all@1": self.value_all_top1,
            "verb@5": self.verb_top5,
            "value@5": self.value_top5,
            "value-all@5": self.value_all_top5,
            "value@gt": self.value_gt,
            "value-all@gt": self.value_all_gt,
            "mean": self.mean,
        }

    def get(self, key: str) -> float | None:
        return self.as_dict()[key]

    def render(self) -> str:
        cells = [
            "-" if v is None else f"{v:.2f}" for v in self.as_dict().values()
        ]
        widths = [max(len(k), len(c)) for k, c in zip(METRIC_KEYS, cells)]
        head = "  ".join(k.rjust(w) for k, w in zip(METRIC_KEYS, widths))
        row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return head + "\n" + row


@dataclass
class ExampleScore:
    example_id: str
    verb: str
    results: dict[str, tuple[bool, float, bool]]


def _match_frame(pred: Situation, gt: AnnotatedExample,
                 value_all_single_annotation: bool) -> tuple[float, bool]:
    n = len(pred.fillers)
    matched = [
        any(ann.fillers[i] == pred.fillers[i] for ann in gt.annotations)
        for i in range(n)
    ]
    value = sum(matched) / n
    if value_all_single_annotation:
        value_all = any(
            all(ann.fillers[i] == pred.fillers[i] for i in range(n))
            for ann in gt.annotations
        )
    else:
        value_all = all(matched)
    return value, value_all


def score_example(lex: Lexicon, predictions: list[Situation], gt: AnnotatedExample,
                  setting: str, value_all_single_annotation: bool = False
                  ) -> tuple[bool, float, bool]:
    """(verb_correct, value fraction, value_all flag) for one example."""
    if setting not in SETTINGS:
        raise MetricsError(f"unknown setting {setting!r}")
    if not predictions:
        raise MetricsError("no predictions to score")
    for p in predictions:
        lex.validate_situation(p, allow_unknown_nouns=True)

    if setting == GTVERB:
        if predictions[0].verb != gt.verb:
            raise MetricsError(
                f"gtverb scoring for {gt.example_id!r} needs a prediction "
                f"conditioned on the ground-truth verb"
            )
        value, value_all = _match_frame(predictions[0], gt, value_all_single_annotation)
        return True, value, value_all

    pool = predictions[:1] if setting == TOP1 else predictions[:5]
    chosen = next((p for p in pool if p.verb == gt.verb), None)
    if chosen is None:
        return False, 0.0, False
    value, value_all = _match_frame(chosen, gt, value_all_single_annotation)
    return True, value, value_all


def aggregate(scores: list[ExampleScore]) -> Metrics:
    """Percentages over examples for every setting present in the records."""
    if not scores:
        raise MetricsError("cannot aggregate an empty record set")

    def setting_stats(setting: str):
        rows = [s.results[setting] for s in scores if setting in s.results]
        if not rows:
            return None, None, None
        if len(rows) != len(scores):
            raise MetricsError(f"setting {setting!r} scored for only part of the examples")
        n = len(rows)
        verb = 100.0 * sum(r[0] for r in rows) / n
        value = 100.0 * sum(r[1] for r in rows) / n
        value_all = 100.0 * sum(r[2] for r in rows) / n
        return verb, value, value_all

    v1, val1, vall1 = setting_stats(TOP1)
    v5, val5, vall5 = setting_stats(TOP5)
    _, valg, vallg = setting_stats(GTVERB)
    return Metrics(
        verb_top1=v1, value_top1=val1, value_all_top1=vall1,
        verb_top5=v5, value_top5=val5, value_all_top5=vall5,
        value_gt=valg, value_all_gt=vallg,
    )


def rare_filter(lex: Lexicon, examples: list[AnnotatedExample]) -> list[AnnotatedExample]:
    """Examples whose verb has ten or fewer training samples (inclusive)."""
    return [ex for ex in examples if lex.verb_freq.get(ex.verb, 0) <= 10]


def per_verb_report(scores: list[ExampleScore], setting: str = TOP1
                    ) -> list[tuple[str, float]]:
    """Verb-conditional verb-prediction accuracy, worst first."""
    totals: dict[str, list[int]] = {}
    for s in scores:
        if setting not in s.results:
            continue
        hit, total = totals.setdefault(s.verb, [0, 0])
        totals[s.verb][0] = hit + bool(s.results[setting][0])
        totals[s.verb][1] = total + 1
    report = [(verb, 100.0 * h / t) for verb, (h, t) in totals.items()]
    report.sort(key=lambda vt: (vt[1], vt[0]))
    return report
