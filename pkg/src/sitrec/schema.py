"""Frame lexicon: vocabularies, per-verb role orderings, and valid tuples.

The lexicon file is a JSON document with top-level keys:

    verbs        list of {"id": verb, "roles": [role ids]}
    nouns        list of noun ids
    valid_tuples list of [verb, role, noun]
    verb_freq    object verb -> training-sample count
    tuple_freq   list of [verb, role, noun, count]

Identifier order in the document fixes all integer indices. The null
filler is an ordinary noun pinned to index 0 and is valid for every
(verb, role) pair.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

NULL_FILLER = "∅"  # reserved noun meaning "unknown or not applicable"

FORWARD = "forward"
REVERSED = "reversed"


class LexiconError(ValueError):
    """Malformed lexicon document or identifier lookup failure."""


class ValidationError(ValueError):
    """A situation or example violates lexicon constraints."""


def _check_direction(direction: str) -> None:
    if direction not in (FORWARD, REVERSED):
        raise ValueError(f"direction must be {FORWARD!r} or {REVERSED!r}, got {direction!r}")


@dataclass(frozen=True)
class Situation:
    """An action verb plus one noun filler per role of the verb's frame.

    Fillers are stored in the lexicon's forward role order.
    """

    verb: str
    fillers: tuple[str, ...]

    def pairs(self, lex: "Lexicon") -> list[tuple[str, str]]:
        """(role, filler) pairs in forward order."""
        return list(zip(lex.frame_of[self.verb], self.fillers))


@dataclass(frozen=True)
class AnnotatedExample:
    """One example: three independent situation annotations over one verb."""

    example_id: str
    verb: str
    annotations: tuple[Situation, ...]
    feature_ref: int


@dataclass(frozen=True)
class Lexicon:
    verbs: tuple[str, ...]
    nouns: tuple[str, ...]  # NULL_FILLER at index 0
    roles: tuple[str, ...]
    frame_of: dict[str, tuple[str, ...]]
    valid_tuples: frozenset[tuple[str, str, str]]
    verb_freq: dict[str, int]
    tuple_freq: dict[tuple[str, str, str], int]
    _verb_index: dict[str, int] = field(repr=False, default_factory=dict)
    _noun_index: dict[str, int] = field(repr=False, default_factory=dict)
    _role_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self._verb_index.update({v: i for i, v in enumerate(self.verbs)})
        self._noun_index.update({n: i for i, n in enumerate(self.nouns)})
        self._role_index.update({r: i for i, r in enumerate(self.roles)})

    @property
    def n_verbs(self) -> int:
        return len(self.verbs)

    @property
    def n_nouns(self) -> int:
        return len(self.nouns)

    def verb_index(self, verb: str) -> int:
        try:
            return self._verb_index[verb]
        except KeyError:
            raise LexiconError(f"unknown verb {verb!r}") from None

    def noun_index(self, noun: str) -> int:
        try:
            return self._noun_index[noun]
        except KeyError:
            raise LexiconError(f"unknown noun {noun!r}") from None

    def has_noun(self, noun: str) -> bool:
        return noun in self._noun_index

    def role_index(self, role: str) -> int:
        try:
            return self._role_index[role]
        except KeyError:
            raise LexiconError(f"unknown role {role!r}") from None

    def valid_nouns(self, verb: str, role: str) -> list[str]:
        """Nouns admissible for (verb, role), in noun-index order."""
        return [n for n in self.nouns if (verb, role, n) in self.valid_tuples]

    def validate_situation(self, sit: Situation, allow_unknown_nouns: bool = False) -> None:
        """Raise ValidationError unless `sit` satisfies the Situation invariants.

        Dev/test annotations may name nouns outside the training vocabulary;
        pass allow_unknown_nouns=True for those (such fillers can never be
        matched by a prediction).
        """
        if sit.verb not in self.frame_of:
            raise ValidationError(f"unknown verb {sit.verb!r}")
        frame = self.frame_of[sit.verb]
        if len(sit.fillers) != len(frame):
            raise ValidationError(
                f"{sit.verb!r} needs {len(frame)} fillers, got {len(sit.fillers)}"
            )
        if not allow_unknown_nouns:
            for f in sit.fillers:
                if f not in self._noun_index:
                    raise ValidationError(f"unknown noun {f!r}")

    def validate_example(self, ex: AnnotatedExample, allow_unknown_nouns: bool = False) -> None:
        if len(ex.annotations) != 3:
            raise ValidationError(
                f"example {ex.example_id!r} has {len(ex.annotations)} annotations, need 3"
            )
        for ann in ex.annotations:
            if ann.verb != ex.verb:
                raise ValidationError(f"example {ex.example_id!r} mixes verbs")
            self.validate_situation(ann, allow_unknown_nouns=allow_unknown_nouns)

    def content_hash(self) -> str:
        """Stable digest of the lexicon content; keys checkpoint compatibility."""
        doc = {
            "verbs": [{"id": v, "roles": list(self.frame_of[v])} for v in self.verbs],
            "nouns": list(self.nouns),
            "valid_tuples": sorted(map(list, self.valid_tuples)),
            "verb_freq": {v: self.verb_freq.get(v, 0) for v in self.verbs},
            "tuple_freq": sorted([*k, c] for k, c in self.tuple_freq.items()),
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_lexicon(verbs: list[tuple[str, list[str]]], nouns: list[str],
                  valid_tuples: list[tuple[str, str, str]],
                  verb_freq: dict[str, int] | None = None,
                  tuple_freq: dict[tuple[str, str, str], int] | None = None) -> Lexicon:
    """Assemble and validate a Lexicon from already-parsed pieces."""
    verb_ids: list[str] = []
    frame_of: dict[str, tuple[str, ...]] = {}
    role_ids: list[str] = []
    seen_roles: set[str] = set()
    for verb, roles in verbs:
        if verb in frame_of:
            raise LexiconError(f"duplicate verb {verb!r}")
        if not roles:
            raise LexiconError(f"verb {verb!r} has an empty role list")
        if len(set(roles)) != len(roles):
            raise LexiconError(f"verb {verb!r} has duplicate roles")
        verb_ids.append(verb)
        frame_of[verb] = tuple(roles)
        for r in roles:
            if r not in seen_roles:
                seen_roles.add(r)
                role_ids.append(r)

    noun_ids: list[str] = [NULL_FILLER]
    seen_nouns = {NULL_FILLER}
    for n in nouns:
        if n in seen_nouns:
            if n == NULL_FILLER:
                continue
            raise LexiconError(f"duplicate noun {n!r}")
        seen_nouns.add(n)
        noun_ids.append(n)

    tuples: set[tuple[str, str, str]] = set()
    for v, r, n in valid_tuples:
        if v not in frame_of:
            raise LexiconError(f"valid_tuple references unknown verb {v!r}")
        if r not in frame_of[v]:
            raise LexiconError(f"valid_tuple role {r!r} not in frame of {v!r}")
        if n not in seen_nouns:
            raise LexiconError(f"valid_tuple references unknown noun {n!r}")
        tuples.add((v, r, n))
    # The null filler is admissible everywhere, observed or not.
    for v, roles in frame_of.items():
        for r in roles:
            tuples.add((v, r, NULL_FILLER))

    vf = dict(verb_freq or {})
    for v in vf:
        if v not in frame_of:
            raise LexiconError(f"verb_freq references unknown verb {v!r}")
    tf: dict[tuple[str, str, str], int] = {}
    for key, count in (tuple_freq or {}).items():
        v, r, n = key
        if (v, r, n) not in tuples:
            raise LexiconError(f"tuple_freq references invalid tuple {key!r}")
        tf[key] = int(count)

    return Lexicon(
        verbs=tuple(verb_ids),
        nouns=tuple(noun_ids),
        roles=tuple(role_ids),
        frame_of=frame_of,
        valid_tuples=frozenset(tuples),
        verb_freq=vf,
        tuple_freq=tf,
    )


def parse_lexicon(text: str) -> Lexicon:
    """Parse the JSON lexicon document; index assignment is document order."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise LexiconError(f"lexicon is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise LexiconError("lexicon document must be a JSON object")
    for key in ("verbs", "nouns"):
        if key not in doc:
            raise LexiconError(f"lexicon missing key {key!r}")
    verbs = []
    for entry in doc["verbs"]:
        if not isinstance(entry, dict) or "id" not in entry or "roles" not in entry:
            raise LexiconError("each verb entry needs 'id' and 'roles'")
        verbs.append((entry["id"], list(entry["roles"])))
    tuple_freq = {}
    for item in doc.get("tuple_freq", []):
        if len(item) != 4:
            raise LexiconError("tuple_freq entries are [verb, role, noun, count]")
        v, r, n, c = item
        tuple_freq[(v, r, n)] = int(c)
    return build_lexicon(
        verbs=verbs,
        nouns=list(doc["nouns"]),
        valid_tuples=[tuple(t) for t in doc.get("valid_tuples", [])],
        verb_freq={v: int(c) for v, c in doc.get("verb_freq", {}).items()},
        tuple_freq=tuple_freq,
    )


def serialize_lexicon(lex: Lexicon) -> str:
    """Inverse of parse_lexicon; parse(serialize(lex)) reproduces lex."""
    doc = {
        "verbs": [{"id": v, "roles": list(lex.frame_of[v])} for v in lex.verbs],
        "nouns": [n for n in lex.nouns if n != NULL_FILLER],
        "valid_tuples": sorted(map(list, lex.valid_tuples)),
        "verb_freq": {v: lex.verb_freq.get(v, 0) for v in lex.verbs},
        "tuple_freq": sorted([*k, c] for k, c in lex.tuple_freq.items()),
    }
    return json.dumps(doc, indent=2, ensure_ascii=False)


def role_order(lex: Lexicon, verb: str, direction: str = FORWARD) -> tuple[str, ...]:
    """The verb's role list as stored, or its exact reversal."""
    _check_direction(direction)
    if verb not in lex.frame_of:
        raise LexiconError(f"unknown verb {verb!r}")
    frame = lex.frame_of[verb]
    return frame if direction == FORWARD else tuple(reversed(frame))


def encode_targets(lex: Lexicon, sit: Situation, direction: str = FORWARD) -> list[int]:
    """Noun indices of the fillers, permuted into the requested role order."""
    _check_direction(direction)
    lex.validate_situation(sit)
    idx = [lex.noun_index(f) for f in sit.fillers]
    return idx if direction == FORWARD else idx[::-1]


def decode_tokens(lex: Lexicon, verb: str, tokens, direction: str = FORWARD) -> Situation:
    """Inverse of encode_targets: token index sequence -> Situation."""
    _check_direction(direction)
    if verb not in lex.frame_of:
        raise LexiconError(f"unknown verb {verb!r}")
    frame = lex.frame_of[verb]
    tokens = list(tokens)
    if len(tokens) != len(frame):
        raise ValidationError(
            f"{verb!r} needs {len(frame)} tokens, got {len(tokens)}"
        )
    for t in tokens:
        if not 0 <= int(t) < len(lex.nouns):
            raise ValidationError(f"noun index {t} out of range")
    if direction == REVERSED:
        tokens = tokens[::-1]
    return Situation(verb=verb, fillers=tuple(lex.nouns[int(t)] for t in tokens))
