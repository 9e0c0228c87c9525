"""Lexicon parsing, role ordering, and token encode/decode round-trips."""

import json

import numpy as np
import pytest

from sitrec.schema import (
    FORWARD,
    NULL_FILLER,
    REVERSED,
    AnnotatedExample,
    LexiconError,
    Situation,
    ValidationError,
    decode_tokens,
    encode_targets,
    parse_lexicon,
    role_order,
    serialize_lexicon,
)

ARRANGING_DOC = json.dumps({
    "verbs": [
        {"id": "arranging", "roles": ["Agent", "Item", "Tool", "Place"]},
        {"id": "rearing", "roles": ["Agent", "Place"]},
    ],
    "nouns": ["woman", "flowers", "vase", "countertop", "horse", "outside"],
    "valid_tuples": [
        ["arranging", "Agent", "woman"],
        ["arranging", "Item", "flowers"],
        ["arranging", "Tool", "vase"],
        ["arranging", "Place", "countertop"],
        ["rearing", "Agent", "horse"],
        ["rearing", "Place", "outside"],
    ],
    "verb_freq": {"arranging": 12, "rearing": 3},
    "tuple_freq": [["arranging", "Agent", "woman", 12]],
})


@pytest.fixture
def lex():
    return parse_lexicon(ARRANGING_DOC)


class TestParseLexicon:
    def test_frame_preserves_document_order(self, lex):
        assert lex.frame_of["arranging"] == ("Agent", "Item", "Tool", "Place")

    def test_minimal_lexicon_gets_null_token(self):
        doc = json.dumps({
            "verbs": [{"id": "v", "roles": ["r"]}],
            "nouns": ["n"],
            "valid_tuples": [["v", "r", "n"]],
        })
        small = parse_lexicon(doc)
        assert small.n_verbs == 1
        assert len(small.roles) == 1
        assert small.n_nouns == 2  # the noun plus the null filler
        assert small.nouns[0] == NULL_FILLER

    def test_null_filler_valid_for_every_role(self, lex):
        for verb in lex.verbs:
            for role in lex.frame_of[verb]:
                assert (verb, role, NULL_FILLER) in lex.valid_tuples

    def test_tuple_with_foreign_role_rejected(self):
        doc = json.loads(ARRANGING_DOC)
        doc["valid_tuples"].append(["rearing", "Tool", "horse"])
        with pytest.raises(LexiconError):
            parse_lexicon(json.dumps(doc))

    def test_duplicate_verb_rejected(self):
        doc = json.loads(ARRANGING_DOC)
        doc["verbs"].append({"id": "arranging", "roles": ["Agent"]})
        with pytest.raises(LexiconError):
            parse_lexicon(json.dumps(doc))

    def test_empty_role_list_rejected(self):
        doc = json.loads(ARRANGING_DOC)
        doc["verbs"].append({"id": "idling", "roles": []})
        with pytest.raises(LexiconError):
            parse_lexicon(json.dumps(doc))

    def test_duplicate_noun_rejected(self):
        doc = json.loads(ARRANGING_DOC)
        doc["nouns"].append("woman")
        with pytest.raises(LexiconError):
            parse_lexicon(json.dumps(doc))

    def test_unknown_noun_in_tuple_rejected(self):
        doc = json.loads(ARRANGING_DOC)
        doc["valid_tuples"].append(["arranging", "Agent", "ghost"])
        with pytest.raises(LexiconError):
            parse_lexicon(json.dumps(doc))

    def test_not_json_rejected(self):
        with pytest.raises(LexiconError):
            parse_lexicon("not json at all {")

    def test_serialize_parse_roundtrip(self, lex):
        again = parse_lexicon(serialize_lexicon(lex))
        assert again.verbs == lex.verbs
        assert again.nouns == lex.nouns
        assert again.frame_of == lex.frame_of
        assert again.valid_tuples == lex.valid_tuples
        assert again.verb_freq == lex.verb_freq
        assert again.tuple_freq == lex.tuple_freq
        assert again.content_hash() == lex.content_hash()

    def test_index_maps_are_bijective(self, lex):
        assert sorted(lex.verb_index(v) for v in lex.verbs) == list(range(lex.n_verbs))
        assert sorted(lex.noun_index(n) for n in lex.nouns) == list(range(lex.n_nouns))


class TestRoleOrder:
    def test_forward_and_reversed(self, lex):
        assert role_order(lex, "arranging", FORWARD) == ("Agent", "Item", "Tool", "Place")
        assert role_order(lex, "arranging", REVERSED) == ("Place", "Tool", "Item", "Agent")

    def test_reversal_property_for_every_verb(self, lex):
        for verb in lex.verbs:
            fwd = role_order(lex, verb, FORWARD)
            assert role_order(lex, verb, REVERSED) == tuple(reversed(fwd))

    def test_single_role_is_fixed_point(self):
        doc = json.dumps({"verbs": [{"id": "v", "roles": ["r"]}], "nouns": ["n"]})
        small = parse_lexicon(doc)
        assert role_order(small, "v", FORWARD) == role_order(small, "v", REVERSED) == ("r",)

    def test_unknown_verb_rejected(self, lex):
        with pytest.raises(LexiconError):
            role_order(lex, "flying", FORWARD)

    def test_bad_direction_rejected(self, lex):
        with pytest.raises(ValueError):
            role_order(lex, "arranging", "backwards")


class TestEncodeDecode:
    def test_encode_forward_example(self, lex):
        sit = Situation("arranging", ("woman", "flowers", "vase", "countertop"))
        expect = [lex.noun_index(n) for n in sit.fillers]
        assert encode_targets(lex, sit, FORWARD) == expect
        assert encode_targets(lex, sit, REVERSED) == expect[::-1]

    def test_all_null_fillers(self, lex):
        sit = Situation("arranging", (NULL_FILLER,) * 4)
        assert encode_targets(lex, sit) == [0, 0, 0, 0]

    def test_decode_single_role_null(self):
        doc = json.dumps({"verbs": [{"id": "v", "roles": ["r"]}], "nouns": ["n"]})
        small = parse_lexicon(doc)
        sit = decode_tokens(small, "v", [0])
        assert sit == Situation("v", (NULL_FILLER,))

    def test_roundtrip_on_random_situations(self, lex):
        """decode(encode(s)) == s over 100 random situations, both directions."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            verb = lex.verbs[rng.integers(lex.n_verbs)]
            fillers = tuple(
                lex.nouns[rng.integers(lex.n_nouns)] for _ in lex.frame_of[verb]
            )
            sit = Situation(verb, fillers)
            for direction in (FORWARD, REVERSED):
                tokens = encode_targets(lex, sit, direction)
                assert decode_tokens(lex, verb, tokens, direction) == sit

    def test_length_mismatch_rejected(self, lex):
        with pytest.raises(ValidationError):
            decode_tokens(lex, "rearing", [0, 0, 0])

    def test_out_of_range_token_rejected(self, lex):
        with pytest.raises(ValidationError):
            decode_tokens(lex, "rearing", [0, lex.n_nouns])

    def test_invalid_situation_rejected(self, lex):
        with pytest.raises(ValidationError):
            encode_targets(lex, Situation("arranging", ("woman", "flowers")))


class TestExampleValidation:
    def test_three_matching_annotations_pass(self, lex):
        ann = Situation("rearing", ("horse", "outside"))
        ex = AnnotatedExample("e0", "rearing", (ann, ann, ann), 0)
        lex.validate_example(ex)

    def test_wrong_count_rejected(self, lex):
        ann = Situation("rearing", ("horse", "outside"))
        with pytest.raises(ValidationError):
            lex.validate_example(AnnotatedExample("e0", "rearing", (ann, ann), 0))

    def test_mixed_verbs_rejected(self, lex):
        a = Situation("rearing", ("horse", "outside"))
        b = Situation("arranging", ("woman", "flowers", "vase", "countertop"))
        with pytest.raises(ValidationError):
            lex.validate_example(AnnotatedExample("e0", "rearing", (a, a, b), 0))

    def test_unknown_noun_allowed_only_when_requested(self, lex):
        ann = Situation("rearing", ("unicorn", "outside"))
        ex = AnnotatedExample("e0", "rearing", (ann, ann, ann), 0)
        with pytest.raises(ValidationError):
            lex.validate_example(ex)
        lex.validate_example(ex, allow_unknown_nouns=True)
