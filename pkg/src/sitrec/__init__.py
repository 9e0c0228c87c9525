"""Sequential prediction of action frames (verb + ordered role fillers),
with an exact CRF baseline, trained on synthetic planted-signal data."""

__version__ = "0.1.0"

from .schema import (  # noqa: F401
    FORWARD,
    NULL_FILLER,
    REVERSED,
    AnnotatedExample,
    Lexicon,
    Situation,
    decode_tokens,
    encode_targets,
    parse_lexicon,
    role_order,
    serialize_lexicon,
)
