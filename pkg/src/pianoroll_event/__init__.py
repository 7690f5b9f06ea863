"""Pianoroll-Event: a lossless event codec for binary pianorolls, with
baseline tokenizers and evaluation metrics."""

from .codec import (
    EncodingConfig,
    Mode,
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_frame,
    encode_pianoroll,
    pattern_block,
    pattern_id,
)
from .pianoroll import (
    Frame,
    Pianoroll,
    TimeSignatureEvent,
    midi_to_pianoroll,
    read_prl,
    split_frames,
    write_prl,
)

__version__ = "0.1.0"

__all__ = [
    "EncodingConfig",
    "Frame",
    "Mode",
    "Pianoroll",
    "TimeSignatureEvent",
    "TokenSequence",
    "Vocabulary",
    "build_vocabulary",
    "decode_tokens",
    "encode_frame",
    "encode_pianoroll",
    "midi_to_pianoroll",
    "pattern_block",
    "pattern_id",
    "read_prl",
    "split_frames",
    "write_prl",
]
