from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianoroll_event.baselines import (
    ABC,
    MIDILIKE,
    REMI,
    BaselineScheme,
    BpeModel,
    Note,
    SchemeName,
    abc_pitch,
    abc_serialize,
    bpe_apply,
    bpe_decode,
    bpe_train,
    extract_notes,
    midilike_detokenize,
    midilike_tokenize,
    midilike_tokens,
    remi_detokenize,
    remi_tokenize,
    remi_tokens,
    scheme_vocabulary,
)
from pianoroll_event.codec import TokenSequence
from pianoroll_event.errors import (
    BarAlignmentError,
    ConfigInvariantViolation,
    EmptyCorpus,
    MixedVocabularies,
    UnknownToken,
)
from pianoroll_event.pianoroll import Pianoroll, TimeSignatureEvent

from conftest import random_roll, rolls


def roll_with(notes, T=64, spb=16, timesigs=None):
    cells = np.zeros((88, T), dtype=bool)
    for onset, pitch, dur in notes:
        cells[pitch - 21, onset : onset + dur] = True
    return Pianoroll(cells, spb, timesigs or (TimeSignatureEvent(0, 4, 4),))


def names(toks):
    return [t.name for t in toks]


# --- vocabularies ----------------------------------------------------------------


def test_vocab_sizes():
    assert scheme_vocabulary(REMI).size == 1 + 64 + 88 + 64 + 4
    assert scheme_vocabulary(MIDILIKE).size == 88 + 88 + 64
    assert scheme_vocabulary(ABC).size == 128


def test_scheme_must_cover_a_bar():
    with pytest.raises(ConfigInvariantViolation):
        BaselineScheme(SchemeName.REMI_LITE, max_duration=32)
    with pytest.raises(ConfigInvariantViolation):
        BaselineScheme(SchemeName.MIDILIKE_LITE, max_shift=0)


# --- note extraction -------------------------------------------------------------------


def test_extract_notes_runs():
    roll = roll_with([(0, 60, 4), (4, 60, 4), (2, 64, 1)])
    # two adjacent runs on one row merge into one note
    assert extract_notes(roll) == [Note(0, 60, 8), Note(2, 64, 1)]


# --- REMI ---------------------------------------------------------------------------


def test_remi_single_note():
    assert names(remi_tokens(roll_with([(0, 60, 16)]))) == ["TS_4/4", "Bar", "Position_0", "Pitch_60", "Duration_16"]


def test_remi_empty_bar():
    assert names(remi_tokens(roll_with([]))) == ["TS_4/4", "Bar"]


def test_remi_chord_grouping():
    toks = names(remi_tokens(roll_with([(0, 64, 8), (0, 60, 16)])))
    assert toks == ["TS_4/4", "Bar", "Position_0", "Pitch_60", "Duration_16", "Pitch_64", "Duration_8"]


def test_remi_positions_are_bar_relative():
    toks = names(remi_tokens(roll_with([(70, 62, 2)], T=128)))
    assert toks == ["TS_4/4", "Bar", "Bar", "Position_6", "Pitch_62", "Duration_2"]


def test_remi_timesig_change():
    sigs = (TimeSignatureEvent(0, 4, 4), TimeSignatureEvent(1, 3, 4))
    toks = names(remi_tokens(roll_with([], T=112, timesigs=sigs)))
    assert toks == ["TS_4/4", "Bar", "TS_3/4", "Bar"]


def test_remi_long_note_is_split():
    toks = names(remi_tokens(roll_with([(0, 60, 100)], T=128)))
    assert toks == ["TS_4/4", "Bar", "Position_0", "Pitch_60", "Duration_64", "Bar", "Position_0", "Pitch_60", "Duration_36"]


def test_remi_bar_alignment():
    scheme = BaselineScheme(SchemeName.REMI_LITE, position_bins=32, max_duration=64, max_shift=64)
    with pytest.raises(BarAlignmentError):
        remi_tokens(roll_with([(0, 60, 1)]), scheme)


@given(rolls(max_T=256))
@settings(max_examples=100, deadline=None)
def test_remi_roundtrip(roll):
    back = remi_detokenize(remi_tokenize(roll))
    assert back == roll


# --- MIDI-like ---------------------------------------------------------------------


def test_midilike_single_note():
    assert names(midilike_tokens(roll_with([(0, 60, 16)]))) == ["NoteOn_60", "TimeShift_16", "NoteOff_60"]


def test_midilike_empty():
    assert midilike_tokens(roll_with([])) == []


def test_midilike_shift_split():
    toks = names(midilike_tokens(roll_with([(0, 60, 1), (101, 60, 1)], T=128)))
    assert toks == ["NoteOn_60", "TimeShift_1", "NoteOff_60", "TimeShift_64", "TimeShift_36",
                    "NoteOn_60", "TimeShift_1", "NoteOff_60"]


def test_midilike_offs_before_ons():
    toks = names(midilike_tokens(roll_with([(0, 64, 4), (0, 60, 4), (4, 62, 4)])))
    assert toks == ["NoteOn_60", "NoteOn_64", "TimeShift_4", "NoteOff_60", "NoteOff_64", "NoteOn_62",
                    "TimeShift_4", "NoteOff_62"]


@given(rolls(max_T=256))
@settings(max_examples=100, deadline=None)
def test_midilike_roundtrip(roll):
    assert np.array_equal(midilike_detokenize(midilike_tokenize(roll)), roll.cells)


# --- ABC ---------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "midi,text",
    [(60, "C"), (61, "^C"), (71, "B"), (72, "c"), (84, "c'"), (48, "C,"), (21, "A,,,,"), (108, "c'''")],
)
def test_abc_pitch(midi, text):
    assert abc_pitch(midi) == text


def test_abc_single_note():
    text = abc_serialize(roll_with([(0, 60, 16)]))
    assert text == "X:1\nM:4/4\nL:1/64\nK:C\nC16 z48 |\n"


def test_abc_empty_bar():
    text = abc_serialize(roll_with([]))
    assert text.splitlines()[-1] == "z64 |"


def test_abc_header_only_length_positive():
    text = abc_serialize(roll_with([]))
    assert len(text) > len("z64 |")


def test_abc_chord_and_tie():
    text = abc_serialize(roll_with([(0, 60, 4), (0, 64, 4), (60, 67, 8)], T=128))
    body = text.splitlines()[-1]
    assert body == "[CE]4 z56 G4- | G4 z60 |"


def test_abc_is_ascii(rng):
    text = abc_serialize(random_roll(rng, 128, 0.1))
    assert all(ord(c) < 128 for c in text)


# --- BPE ------------------------------------------------------------------------------


def seq(ids, h=7):
    return TokenSequence(ids, h)


def brute_force_bpe(corpus, merges, base_size):
    """Plain-list BPE used as an oracle."""
    seqs = [list(s) for s in corpus]
    out = []
    for k in range(merges):
        counts = Counter()
        for s in seqs:
            counts.update(zip(s, s[1:]))
        if not counts or max(counts.values()) < 2:
            break
        top = max(counts.values())
        a, b = min(p for p, c in counts.items() if c == top)
        new = base_size + k
        out.append((a, b, new))
        merged = []
        for s in seqs:
            r, i = [], 0
            while i < len(s):
                if i + 1 < len(s) and s[i] == a and s[i + 1] == b:
                    r.append(new)
                    i += 2
                else:
                    r.append(s[i])
                    i += 1
            merged.append(r)
        seqs = merged
    return out, seqs


def test_bpe_smallest_case():
    A, B = 0, 1
    model = bpe_train([seq([A, A, A, B])], 1, base_size=2)
    assert model.merges == ((A, A, 2),)
    applied = bpe_apply(model, seq([A, A, A, B]))
    assert applied.ids.tolist() == [2, A, B]
    assert bpe_decode(model, applied).ids.tolist() == [A, A, A, B]


def test_bpe_zero_merges_is_identity():
    model = bpe_train([seq([1, 2, 3, 1, 2])], 0, base_size=4)
    assert model.n_merges == 0 and model.vocab_size == 4
    assert bpe_apply(model, seq([1, 2, 3])).ids.tolist() == [1, 2, 3]


def test_bpe_tie_break():
    # (3,4), (4,0), (0,1) and (1,2) each occur twice; (0,1) is the smallest
    corpus = [seq([3, 4, 0, 1, 2, 0, 3, 4, 0, 1, 2])]
    model = bpe_train(corpus, 1, base_size=5)
    assert model.merges[0][:2] == (0, 1)
    expected, _ = brute_force_bpe([s.ids.tolist() for s in corpus], 1, 5)
    assert list(model.merges) == expected


def test_bpe_stops_without_repeats():
    model = bpe_train([seq([0, 1, 2, 3])], 10, base_size=4)
    assert model.n_merges == 0


def test_bpe_pairs_do_not_cross_sequences():
    model = bpe_train([seq([0, 1]), seq([1, 0]), seq([1, 0])], 5, base_size=2)
    assert [m[:2] for m in model.merges] == [(1, 0)]


@given(
    st.lists(st.lists(st.integers(0, 5), max_size=40), min_size=1, max_size=8),
    st.integers(0, 20),
)
@settings(max_examples=200, deadline=None)
def test_bpe_matches_brute_force(corpus, merges):
    model = bpe_train([seq(s) for s in corpus], merges, base_size=6)
    expected, merged = brute_force_bpe(corpus, merges, 6)
    assert list(model.merges) == expected
    for s, m in zip(corpus, merged):
        applied = bpe_apply(model, seq(s))
        assert applied.ids.tolist() == m
        assert bpe_decode(model, applied).ids.tolist() == s
        assert len(applied) <= len(s)


def test_bpe_errors():
    with pytest.raises(EmptyCorpus):
        bpe_train([], 3)
    with pytest.raises(MixedVocabularies):
        bpe_train([seq([1, 2], h=1), seq([1, 2], h=2)], 3)
    model = bpe_train([seq([0, 1, 0, 1])], 1, base_size=2)
    with pytest.raises(UnknownToken):
        bpe_apply(model, seq([0, 5]))
    with pytest.raises(UnknownToken):
        bpe_decode(model, seq([9]))


def test_bpe_model_text_roundtrip(rng):
    corpus = [seq(rng.integers(0, 10, 200).tolist()) for _ in range(5)]
    model = bpe_train(corpus, 30, base_size=10)
    text = model.to_text()
    assert text.splitlines()[0] == f"#bpe v1 base={7:016x} merges={model.n_merges} size=10"
    back = BpeModel.from_text(text)
    assert back.merges == model.merges and back.to_text() == text
    assert back.vocab_size == 10 + model.n_merges


def test_bpe_on_remi_shortens(rng):
    corpus = [remi_tokenize(random_roll(rng, 128, 0.05)) for _ in range(10)]
    base = scheme_vocabulary(REMI)
    model = bpe_train(corpus, 20, base_size=len(base))
    assert model.n_merges == 20
    assert sum(len(bpe_apply(model, s)) for s in corpus) < sum(len(s) for s in corpus)
