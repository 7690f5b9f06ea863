"""Reference tokenizations used for efficiency comparisons.

These are deliberately small versions of REMI, MIDI-Like and ABC, plus a
greedy BPE trainer over integer token ids. Notes are recovered from the
binary roll as maximal horizontal runs of active cells, so every scheme
here sees exactly the same note list.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .codec import DEFAULT_TIMESIG_SET, TokenSequence, Vocabulary
from .errors import (
    BarAlignmentError,
    ConfigInvariantViolation,
    ConfigMismatch,
    EmptyCorpus,
    MixedVocabularies,
    NonCanonicalSequence,
    PitchOutOfAbcRange,
    UnknownToken,
    UnsupportedTimeSig,
)
from .pianoroll import DEFAULT_STEPS_PER_BEAT, LOWEST_PITCH, N_PITCHES, Pianoroll, bar_length


class SchemeName(enum.Enum):
    REMI_LITE = "remi"
    MIDILIKE_LITE = "midilike"
    ABC_LITE = "abc"


@dataclass(frozen=True)
class Tok:
    kind: str
    value: object = None

    @property
    def name(self) -> str:
        if self.value is None:
            return self.kind
        if isinstance(self.value, tuple):
            return f"{self.kind}_{self.value[0]}/{self.value[1]}"
        return f"{self.kind}_{self.value}"


@dataclass(frozen=True)
class BaselineScheme:
    name: SchemeName = SchemeName.REMI_LITE
    steps_per_beat: int = DEFAULT_STEPS_PER_BEAT
    timesig_set: tuple[tuple[int, int], ...] = DEFAULT_TIMESIG_SET
    position_bins: int = 64
    max_duration: int = 64
    max_shift: int = 64

    def __post_init__(self):
        object.__setattr__(self, "name", SchemeName(self.name))
        if min(self.position_bins, self.max_duration, self.max_shift) < 1:
            raise ConfigInvariantViolation("bin counts must be positive")
        longest = max(bar_length(n, d, self.steps_per_beat) for n, d in self.timesig_set)
        if self.max_duration < longest or self.max_shift < longest:
            raise ConfigInvariantViolation(f"duration and shift bins must cover a {longest}-step bar")

    @property
    def hash(self) -> int:
        blob = json.dumps(
            {
                "name": self.name.value,
                "steps_per_beat": self.steps_per_beat,
                "timesig_set": [list(t) for t in self.timesig_set],
                "position_bins": self.position_bins,
                "max_duration": self.max_duration,
                "max_shift": self.max_shift,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


REMI = BaselineScheme(SchemeName.REMI_LITE)
MIDILIKE = BaselineScheme(SchemeName.MIDILIKE_LITE)
ABC = BaselineScheme(SchemeName.ABC_LITE)

_PITCHES = range(LOWEST_PITCH, LOWEST_PITCH + N_PITCHES)


def scheme_vocabulary(scheme: BaselineScheme) -> Vocabulary:
    if scheme.name is SchemeName.REMI_LITE:
        toks = [Tok("Bar")]
        toks += [Tok("Position", p) for p in range(scheme.position_bins)]
        toks += [Tok("Pitch", k) for k in _PITCHES]
        toks += [Tok("Duration", d) for d in range(1, scheme.max_duration + 1)]
        toks += [Tok("TS", ts) for ts in scheme.timesig_set]
    elif scheme.name is SchemeName.MIDILIKE_LITE:
        toks = [Tok("NoteOn", k) for k in _PITCHES]
        toks += [Tok("NoteOff", k) for k in _PITCHES]
        toks += [Tok("TimeShift", d) for d in range(1, scheme.max_shift + 1)]
    else:
        # ABC is measured in characters over the 7-bit ASCII table
        toks = [Tok("Char", c) for c in range(128)]
    return Vocabulary(scheme.hash, tuple(toks))


@dataclass(frozen=True, order=True)
class Note:
    onset: int
    pitch: int  # MIDI number
    duration: int

    @property
    def offset(self) -> int:
        return self.onset + self.duration


def extract_notes(roll: Pianoroll) -> list[Note]:
    """Maximal runs of 1s per pitch row, sorted by (onset, pitch)."""
    c = roll.cells.astype(np.int8)
    padded = np.pad(c, ((0, 0), (1, 1)))
    diff = np.diff(padded, axis=1)
    on_r, on_t = np.nonzero(diff == 1)
    off_r, off_t = np.nonzero(diff == -1)
    # nonzero() is row-major, so starts and ends pair up in order
    order = np.lexsort((on_r, on_t))
    return [
        Note(int(on_t[i]), int(on_r[i]) + LOWEST_PITCH, int(off_t[i] - on_t[i]))
        for i in order
    ]


def _check_grid(roll: Pianoroll, scheme: BaselineScheme):
    if roll.steps_per_beat != scheme.steps_per_beat:
        raise ConfigMismatch(f"roll grid {roll.steps_per_beat} != scheme grid {scheme.steps_per_beat}")
    for m in roll.measures():
        if (m.numerator, m.denominator) not in scheme.timesig_set:
            raise UnsupportedTimeSig(f"{m.numerator}/{m.denominator} is not in the scheme's timesig_set")


def _split(notes: Iterable[Note], max_len: int) -> list[Note]:
    """Cut notes into consecutive pieces of at most max_len steps."""
    out = []
    for n in notes:
        start, left = n.onset, n.duration
        while left > 0:
            d = min(left, max_len)
            out.append(Note(start, n.pitch, d))
            start += d
            left -= d
    return sorted(out)


def remi_tokens(roll: Pianoroll, scheme: BaselineScheme = REMI) -> list[Tok]:
    _check_grid(roll, scheme)
    measures = roll.measures()
    for m in measures:
        if m.length > scheme.position_bins:
            raise BarAlignmentError(f"bar of {m.length} steps exceeds {scheme.position_bins} position bins")
    notes = _split(extract_notes(roll), scheme.max_duration)
    changes = {ts.start_measure: ts.signature for ts in roll.timesigs}
    out = [Tok("TS", roll.timesigs[0].signature)]
    k = 0
    for m in measures:
        if m.index and m.index in changes:
            out.append(Tok("TS", changes[m.index]))
        out.append(Tok("Bar"))
        last_onset = None
        while k < len(notes) and notes[k].onset < m.end:
            n = notes[k]
            if n.onset != last_onset:
                out.append(Tok("Position", n.onset - m.start))
                last_onset = n.onset
            out += [Tok("Pitch", n.pitch), Tok("Duration", n.duration)]
            k += 1
    return out


def midilike_tokens(roll: Pianoroll, scheme: BaselineScheme = MIDILIKE) -> list[Tok]:
    if roll.steps_per_beat != scheme.steps_per_beat:
        raise ConfigMismatch(f"roll grid {roll.steps_per_beat} != scheme grid {scheme.steps_per_beat}")
    events = []
    for n in extract_notes(roll):
        events.append((n.onset, 1, n.pitch))
        events.append((n.offset, 0, n.pitch))
    # at equal times: offs before ons, each ascending by pitch
    events.sort()
    out = []
    now = 0
    for t, is_on, pitch in events:
        while t > now:
            d = min(t - now, scheme.max_shift)
            out.append(Tok("TimeShift", d))
            now += d
        out.append(Tok("NoteOn" if is_on else "NoteOff", pitch))
    return out


def _to_sequence(toks: list[Tok], scheme: BaselineScheme, T: int) -> TokenSequence:
    vocab = scheme_vocabulary(scheme)
    return TokenSequence([vocab.id(t) for t in toks], scheme.hash, T)


def remi_tokenize(roll: Pianoroll, scheme: BaselineScheme = REMI) -> TokenSequence:
    return _to_sequence(remi_tokens(roll, scheme), scheme, roll.T)


def midilike_tokenize(roll: Pianoroll, scheme: BaselineScheme = MIDILIKE) -> TokenSequence:
    return _to_sequence(midilike_tokens(roll, scheme), scheme, roll.T)


def remi_detokenize(tokens: TokenSequence, scheme: BaselineScheme = REMI, T: int | None = None) -> Pianoroll:
    """Rebuild a roll from REMI-lite ids (timesigs included)."""
    vocab = scheme_vocabulary(scheme)
    T = tokens.true_T if T is None else T
    toks = [vocab.token(int(i)) for i in tokens.ids]
    if not toks or toks[0].kind != "TS":
        raise NonCanonicalSequence("REMI sequence must open with a time signature")
    from .pianoroll import TimeSignatureEvent

    sigs = [TimeSignatureEvent(0, *toks[0].value)]
    cells = np.zeros((N_PITCHES, T), dtype=bool)
    bar_start, bar_len, bar_idx = 0, 0, -1
    pos = pitch = None
    pending_ts = None
    for tok in toks[1:]:
        if tok.kind == "TS":
            pending_ts = tok.value
        elif tok.kind == "Bar":
            bar_start += bar_len
            bar_idx += 1
            if pending_ts is not None:
                sigs.append(TimeSignatureEvent(bar_idx, *pending_ts))
                pending_ts = None
            n, d = sigs[-1].signature
            bar_len = bar_length(n, d, scheme.steps_per_beat)
        elif tok.kind == "Position":
            pos = bar_start + tok.value
        elif tok.kind == "Pitch":
            pitch = tok.value
        elif tok.kind == "Duration":
            cells[pitch - LOWEST_PITCH, pos : pos + tok.value] = True
    return Pianoroll(cells, scheme.steps_per_beat, tuple(sigs))


def midilike_detokenize(tokens: TokenSequence, T: int | None = None, scheme: BaselineScheme = MIDILIKE) -> np.ndarray:
    """Cells from MIDI-Like ids; the time grid is not carried by this scheme."""
    vocab = scheme_vocabulary(scheme)
    T = tokens.true_T if T is None else T
    cells = np.zeros((N_PITCHES, T), dtype=bool)
    now = 0
    started: dict[int, int] = {}
    for i in tokens.ids:
        tok = vocab.token(int(i))
        if tok.kind == "TimeShift":
            now += tok.value
        elif tok.kind == "NoteOn":
            started[tok.value] = now
        else:
            cells[tok.value - LOWEST_PITCH, started.pop(tok.value) : now] = True
    return cells


# --- ABC ---------------------------------------------------------------------------

_ABC_NAMES = ("C", "^C", "D", "^D", "E", "F", "^F", "G", "^G", "A", "^A", "B")


def abc_pitch(midi: int) -> str:
    """ABC spelling with sharps: 60 -> C, 72 -> c, 48 -> C,, 84 -> c'."""
    if not LOWEST_PITCH <= midi < LOWEST_PITCH + N_PITCHES:
        raise PitchOutOfAbcRange(f"MIDI pitch {midi}")
    octave, pc = divmod(midi, 12)
    name = _ABC_NAMES[pc]
    octave -= 5  # octave 5 (MIDI 60-71) is the uppercase octave
    if octave <= 0:
        return name + "," * -octave
    return name[:-1] + name[-1].lower() + "'" * (octave - 1)


def _len(n: int) -> str:
    return "" if n == 1 else str(n)


def abc_serialize(roll: Pianoroll, scheme: BaselineScheme = ABC) -> str:
    """ABC-lite text with a unit length of one grid step.

    Notes crossing a barline are split and tied. Each onset group becomes a
    note or chord; rests fill time where nothing starts and nothing from the
    preceding group still sounds.
    """
    spb = roll.steps_per_beat
    ts0 = roll.timesigs[0]
    header = f"X:1\nM:{ts0.numerator}/{ts0.denominator}\nL:1/{4 * spb}\nK:C\n"
    measures = roll.measures()
    changes = {ts.start_measure: ts.signature for ts in roll.timesigs}

    per_bar: list[list[tuple[Note, bool]]] = [[] for _ in measures]
    starts = [m.start for m in measures]
    for n in extract_notes(roll):
        t, left = n.onset, n.duration
        b = int(np.searchsorted(starts, t, side="right")) - 1
        while left > 0:
            seg = min(left, measures[b].end - t)
            per_bar[b].append((Note(t, n.pitch, seg), left > seg))
            t += seg
            left -= seg
            b += 1

    bars = []
    for m, items in zip(measures, per_bar):
        elems = []
        if m.index and m.index in changes:
            elems.append("[M:%d/%d]" % changes[m.index])
        groups: dict[int, list[tuple[Note, bool]]] = {}
        for note, tied in sorted(items):
            groups.setdefault(note.onset, []).append((note, tied))
        onsets = sorted(groups)
        cursor = m.start
        bar_end = min(m.end, roll.T)
        for i, t in enumerate(onsets):
            if t > cursor:
                elems.append("z" + _len(t - cursor))
            grp = groups[t]
            parts = [abc_pitch(n.pitch) for n, _ in grp]
            durs = [n.duration for n, _ in grp]
            ties = ["-" if tied else "" for _, tied in grp]
            if len(grp) == 1:
                elems.append(parts[0] + _len(durs[0]) + ties[0])
            elif len(set(durs)) == 1:
                elems.append("[" + "".join(p + tie for p, tie in zip(parts, ties)) + "]" + _len(durs[0]))
            else:
                elems.append("[" + "".join(p + _len(d) + tie for p, d, tie in zip(parts, durs, ties)) + "]")
            nxt = onsets[i + 1] if i + 1 < len(onsets) else bar_end
            cursor = t + min(max(durs), nxt - t)
        if cursor < bar_end:
            elems.append("z" + _len(bar_end - cursor))
        bars.append(" ".join(elems) + " |")
    return header + " ".join(bars) + "\n"


# --- BPE --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BpeModel:
    merges: tuple[tuple[int, int, int], ...]
    base_hash: int
    base_size: int
    _expansion: dict = field(default=None, repr=False)

    def __post_init__(self):
        merges = tuple(tuple(int(x) for x in m) for m in self.merges)
        object.__setattr__(self, "merges", merges)
        expansion: dict[int, tuple[int, ...]] = {}
        for k, (a, b, new) in enumerate(merges):
            if new != self.base_size + k:
                raise ConfigInvariantViolation(f"merge {k} creates id {new}, expected {self.base_size + k}")
            if max(a, b) >= new:
                raise ConfigInvariantViolation(f"merge {k} references an id not yet defined")
            expansion[new] = expansion.get(a, (a,)) + expansion.get(b, (b,))
        object.__setattr__(self, "_expansion", expansion)

    @property
    def n_merges(self) -> int:
        return len(self.merges)

    @property
    def vocab_size(self) -> int:
        return self.base_size + len(self.merges)

    @property
    def hash(self) -> int:
        h = hashlib.sha256(f"{self.base_hash}:{self.base_size}:{self.merges}".encode())
        return int.from_bytes(h.digest()[:8], "big")

    def to_text(self) -> str:
        lines = [f"#bpe v1 base={self.base_hash:016x} merges={len(self.merges)} size={self.base_size}"]
        lines += [f"{a} {b} {n}" for a, b, n in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BpeModel":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#bpe v1"):
            raise NonCanonicalSequence("missing '#bpe v1' header")
        fields = dict(f.split("=", 1) for f in lines[0].split()[2:] if "=" in f)
        merges = [tuple(int(x) for x in ln.split()) for ln in lines[1:] if ln.strip()]
        n = int(fields.get("merges", len(merges)))
        if n != len(merges):
            raise NonCanonicalSequence(f"header announces {n} merges, file has {len(merges)}")
        if "size" in fields:
            size = int(fields["size"])
        elif merges:
            size = merges[0][2]
        else:
            raise NonCanonicalSequence("cannot infer base vocabulary size of an empty model")
        return cls(tuple(merges), int(fields["base"], 16), size)


_SEP = -1


def _pair_codes(x: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    valid = (x[:-1] >= 0) & (x[1:] >= 0)
    return x[:-1] * width + x[1:], valid


def _merge_positions(x: np.ndarray, a: int, b: int) -> np.ndarray:
    """Left-to-right non-overlapping occurrences of (a, b) in x."""
    hit = np.nonzero((x[:-1] == a) & (x[1:] == b))[0]
    if a != b or len(hit) == 0:
        return hit
    # inside a run of a's, hits pair up from the run's left end
    run_start = np.ones(len(hit), dtype=bool)
    run_start[1:] = hit[1:] != hit[:-1] + 1
    starts = np.maximum.accumulate(np.where(run_start, hit, 0))
    return hit[(hit - starts) % 2 == 0]


def _apply_merge(x: np.ndarray, a: int, b: int, new: int) -> np.ndarray:
    pos = _merge_positions(x, a, b)
    if len(pos) == 0:
        return x
    x = x.copy()
    x[pos] = new
    keep = np.ones(len(x), dtype=bool)
    keep[pos + 1] = False
    return x[keep]


def _concat(seqs: Sequence[np.ndarray]) -> np.ndarray:
    parts = []
    for s in seqs:
        parts.append(np.asarray(s, dtype=np.int64))
        parts.append(np.array([_SEP], dtype=np.int64))
    return np.concatenate(parts) if parts else np.array([], dtype=np.int64)


def _unconcat(x: np.ndarray) -> list[np.ndarray]:
    cuts = np.nonzero(x == _SEP)[0]
    out, prev = [], 0
    for c in cuts:
        out.append(x[prev:c])
        prev = c + 1
    return out


def bpe_train(corpus: Sequence[TokenSequence], merges: int, base_size: int | None = None) -> BpeModel:
    """Greedy BPE over id sequences.

    Pair frequencies count every adjacent position, overlapping included.
    The most frequent pair is merged (smallest (left, right) on ties) until
    ``merges`` are done or no pair occurs twice. ``base_size`` defaults to
    one past the largest id in the corpus.
    """
    if not corpus:
        raise EmptyCorpus("BPE needs at least one sequence")
    hashes = {s.config_hash for s in corpus}
    if len(hashes) > 1:
        raise MixedVocabularies(f"corpus mixes {len(hashes)} vocabularies")
    if merges < 0:
        raise ValueError("merges must be >= 0")
    x = _concat([s.ids for s in corpus])
    if base_size is None:
        base_size = int(x.max()) + 1 if len(x) and x.max() >= 0 else 0
    elif len(x) and x.max() >= base_size:
        raise UnknownToken(f"corpus holds id {int(x.max())} >= base_size {base_size}")
    width = base_size + merges + 1
    done: list[tuple[int, int, int]] = []
    for k in range(merges):
        if len(x) < 2:
            break
        codes, valid = _pair_codes(x, width)
        uniq, counts = np.unique(codes[valid], return_counts=True)
        if len(counts) == 0 or counts.max() < 2:
            break
        # np.unique sorts codes ascending, so argmax picks the smallest pair among ties
        best = int(uniq[np.argmax(counts)])
        a, b = divmod(best, width)
        new = base_size + k
        done.append((a, b, new))
        x = _apply_merge(x, a, b, new)
    return BpeModel(tuple(done), next(iter(hashes)), base_size)


def bpe_apply(model: BpeModel, tokens: TokenSequence) -> TokenSequence:
    if tokens.config_hash != model.base_hash:
        raise MixedVocabularies("tokens were not produced by the model's base vocabulary")
    x = np.asarray(tokens.ids, dtype=np.int64)
    if len(x) and (x.min() < 0 or x.max() >= model.base_size):
        raise UnknownToken("sequence holds ids outside the base vocabulary")
    for a, b, new in model.merges:
        x = _apply_merge(x, a, b, new)
    return TokenSequence(x, model.hash, tokens.true_T)


def bpe_decode(model: BpeModel, tokens: TokenSequence) -> TokenSequence:
    out: list[int] = []
    for i in tokens.ids.tolist():
        if 0 <= i < model.base_size:
            out.append(i)
        elif i in model._expansion:
            out.extend(model._expansion[i])
        else:
            raise UnknownToken(f"id {i} is not in the BPE vocabulary")
    return TokenSequence(out, model.base_hash, tokens.true_T)
