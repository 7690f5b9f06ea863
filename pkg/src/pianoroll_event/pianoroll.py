"""Binary pianorolls: MIDI ingestion, temporal framing and the PRL container."""

from __future__ import annotations

import functools
import logging
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyScore,
    InvariantViolation,
    TruncatedFile,
    UnsupportedTimeSig,
)
from .smf import parse_smf

log = logging.getLogger(__name__)

N_PITCHES = 88
LOWEST_PITCH = 21  # A0, row 0
HIGHEST_PITCH = LOWEST_PITCH + N_PITCHES - 1  # C8
DEFAULT_STEPS_PER_BEAT = 16
VALID_DENOMINATORS = (1, 2, 4, 8, 16)

PRL_MAGIC = b"PRL1"
_PRL_HEADER = struct.Struct("<4sHIHH")
_PRL_TIMESIG = struct.Struct("<IBB")


@functools.lru_cache(maxsize=256)
def bar_length(numerator: int, denominator: int, steps_per_beat: int) -> int:
    """Steps in one bar, where a beat is a quarter note."""
    if denominator not in VALID_DENOMINATORS:
        raise UnsupportedTimeSig(f"denominator {denominator} is not a power of two <= 16")
    if numerator < 1:
        raise UnsupportedTimeSig(f"numerator {numerator} must be positive")
    steps = Fraction(numerator * steps_per_beat * 4, denominator)
    if steps.denominator != 1:
        raise UnsupportedTimeSig(
            f"{numerator}/{denominator} is not a whole number of steps at {steps_per_beat} steps per beat"
        )
    return int(steps)


@dataclass(frozen=True, order=True)
class TimeSignatureEvent:
    start_measure: int
    numerator: int
    denominator: int

    @property
    def signature(self) -> tuple[int, int]:
        return (self.numerator, self.denominator)


DEFAULT_TIMESIGS = (TimeSignatureEvent(0, 4, 4),)


@dataclass(frozen=True)
class Measure:
    index: int
    start: int
    length: int
    numerator: int
    denominator: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True, eq=False)
class Pianoroll:
    """An 88 x T binary matrix plus its time grid.

    Row 0 is MIDI pitch 21. ``cells`` is stored as a read-only boolean
    array; construct a new roll rather than mutating one.
    """

    cells: np.ndarray
    steps_per_beat: int = DEFAULT_STEPS_PER_BEAT
    timesigs: tuple[TimeSignatureEvent, ...] = DEFAULT_TIMESIGS

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.dtype != np.bool_:
            if cells.size and not np.isin(cells, (0, 1)).all():
                raise InvariantViolation("pianoroll cells must be 0/1")
            cells = cells.astype(bool)
        else:
            cells = cells.copy() if cells.flags.writeable else cells
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(
            self,
            "timesigs",
            tuple(t if isinstance(t, TimeSignatureEvent) else TimeSignatureEvent(*t) for t in self.timesigs),
        )
        self._validate()

    def _validate(self):
        if self.cells.ndim != 2 or self.cells.shape[0] != N_PITCHES:
            raise InvariantViolation(f"cells must have shape ({N_PITCHES}, T), got {self.cells.shape}")
        if self.T <= 0:
            raise InvariantViolation("T must be positive")
        if self.steps_per_beat < 1:
            raise InvariantViolation("steps_per_beat must be positive")
        if not self.timesigs or self.timesigs[0].start_measure != 0:
            raise InvariantViolation("first time signature must start at measure 0")
        prev = None
        for ts in self.timesigs:
            bar_length(ts.numerator, ts.denominator, self.steps_per_beat)
            if prev is not None:
                if ts.start_measure <= prev.start_measure:
                    raise InvariantViolation("time signature measures must be strictly increasing")
                if ts.signature == prev.signature:
                    raise InvariantViolation(f"redundant time signature at measure {ts.start_measure}")
            prev = ts
        # every signature must govern at least one step of the roll
        last = self.measures()[-1].index
        if self.timesigs[-1].start_measure > last:
            raise InvariantViolation("time signature starts beyond the end of the roll")

    @property
    def H(self) -> int:
        return self.cells.shape[0]

    @property
    def T(self) -> int:
        return self.cells.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Pianoroll):
            return NotImplemented
        return (
            self.steps_per_beat == other.steps_per_beat
            and self.timesigs == other.timesigs
            and self.cells.shape == other.cells.shape
            and bool(np.array_equal(self.cells, other.cells))
        )

    __hash__ = None

    def measures(self) -> tuple[Measure, ...]:
        """Measures covering [0, T); the final one may be cut short by T."""
        cached = self.__dict__.get("_measures")
        if cached is None:
            cached = self.__dict__["_measures"] = self._layout_measures()
        return cached

    def _layout_measures(self) -> tuple[Measure, ...]:
        out = []
        start, idx, k = 0, 0, 0
        sigs = self.timesigs
        while start < self.T:
            while k + 1 < len(sigs) and sigs[k + 1].start_measure <= idx:
                k += 1
            ts = sigs[k]
            length = bar_length(ts.numerator, ts.denominator, self.steps_per_beat)
            out.append(Measure(idx, start, length, ts.numerator, ts.denominator))
            start += length
            idx += 1
        return tuple(out)

    def note_cell_count(self) -> int:
        return int(self.cells.sum())


@dataclass(frozen=True, eq=False)
class Frame:
    cells: np.ndarray
    index: int  # 1-based


@dataclass
class ConversionReport:
    dropped_notes: int = 0
    notes: int = 0
    warnings: list[str] = field(default_factory=list)


def _timesigs_from_meta(metas, ppq: int, steps_per_beat: int, report: ConversionReport):
    """Place time-signature meta events on measure indices.

    A change that lands mid-measure takes effect at the next barline.
    """
    changes: list[list[int]] = [[0, 4, 4]]  # [start_measure, num, den]
    change_step = Fraction(0)
    for meta in metas:
        if meta.denominator_exp > 4:
            raise UnsupportedTimeSig(f"denominator 2**{meta.denominator_exp} exceeds 16")
        num, den = meta.numerator, 1 << meta.denominator_exp
        bar_length(num, den, steps_per_beat)
        cur_start, cur_num, cur_den = changes[-1]
        cur_len = bar_length(cur_num, cur_den, steps_per_beat)
        pos = Fraction(meta.tick * steps_per_beat, ppq)
        offset = (pos - change_step) / cur_len
        measure = cur_start + math.ceil(offset)
        if offset.denominator != 1:
            report.warnings.append(f"time signature at tick {meta.tick} moved to measure {measure}")
        if measure == cur_start:
            changes[-1] = [measure, num, den]
        else:
            change_step += (measure - cur_start) * cur_len
            changes.append([measure, num, den])
    out: list[TimeSignatureEvent] = []
    for m, n, d in changes:
        if out and out[-1].signature == (n, d):
            continue
        out.append(TimeSignatureEvent(m, n, d))
    return out


def _measure_end_covering(timesigs: Sequence[TimeSignatureEvent], steps: int, steps_per_beat: int) -> int:
    """Smallest whole-measure step count >= steps."""
    start, idx, k = 0, 0, 0
    while True:
        while k + 1 < len(timesigs) and timesigs[k + 1].start_measure <= idx:
            k += 1
        start += bar_length(timesigs[k].numerator, timesigs[k].denominator, steps_per_beat)
        idx += 1
        if start >= steps:
            return start


def midi_to_pianoroll_report(
    midi_bytes: bytes, steps_per_beat: int = DEFAULT_STEPS_PER_BEAT
) -> tuple[Pianoroll, ConversionReport]:
    """Like :func:`midi_to_pianoroll` but also returns what was dropped or moved."""
    if steps_per_beat < 1:
        raise ValueError("steps_per_beat must be positive")
    score = parse_smf(midi_bytes)
    report = ConversionReport()
    timesigs = _timesigs_from_meta(score.timesigs, score.ppq, steps_per_beat, report)

    spans = []
    for note in score.notes:
        if not LOWEST_PITCH <= note.pitch <= HIGHEST_PITCH:
            report.dropped_notes += 1
            continue
        on = (note.onset * steps_per_beat) // score.ppq
        off = -((-note.offset * steps_per_beat) // score.ppq)
        spans.append((note.pitch - LOWEST_PITCH, on, max(off, on + 1)))
    if report.dropped_notes:
        report.warnings.append(f"dropped {report.dropped_notes} notes outside MIDI {LOWEST_PITCH}-{HIGHEST_PITCH}")
    if not spans:
        raise EmptyScore("score has no playable notes")
    report.notes = len(spans)

    T = _measure_end_covering(timesigs, max(s[2] for s in spans), steps_per_beat)
    cells = np.zeros((N_PITCHES, T), dtype=bool)
    for row, on, off in spans:
        cells[row, on:off] = True

    n_measures = _count_measures(timesigs, T, steps_per_beat)
    timesigs = [ts for ts in timesigs if ts.start_measure < n_measures]
    for w in report.warnings:
        log.warning(w)
    return Pianoroll(cells, steps_per_beat, tuple(timesigs)), report


def _count_measures(timesigs, T, steps_per_beat) -> int:
    start, idx, k = 0, 0, 0
    while start < T:
        while k + 1 < len(timesigs) and timesigs[k + 1].start_measure <= idx:
            k += 1
        start += bar_length(timesigs[k].numerator, timesigs[k].denominator, steps_per_beat)
        idx += 1
    return idx


def midi_to_pianoroll(midi_bytes: bytes, steps_per_beat: int = DEFAULT_STEPS_PER_BEAT) -> Pianoroll:
    """Quantize a type-0/1 SMF onto a binary grid.

    All tracks and channels are OR-ed together. Onsets round down and
    offsets round up to the step grid, and every note keeps at least one
    step. The roll is extended to a whole number of measures.
    """
    return midi_to_pianoroll_report(midi_bytes, steps_per_beat)[0]


def split_frames(roll: Pianoroll, frame_len: int) -> list[Frame]:
    """Cut the roll into ceil(T / frame_len) frames, zero-padding the last."""
    if frame_len < 1:
        raise ValueError("frame_len must be >= 1")
    n = -(-roll.T // frame_len)
    padded = np.zeros((roll.H, n * frame_len), dtype=bool)
    padded[:, : roll.T] = roll.cells
    frames = []
    for i in range(n):
        block = padded[:, i * frame_len : (i + 1) * frame_len]
        block.flags.writeable = False
        frames.append(Frame(block, i + 1))
    return frames


def join_frames(frames: Iterable[Frame], T: int) -> np.ndarray:
    """Concatenate frame cells and trim the padding back to T steps."""
    return np.concatenate([f.cells for f in frames], axis=1)[:, :T]


def write_prl(roll: Pianoroll) -> bytes:
    """Serialize a roll to the little-endian PRL container."""
    parts = [_PRL_HEADER.pack(PRL_MAGIC, roll.H, roll.T, roll.steps_per_beat, len(roll.timesigs))]
    for ts in roll.timesigs:
        parts.append(_PRL_TIMESIG.pack(ts.start_measure, ts.numerator, ts.denominator))
    # column-major, bit 0 of each byte is the lowest pitch of its 8-row group
    parts.append(np.packbits(roll.cells.T, axis=1, bitorder="little").tobytes())
    return b"".join(parts)


def read_prl(data: bytes) -> Pianoroll:
    data = bytes(data)
    if len(data) < 4 or data[:4] != PRL_MAGIC:
        raise BadMagic(f"expected {PRL_MAGIC!r}, got {data[:4]!r}")
    if len(data) < _PRL_HEADER.size:
        raise TruncatedFile("PRL header is incomplete")
    _, H, T, spb, n_ts = _PRL_HEADER.unpack_from(data)
    pos = _PRL_HEADER.size
    if len(data) < pos + n_ts * _PRL_TIMESIG.size:
        raise TruncatedFile("PRL time-signature table is incomplete")
    timesigs = []
    for _ in range(n_ts):
        timesigs.append(TimeSignatureEvent(*_PRL_TIMESIG.unpack_from(data, pos)))
        pos += _PRL_TIMESIG.size
    stride = -(-H // 8)
    need = T * stride
    payload = data[pos:]
    if len(payload) < need:
        raise TruncatedFile(f"payload has {len(payload)} bytes, header implies {need}")
    if len(payload) > need:
        raise InvariantViolation(f"payload has {len(payload) - need} trailing bytes")
    if H != N_PITCHES:
        raise InvariantViolation(f"H={H}, expected {N_PITCHES}")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(T, stride)
    bits = np.unpackbits(packed, axis=1, bitorder="little")
    if bits[:, H:].any():
        raise InvariantViolation("padding bits in the payload are set")
    return Pianoroll(np.ascontiguousarray(bits[:, :H].T.astype(bool)), spb, tuple(timesigs))
