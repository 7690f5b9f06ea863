"""Pianoroll-Event codec.

A roll is cut into frames of ``frame_len`` steps; each frame is cut along
pitch into ``n_blocks`` blocks of ``block_height`` rows. A frame becomes a
Frame event carrying the index of its first non-empty block, then one
Pattern event per non-empty block, with runs of empty blocks between them
collapsed into Gap events. Empty blocks above the last non-empty block are
implied by the fixed frame geometry and never written. Bar and time
signature events trail the frame that closes a measure.

The sequence encoder is vectorized over frames; :func:`encode_frame` is the
straightforward per-frame version and is kept as the readable definition
(tests hold the two against each other). Decoding runs a vectorized
reconstruction and accepts it only if re-encoding reproduces the input; any
mismatch is handed to a strict state-machine decoder that names the fault.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import (
    BadMagic,
    BarAlignmentError,
    ConfigHashMismatch,
    ConfigInvariantViolation,
    ConfigMismatch,
    DimensionMismatch,
    NonCanonicalSequence,
    PianorollEventError,
    StructureMismatch,
    TruncatedFile,
    UnknownToken,
    UnsupportedTimeSig,
)
from .pianoroll import (
    DEFAULT_STEPS_PER_BEAT,
    N_PITCHES,
    Frame,
    Pianoroll,
    TimeSignatureEvent,
    bar_length,
    split_frames,
)


class Mode(enum.Enum):
    """Ablation variants, from pattern-only up to the full scheme."""

    P = "p"
    PF_PLUS = "pf+"
    PF = "pf"
    FULL = "full"

    @property
    def has_frame_events(self) -> bool:
        return self is not Mode.P

    @property
    def has_gaps(self) -> bool:
        return self is Mode.FULL


DEFAULT_TIMESIG_SET = ((4, 4), (3, 4), (2, 4), (6, 8))


@dataclass(frozen=True)
class EncodingConfig:
    n_pitches: int = N_PITCHES
    frame_len: int = 4
    block_height: int = 2
    mode: Mode = Mode.FULL
    timesig_set: tuple[tuple[int, int], ...] = DEFAULT_TIMESIG_SET
    emit_structure: bool = True
    steps_per_beat: int = DEFAULT_STEPS_PER_BEAT

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "timesig_set", tuple(tuple(int(x) for x in ts) for ts in self.timesig_set))
        if self.frame_len < 1 or self.block_height < 1:
            raise ConfigInvariantViolation("frame_len and block_height must be positive")
        if self.n_blocks < 3:
            raise ConfigInvariantViolation(f"need at least 3 blocks per frame, got {self.n_blocks}")
        if self.block_bits > 16:
            raise ConfigInvariantViolation(
                f"block_height * frame_len = {self.block_bits} exceeds 16; pattern vocabulary would not be enumerable"
            )
        if len(set(self.timesig_set)) != len(self.timesig_set):
            raise ConfigInvariantViolation("duplicate entries in timesig_set")
        if self.emit_structure and not self.timesig_set:
            raise ConfigInvariantViolation("emit_structure requires a non-empty timesig_set")
        for num, den in self.timesig_set:
            try:
                length = bar_length(num, den, self.steps_per_beat)
            except UnsupportedTimeSig as exc:
                raise ConfigInvariantViolation(str(exc)) from exc
            if length % self.frame_len:
                raise ConfigInvariantViolation(
                    f"frame_len {self.frame_len} does not divide the {num}/{den} bar ({length} steps)"
                )

    @property
    def n_blocks(self) -> int:
        return -(-self.n_pitches // self.block_height)

    @property
    def block_bits(self) -> int:
        return self.block_height * self.frame_len

    def to_dict(self) -> dict:
        return {
            "n_pitches": self.n_pitches,
            "frame_len": self.frame_len,
            "block_height": self.block_height,
            "mode": self.mode.value,
            "timesig_set": [list(ts) for ts in self.timesig_set],
            "emit_structure": self.emit_structure,
            "steps_per_beat": self.steps_per_beat,
        }

    @property
    def hash(self) -> int:
        """64-bit digest of the canonical JSON form."""
        cached = self.__dict__.get("_hash")
        if cached is not None:
            return cached
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        value = self.__dict__["_hash"] = int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")
        return value


# --- events -----------------------------------------------------------------


@dataclass(frozen=True)
class FrameEvt:
    start: int

    @property
    def name(self) -> str:
        return f"Frame_{self.start}"


@dataclass(frozen=True)
class PatternEvt:
    mask: int

    @property
    def name(self) -> str:
        return f"Pat_{self.mask}"


@dataclass(frozen=True)
class GapEvt:
    run: int

    @property
    def name(self) -> str:
        return f"Gap_{self.run}"


@dataclass(frozen=True)
class BarEvt:
    @property
    def name(self) -> str:
        return "Bar"


@dataclass(frozen=True)
class TimeSigEvt:
    numerator: int
    denominator: int

    @property
    def name(self) -> str:
        return f"TS_{self.numerator}/{self.denominator}"


@dataclass(frozen=True)
class Special:
    label: str

    @property
    def name(self) -> str:
        return self.label


Event = Union[FrameEvt, PatternEvt, GapEvt, BarEvt, TimeSigEvt]

PAD, BOS, EOS = Special("PAD"), Special("BOS"), Special("EOS")
SPECIALS = (PAD, BOS, EOS)
PAD_ID, BOS_ID, EOS_ID = 0, 1, 2

# kind codes used by the vectorized paths
_K_SPECIAL, _K_FRAME, _K_GAP, _K_PAT, _K_BAR, _K_TS = range(6)


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Bijective token table. Ids are contiguous from 0; specials come first."""

    config_hash: int
    tokens: tuple
    n_special: int = 0
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ConfigInvariantViolation("vocabulary has duplicate tokens")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        """Reported vocabulary size, specials excluded."""
        return len(self.tokens) - self.n_special

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self._index

    def id(self, token) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownToken(f"{token!r} is not in the vocabulary") from None

    def token(self, token_id: int):
        if not 0 <= token_id < len(self.tokens):
            raise UnknownToken(f"token id {token_id} out of range 0..{len(self.tokens) - 1}")
        return self.tokens[token_id]

    def names(self) -> list[str]:
        return [t.name if hasattr(t, "name") else str(t) for t in self.tokens]

    def to_json(self) -> str:
        return json.dumps({name: i for i, name in enumerate(self.names())}, indent=2) + "\n"


@dataclass(frozen=True, eq=False)
class TokenSequence:
    ids: np.ndarray
    config_hash: int
    true_T: int | None = None

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64).reshape(-1)
        ids.flags.writeable = False
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.config_hash == other.config_hash
            and self.true_T == other.true_T
            and bool(np.array_equal(self.ids, other.ids))
        )

    __hash__ = None

    def content_length(self) -> int:
        """Length without PAD/BOS/EOS."""
        return int(np.count_nonzero(self.ids > EOS_ID))


def pattern_id(block: np.ndarray) -> int:
    """Integer mask of an h x L block: bit (row * L + col), row 0 lowest pitch."""
    block = np.asarray(block)
    if block.ndim != 2:
        raise DimensionMismatch(f"block must be 2-D, got shape {block.shape}")
    h, L = block.shape
    weights = 1 << np.arange(h * L, dtype=np.int64)
    return int(block.reshape(-1).astype(np.int64) @ weights)


def pattern_block(mask: int, block_height: int, frame_len: int) -> np.ndarray:
    """Inverse of :func:`pattern_id`."""
    n = block_height * frame_len
    if not 0 <= mask < (1 << n):
        raise ValueError(f"mask {mask} does not fit {block_height}x{frame_len}")
    bits = (mask >> np.arange(n)) & 1
    return bits.reshape(block_height, frame_len).astype(bool)


def build_vocabulary(config: EncodingConfig) -> Vocabulary:
    K = config.n_blocks
    mode = config.mode
    tokens: list = list(SPECIALS)
    if mode.has_frame_events:
        tokens += [FrameEvt(s) for s in range(K + 1)]
    if mode.has_gaps:
        tokens += [GapEvt(r) for r in range(1, K - 1)]
    first_mask = 1 if mode is Mode.FULL else 0
    tokens += [PatternEvt(m) for m in range(first_mask, 1 << config.block_bits)]
    if config.emit_structure:
        tokens.append(BarEvt())
        tokens += [TimeSigEvt(n, d) for n, d in config.timesig_set]
    return Vocabulary(config.hash, tuple(tokens), n_special=len(SPECIALS))


class _Layout:
    """Affine id arithmetic and per-id lookup tables for one vocabulary."""

    def __init__(self, config: EncodingConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        K = config.n_blocks
        mode = config.mode
        self.frame_base = vocab.id(FrameEvt(0)) if mode.has_frame_events else -1
        self.gap_base = vocab.id(GapEvt(1)) - 1 if mode.has_gaps else -1
        self.pat_min = 1 if mode is Mode.FULL else 0
        self.pat_base = vocab.id(PatternEvt(self.pat_min)) - self.pat_min
        self.bar_id = vocab.id(BarEvt()) if config.emit_structure else -1
        self.ts_ids = {ts: vocab.id(TimeSigEvt(*ts)) for ts in config.timesig_set} if config.emit_structure else {}

        n = len(vocab)
        self.kind = np.full(n, _K_SPECIAL, dtype=np.int8)
        self.value = np.zeros(n, dtype=np.int32)
        for i, tok in enumerate(vocab.tokens):
            if isinstance(tok, FrameEvt):
                self.kind[i], self.value[i] = _K_FRAME, tok.start
            elif isinstance(tok, GapEvt):
                self.kind[i], self.value[i] = _K_GAP, tok.run
            elif isinstance(tok, PatternEvt):
                self.kind[i], self.value[i] = _K_PAT, tok.mask
            elif isinstance(tok, BarEvt):
                self.kind[i] = _K_BAR
            elif isinstance(tok, TimeSigEvt):
                self.kind[i] = _K_TS
        self.weights = 1 << np.arange(config.block_bits, dtype=np.int64)
        self.K = K


_LAYOUTS: dict[EncodingConfig, _Layout] = {}


def _layout(config: EncodingConfig) -> _Layout:
    lay = _LAYOUTS.get(config)
    if lay is None:
        lay = _LAYOUTS[config] = _Layout(config, build_vocabulary(config))
    return lay


def vocabulary(config: EncodingConfig) -> Vocabulary:
    """Cached :func:`build_vocabulary`."""
    return _layout(config).vocab


# --- per-frame reference path -------------------------------------------------


def _frame_blocks(cells: np.ndarray, config: EncodingConfig) -> list[int]:
    h, K = config.block_height, config.n_blocks
    padded = np.zeros((K * h, cells.shape[1]), dtype=bool)
    padded[: cells.shape[0]] = cells
    return [pattern_id(padded[j * h : (j + 1) * h]) for j in range(K)]


def encode_frame(frame: Frame | np.ndarray, config: EncodingConfig) -> list[Event]:
    """Events for one frame, per the configured mode."""
    cells = frame.cells if isinstance(frame, Frame) else np.asarray(frame)
    if cells.shape != (config.n_pitches, config.frame_len):
        raise DimensionMismatch(f"frame shape {cells.shape} != ({config.n_pitches}, {config.frame_len})")
    masks = _frame_blocks(cells, config)
    K = config.n_blocks
    if config.mode is Mode.P:
        return [PatternEvt(m) for m in masks]

    nonempty = [j for j, m in enumerate(masks) if m]
    if not nonempty:
        return [FrameEvt(K)]
    s, e = nonempty[0], nonempty[-1]
    events: list[Event] = [FrameEvt(s)]
    if config.mode is Mode.PF_PLUS:
        events += [PatternEvt(m) for m in masks[s:]]
    elif config.mode is Mode.PF:
        events += [PatternEvt(m) for m in masks[s : e + 1]]
    else:
        run = 0
        for m in masks[s : e + 1]:
            if m == 0:
                run += 1
                continue
            if run:
                events.append(GapEvt(run))
                run = 0
            events.append(PatternEvt(m))
    return events


def decode_frame(events: Sequence[Event], config: EncodingConfig) -> np.ndarray:
    """Cells of one frame from its events (no structure events)."""
    h, L, K = config.block_height, config.frame_len, config.n_blocks
    out = np.zeros((K * h, L), dtype=bool)
    cursor = 0
    for ev in events:
        if isinstance(ev, FrameEvt):
            cursor = ev.start
        elif isinstance(ev, GapEvt):
            cursor += ev.run
        elif isinstance(ev, PatternEvt):
            if cursor >= K:
                raise NonCanonicalSequence("pattern past the top block")
            out[cursor * h : (cursor + 1) * h] = pattern_block(ev.mask, h, L)
            cursor += 1
    return out[: config.n_pitches]


# --- structure ------------------------------------------------------------------


def _check_roll(roll: Pianoroll, config: EncodingConfig):
    if roll.H != config.n_pitches:
        raise DimensionMismatch(f"roll has {roll.H} rows, config expects {config.n_pitches}")
    if roll.steps_per_beat != config.steps_per_beat:
        raise ConfigMismatch(
            f"roll grid is {roll.steps_per_beat} steps/beat, config expects {config.steps_per_beat}"
        )


def _structure_plan(roll: Pianoroll, config: EncodingConfig):
    """Per-frame trailing structure tokens, keyed by frame index."""
    L = config.frame_len
    plan: dict[int, list[Event]] = {}
    for m in roll.measures():
        if m.length % L:
            raise BarAlignmentError(f"bar of {m.length} steps is not divisible by frame_len {L}")
        if (m.numerator, m.denominator) not in config.timesig_set:
            raise UnsupportedTimeSig(f"{m.numerator}/{m.denominator} is not in the configured timesig_set")
    changes = {ts.start_measure: ts for ts in roll.timesigs[1:]}
    for m in roll.measures():
        if m.end > roll.T:
            break
        evs: list[Event] = [BarEvt()]
        nxt = changes.get(m.index + 1)
        if nxt is not None:
            evs.append(TimeSigEvt(nxt.numerator, nxt.denominator))
        plan[m.end // L - 1] = evs
    return plan


def encode_events(roll: Pianoroll, config: EncodingConfig) -> list:
    """Event-level reference encoding, specials included, frame by frame."""
    _check_roll(roll, config)
    out: list = [BOS]
    plan = {}
    if config.emit_structure:
        plan = _structure_plan(roll, config)
        ts0 = roll.timesigs[0]
        out.append(TimeSigEvt(ts0.numerator, ts0.denominator))
    for i, frame in enumerate(split_frames(roll, config.frame_len)):
        out += encode_frame(frame, config)
        out += plan.get(i, [])
    out.append(EOS)
    return out


# --- vectorized sequence encoder ---------------------------------------------------


def _block_masks(cells: np.ndarray, lay: _Layout) -> np.ndarray:
    """(N, K) array of block masks for a padded H x T roll."""
    c = lay.config
    h, L, K = c.block_height, c.frame_len, lay.K
    T = cells.shape[1]
    N = -(-T // L)
    padded = np.zeros((K * h, N * L), dtype=np.uint16)
    padded[: cells.shape[0], :T] = cells
    grid = padded.reshape(K, h, N, L)  # a view, no copy
    masks = np.zeros((K, N), dtype=np.uint16)
    for r in range(h):
        for col in range(L):
            masks |= grid[:, r, :, col] << np.uint16(r * L + col)
    return masks.T.astype(np.int32)


def _encode_ids(roll: Pianoroll, lay: _Layout, masks: np.ndarray | None = None) -> np.ndarray:
    """Token ids for a roll, built as one slot table per frame.

    Row n holds [frame head, (gap, pattern) for each block, bar, timesig],
    without the gap slots in modes that have none; unused slots are -1 and the table is compressed row-major at the end.
    """
    config = lay.config
    mode = config.mode
    K = lay.K
    if masks is None:
        masks = _block_masks(roll.cells, lay)
    N = masks.shape[0]
    nonempty = masks > 0
    any_ne = nonempty.any(axis=1)
    first = np.where(any_ne, nonempty.argmax(axis=1), K)

    if mode is Mode.P:
        include = np.ones((N, K), dtype=bool)
    elif mode is Mode.FULL:
        include = nonempty
    else:
        seen = np.logical_or.accumulate(nonempty, axis=1)  # at or after the first non-empty block
        if mode is Mode.PF_PLUS:
            include = seen
        else:
            include = seen & np.logical_or.accumulate(nonempty[:, ::-1], axis=1)[:, ::-1]

    # gap columns exist only when the mode emits gaps
    step = 2 if mode.has_gaps else 1
    table = np.full((N, step * K + 3), -1, dtype=np.int32)
    table[:, step:-2:step] = np.where(include, lay.pat_base + masks, -1)
    if mode.has_frame_events:
        table[:, 0] = lay.frame_base + first
    if mode.has_gaps:
        # flat index of the latest non-empty block at or before each position
        flat_ne = nonempty.reshape(-1)
        idx = np.arange(N * K, dtype=np.int32)
        last_seen = np.maximum.accumulate(np.where(flat_ne, idx, np.int32(-1)))
        prev = np.empty(N * K, dtype=np.int32)
        prev[0] = -1
        prev[1:] = last_seen[:-1]
        run = idx - prev - 1
        # a run counts only if the previous non-empty block is in the same frame
        has_gap = flat_ne & (prev >= idx - idx % K) & (run > 0)
        table[:, 1:-2:2] = np.where(has_gap, lay.gap_base + run, -1).reshape(N, K)

    prefix = [BOS_ID]
    if config.emit_structure:
        plan = _structure_plan(roll, config)
        ts0 = roll.timesigs[0]
        prefix.append(lay.ts_ids[(ts0.numerator, ts0.denominator)])
        for n, evs in plan.items():
            for k, ev in enumerate(evs):
                table[n, -2 + k] = lay.bar_id if isinstance(ev, BarEvt) else lay.ts_ids[(ev.numerator, ev.denominator)]

    flat = table.reshape(-1)
    return np.concatenate((prefix, flat[flat >= 0], [EOS_ID])).astype(np.int64)


def encode_pianoroll(roll: Pianoroll, config: EncodingConfig = EncodingConfig()) -> TokenSequence:
    """Encode a whole roll: BOS, optional initial TS, frames with trailing structure, EOS."""
    _check_roll(roll, config)
    lay = _layout(config)
    return TokenSequence(_encode_ids(roll, lay), config.hash, roll.T)


# --- decoding ------------------------------------------------------------------------


def _masks_to_cells(masks: np.ndarray, lay: _Layout, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded K*h x N*L cells, and the H x T view of them."""
    c = lay.config
    h, L, K = c.block_height, c.frame_len, lay.K
    N = masks.shape[0]
    # h*L <= 16, so a narrow dtype keeps the shift temporaries small
    by_block = masks.T.astype(np.uint16)
    grid = np.empty((K, h, N, L), dtype=bool)
    for r in range(h):
        for col in range(L):
            grid[:, r, :, col] = (by_block >> (r * L + col)) & 1
    cells = grid.reshape(K * h, N * L)
    return cells, cells[: c.n_pitches, :T]


class _Fallback(Exception):
    pass


def _fast_decode(ids: np.ndarray, lay: _Layout, T: int | None) -> tuple[Pianoroll, np.ndarray]:
    """Vectorized decode; returns the roll and its block masks.

    Raises _Fallback on anything unexpected. The result is only trusted
    once re-encoding reproduces ``ids``.
    """
    config = lay.config
    K, L = lay.K, config.frame_len
    if len(ids) < 2 or ids[0] != BOS_ID or ids[-1] != EOS_ID:
        raise _Fallback
    body = ids[1:-1]
    kind = lay.kind[body]
    if (kind == _K_SPECIAL).any():
        raise _Fallback
    value = lay.value[body]

    ts_list = [(0, None)]
    if config.emit_structure:
        if not len(body) or kind[0] != _K_TS:
            raise _Fallback
        bars_before = np.cumsum(kind == _K_BAR) - (kind == _K_BAR)
        ts_pos = np.nonzero(kind == _K_TS)[0]
        sigs = {i: s for s, i in lay.ts_ids.items()}
        ts_list = [(int(bars_before[p]), sigs[int(body[p])]) for p in ts_pos]

    is_pat = kind == _K_PAT
    if config.mode is Mode.P:
        n_pats = int(is_pat.sum())
        if n_pats % K:
            raise _Fallback
        N = n_pats // K
        masks = value[is_pat].reshape(N, K)
    else:
        is_frame = kind == _K_FRAME
        N = int(is_frame.sum())
        frame_idx = np.cumsum(is_frame) - 1
        adv = np.where(is_pat, 1, np.where(kind == _K_GAP, value, 0))
        cum_excl = np.cumsum(adv) - adv
        frame_pos = np.nonzero(is_frame)[0]
        if N == 0 or (is_pat.any() and is_pat.argmax() < is_frame.argmax()):
            raise _Fallback
        fi = frame_idx[is_pat]
        pos = value[frame_pos][fi] + cum_excl[is_pat] - cum_excl[frame_pos][fi]
        if len(pos) and ((pos < 0) | (pos >= K)).any():
            raise _Fallback
        masks = np.zeros(N * K, dtype=np.int32)
        masks[fi * K + pos] = value[is_pat]
        masks = masks.reshape(N, K)

    if T is None:
        T = N * L
    if N != -(-T // L) or N == 0:
        raise _Fallback
    full, cells = _masks_to_cells(masks, lay, T)
    if full[config.n_pitches :].any() or full[:, T:].any():
        raise _Fallback
    if config.emit_structure:
        timesigs = tuple(TimeSignatureEvent(m, n, d) for m, (n, d) in ts_list)
    else:
        timesigs = (TimeSignatureEvent(0, 4, 4),)
    cells.flags.writeable = False  # freshly built, so the roll can skip its defensive copy
    try:
        return Pianoroll(cells, config.steps_per_beat, timesigs), masks
    except PianorollEventError:
        raise _Fallback from None


class _Cursor:
    def __init__(self, events):
        self.events = events
        self.i = 0

    def peek(self):
        return self.events[self.i] if self.i < len(self.events) else None

    def next(self):
        ev = self.peek()
        self.i += 1
        return ev


def _reference_decode(ids: np.ndarray, config: EncodingConfig, T: int | None) -> Pianoroll:
    """Strict token-by-token decoder; raises a specific error on the first fault."""
    vocab = vocabulary(config)
    events = [vocab.token(int(i)) for i in ids]
    K, L, h = config.n_blocks, config.frame_len, config.block_height
    mode = config.mode
    if not events or events[0] != BOS:
        raise NonCanonicalSequence("sequence must start with BOS")
    if events[-1] != EOS:
        raise NonCanonicalSequence("sequence must end with EOS")
    for pos, ev in enumerate(events[1:-1], start=1):
        if isinstance(ev, Special):
            raise NonCanonicalSequence(f"special token {ev.name} at position {pos}")
    cur = _Cursor(events[1:-1])

    if T is None:
        if mode is Mode.P:
            n_frames = sum(isinstance(e, PatternEvt) for e in cur.events) // K
        else:
            n_frames = sum(isinstance(e, FrameEvt) for e in cur.events)
        T = n_frames * L
    if T <= 0:
        raise NonCanonicalSequence("sequence holds no frames")
    N = -(-T // L)

    timesigs = [TimeSignatureEvent(0, 4, 4)]
    measure_start = measure_len = bars_seen = 0
    if config.emit_structure:
        ev = cur.next()
        if not isinstance(ev, TimeSigEvt):
            raise StructureMismatch("missing initial time signature")
        timesigs = [TimeSignatureEvent(0, ev.numerator, ev.denominator)]
        measure_len = bar_length(ev.numerator, ev.denominator, config.steps_per_beat)

    masks = np.zeros((N, K), dtype=np.int64)
    for n in range(N):
        ev = cur.peek()
        if mode is Mode.P:
            for j in range(K):
                ev = cur.next()
                if not isinstance(ev, PatternEvt):
                    raise NonCanonicalSequence(f"frame {n + 1} has {j} of {K} patterns")
                masks[n, j] = ev.mask
        else:
            if isinstance(ev, PatternEvt):
                raise NonCanonicalSequence(f"pattern before frame event at frame {n + 1}")
            if not isinstance(ev, FrameEvt):
                raise NonCanonicalSequence(f"expected frame event for frame {n + 1}, got {_describe(ev)}")
            cur.next()
            cursor = ev.start
            if cursor < K:
                first = cur.peek()
                if isinstance(first, GapEvt):
                    raise NonCanonicalSequence(f"gap directly after frame event in frame {n + 1}")
                if not isinstance(first, PatternEvt) or first.mask == 0:
                    raise NonCanonicalSequence(f"frame {n + 1} must open with a non-empty pattern")
            last_mask = None
            while isinstance(cur.peek(), (PatternEvt, GapEvt)):
                ev = cur.next()
                if isinstance(ev, GapEvt):
                    if not isinstance(cur.peek(), PatternEvt):
                        raise NonCanonicalSequence(f"gap not followed by a pattern in frame {n + 1}")
                    cursor += ev.run
                    continue
                if cursor >= K:
                    raise NonCanonicalSequence(f"block cursor passes {K} in frame {n + 1}")
                masks[n, cursor] = ev.mask
                last_mask = ev.mask
                cursor += 1
            if mode is Mode.PF_PLUS and cursor != K:
                raise NonCanonicalSequence(f"frame {n + 1} must list every block from its start")
            if mode is Mode.PF and last_mask == 0:
                raise NonCanonicalSequence(f"frame {n + 1} ends with an empty pattern")

        if config.emit_structure:
            end = (n + 1) * L
            boundary = end == measure_start + measure_len and end <= T
            ev = cur.peek()
            if isinstance(ev, BarEvt):
                if not boundary:
                    raise StructureMismatch(f"bar event after frame {n + 1} is not on a measure boundary")
                cur.next()
                bars_seen += 1
                measure_start = end
                ev = cur.peek()
                if isinstance(ev, TimeSigEvt):
                    cur.next()
                    current = (timesigs[-1].numerator, timesigs[-1].denominator)
                    if end >= T or (ev.numerator, ev.denominator) == current:
                        raise StructureMismatch(f"time signature after frame {n + 1} is not a change")
                    timesigs.append(TimeSignatureEvent(bars_seen, ev.numerator, ev.denominator))
                    measure_len = bar_length(ev.numerator, ev.denominator, config.steps_per_beat)
            elif boundary:
                raise StructureMismatch(f"missing bar event after frame {n + 1}")
            if isinstance(cur.peek(), TimeSigEvt):
                raise StructureMismatch(f"time signature after frame {n + 1} does not follow a bar")
            if measure_len % L:
                raise BarAlignmentError(f"bar of {measure_len} steps is not divisible by frame_len {L}")

    if cur.peek() is not None:
        raise NonCanonicalSequence(f"{len(cur.events) - cur.i} tokens after the last frame")
    lay = _layout(config)
    full, cells = _masks_to_cells(masks, lay, T)
    if full[:, T:].any() or full[config.n_pitches :].any():
        raise NonCanonicalSequence("notes in the padding beyond the roll")
    return Pianoroll(cells, config.steps_per_beat, tuple(timesigs))


def _describe(ev) -> str:
    return "end of sequence" if ev is None else ev.name


def decode_tokens(tokens: TokenSequence, config: EncodingConfig = EncodingConfig()) -> Pianoroll:
    """Exact inverse of :func:`encode_pianoroll`; rejects non-canonical input."""
    if tokens.config_hash != config.hash:
        raise ConfigHashMismatch(f"tokens carry config {tokens.config_hash:016x}, expected {config.hash:016x}")
    lay = _layout(config)
    ids = tokens.ids
    if len(ids) and ((ids < 0) | (ids >= len(lay.vocab))).any():
        bad = int(ids[(ids < 0) | (ids >= len(lay.vocab))][0])
        raise UnknownToken(f"token id {bad} out of range 0..{len(lay.vocab) - 1}")
    T = tokens.true_T
    try:
        roll, masks = _fast_decode(ids, lay, T)
        if np.array_equal(_encode_ids(roll, lay, masks), ids):
            return roll
    except (_Fallback, PianorollEventError):
        pass
    roll = _reference_decode(ids, config, T)
    if not np.array_equal(_encode_ids(roll, lay), ids):
        raise NonCanonicalSequence("sequence decodes but is not the canonical encoding of its roll")
    return roll


# --- token files ----------------------------------------------------------------------

TOKEN_TEXT_HEADER = "#prev-tokens v1"
TOKEN_BIN_MAGIC = b"PRVT"
_TOKEN_BIN_HEADER = struct.Struct("<4sQI")


def write_tokens_text(tokens: TokenSequence) -> str:
    head = f"{TOKEN_TEXT_HEADER} config={tokens.config_hash:016x}"
    if tokens.true_T is not None:
        head += f" T={tokens.true_T}"
    return "\n".join([head, *map(str, tokens.ids.tolist())]) + "\n"


def read_tokens_text(text: str) -> TokenSequence:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TOKEN_TEXT_HEADER):
        raise NonCanonicalSequence("missing '#prev-tokens v1' header")
    fields = dict(f.split("=", 1) for f in lines[0].split()[2:] if "=" in f)
    try:
        config_hash = int(fields["config"], 16)
        true_T = int(fields["T"]) if "T" in fields else None
        ids = [int(x) for x in lines[1:] if x.strip()]
    except (KeyError, ValueError) as exc:
        raise NonCanonicalSequence(f"bad token file: {exc}") from exc
    return TokenSequence(ids, config_hash, true_T)


def write_tokens_binary(tokens: TokenSequence) -> bytes:
    head = _TOKEN_BIN_HEADER.pack(TOKEN_BIN_MAGIC, tokens.config_hash, len(tokens.ids))
    return head + tokens.ids.astype("<u4").tobytes()


def read_tokens_binary(data: bytes) -> TokenSequence:
    if data[:4] != TOKEN_BIN_MAGIC:
        raise BadMagic(f"expected {TOKEN_BIN_MAGIC!r}, got {data[:4]!r}")
    if len(data) < _TOKEN_BIN_HEADER.size:
        raise TruncatedFile("token header is incomplete")
    _, config_hash, count = _TOKEN_BIN_HEADER.unpack_from(data)
    body = data[_TOKEN_BIN_HEADER.size :]
    if len(body) != 4 * count:
        raise TruncatedFile(f"expected {count} ids, found {len(body) / 4:g}")
    return TokenSequence(np.frombuffer(body, dtype="<u4"), config_hash)


def read_tokens(data: bytes) -> TokenSequence:
    """Read either token file flavour, sniffing the magic."""
    if data[:4] == TOKEN_BIN_MAGIC:
        return read_tokens_binary(data)
    return read_tokens_text(data.decode("ascii"))
