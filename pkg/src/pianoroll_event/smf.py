"""Minimal Standard MIDI File reader.

Only what pianoroll ingestion needs is extracted: note spans (in ticks)
and time-signature meta events. Velocity, tempo and controllers are
parsed past and discarded.
"""

from __future__ import annotations

import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .errors import MalformedMidi

# data-byte counts for channel voice messages, keyed by status high nibble
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


@dataclass(frozen=True)
class NoteSpan:
    onset: int
    offset: int
    pitch: int
    channel: int = 0
    track: int = 0


@dataclass(frozen=True)
class TimeSigMeta:
    tick: int
    numerator: int
    denominator_exp: int
    track: int = 0


@dataclass
class SmfScore:
    format: int
    ppq: int
    notes: list[NoteSpan] = field(default_factory=list)
    timesigs: list[TimeSigMeta] = field(default_factory=list)
    end_tick: int = 0


class _Reader:
    def __init__(self, data: bytes, start: int = 0, end: int | None = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def remaining(self) -> int:
        return self.end - self.pos

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MalformedMidi(f"unexpected end of track data at byte {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MalformedMidi(f"chunk overruns track end at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MalformedMidi("variable-length quantity longer than 4 bytes")


def _parse_track(data: bytes, start: int, end: int, track: int, score: SmfScore) -> None:
    r = _Reader(data, start, end)
    tick = 0
    status = None
    # (channel, pitch) -> FIFO of onset ticks; overlapping same-pitch notes pair first-in first-out
    pending: dict[tuple[int, int], deque[int]] = defaultdict(deque)

    while r.remaining() > 0:
        tick += r.varlen()
        b = r.byte()
        if b == 0xFF:
            meta_type = r.byte()
            payload = r.take(r.varlen())
            if meta_type == 0x58:
                if len(payload) < 2:
                    raise MalformedMidi("time signature meta event too short")
                score.timesigs.append(TimeSigMeta(tick, payload[0], payload[1], track))
            elif meta_type == 0x2F:
                break
            status = None
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
            continue
        if b & 0x80:
            status = b
            first = None
        else:
            if status is None:
                raise MalformedMidi(f"running status without prior status at byte {r.pos - 1}")
            first = b
        kind = status >> 4
        if kind not in _CHANNEL_DATA_LEN:
            raise MalformedMidi(f"unsupported status byte 0x{status:02X}")
        n = _CHANNEL_DATA_LEN[kind]
        d = [first] if first is not None else []
        while len(d) < n:
            d.append(r.byte())
        if any(x & 0x80 for x in d):
            raise MalformedMidi(f"data byte with high bit set at byte {r.pos - 1}")
        channel = status & 0x0F
        if kind == 0x9 and d[1] > 0:
            pending[(channel, d[0])].append(tick)
        elif kind == 0x8 or (kind == 0x9 and d[1] == 0):
            queue = pending.get((channel, d[0]))
            if queue:
                onset = queue.popleft()
                score.notes.append(NoteSpan(onset, tick, d[0], channel, track))

    # notes never switched off sound until the end of their track
    for (channel, pitch), queue in pending.items():
        for onset in queue:
            score.notes.append(NoteSpan(onset, tick, pitch, channel, track))
    score.end_tick = max(score.end_tick, tick)


def parse_smf(data: bytes) -> SmfScore:
    """Parse a type-0 or type-1 SMF byte string."""
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedMidi("missing MThd header")
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedMidi("bad header length")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MalformedMidi(f"SMF format {fmt} is not supported")
    if division & 0x8000:
        raise MalformedMidi("SMPTE time division is not supported")
    if division == 0:
        raise MalformedMidi("zero ticks per quarter note")

    score = SmfScore(format=fmt, ppq=division)
    pos = 8 + hlen
    track = 0
    while track < ntracks:
        if pos + 8 > len(data):
            raise MalformedMidi(f"expected {ntracks} tracks, found {track}")
        chunk_id = data[pos : pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        start, end = pos + 8, pos + 8 + clen
        if end > len(data):
            raise MalformedMidi("track chunk overruns file")
        if chunk_id == b"MTrk":
            _parse_track(data, start, end, track, score)
            track += 1
        # alien chunks are skipped per the file spec
        pos = end
    score.notes.sort(key=lambda n: (n.onset, n.pitch, n.offset, n.track, n.channel))
    score.timesigs.sort(key=lambda t: t.tick)
    return score
