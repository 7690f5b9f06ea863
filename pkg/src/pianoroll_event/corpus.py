"""Batch MIDI ingestion and a seeded synthetic corpus.

The synthetic generator draws from :class:`random.Random` (Mersenne Twister
MT19937) and only calls ``random()``, whose output stream is guaranteed
fixed for a given integer seed across platforms and Python versions.
Integers are derived from it with :func:`_below`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IoError, NoInputFiles, PianorollEventError
from .pianoroll import (
    DEFAULT_STEPS_PER_BEAT,
    HIGHEST_PITCH,
    LOWEST_PITCH,
    N_PITCHES,
    Pianoroll,
    TimeSignatureEvent,
    bar_length,
    midi_to_pianoroll_report,
    write_prl,
)

log = logging.getLogger(__name__)

MIDI_SUFFIXES = (".mid", ".midi")
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ManifestEntry:
    source: str
    prl: str
    T: int
    bars: int
    note_cells: int
    warnings: int
    sha256: str


@dataclass(frozen=True)
class IngestFailure:
    source: str
    error: str


@dataclass
class IngestResult:
    entries: list[ManifestEntry] = field(default_factory=list)
    failures: list[IngestFailure] = field(default_factory=list)
    manifest_path: Path | None = None

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def find_midi_files(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in MIDI_SUFFIXES)


def _convert_one(src: Path, rel: str, out_dir: Path, steps_per_beat: int):
    try:
        roll, report = midi_to_pianoroll_report(src.read_bytes(), steps_per_beat)
    except PianorollEventError as exc:
        return IngestFailure(rel, f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return IngestFailure(rel, f"IoError: {exc}")
    data = write_prl(roll)
    prl_rel = str(Path(rel).with_suffix(".prl").as_posix())
    dest = out_dir / prl_rel
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_bytes(data)
    return ManifestEntry(
        source=rel,
        prl=prl_rel,
        T=roll.T,
        bars=len(roll.measures()),
        note_cells=roll.note_cell_count(),
        warnings=len(report.warnings),
        sha256=hashlib.sha256(data).hexdigest(),
    )


def ingest_directory(
    path: str | Path,
    out_dir: str | Path | None = None,
    steps_per_beat: int = DEFAULT_STEPS_PER_BEAT,
    jobs: int = 1,
) -> IngestResult:
    """Convert every MIDI file under ``path`` to PRL and write a manifest.

    A file that fails is recorded and skipped. Output order, file bytes
    and the manifest do not depend on ``jobs``.
    """
    root = Path(path)
    if not root.is_dir():
        raise IoError(f"{root} is not a readable directory")
    out = Path(out_dir) if out_dir is not None else root
    files = find_midi_files(root)
    if not files:
        raise NoInputFiles(f"no .mid/.midi files under {root}")
    rels = [f.relative_to(root).as_posix() for f in files]
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    args = [(f, r, out, steps_per_beat) for f, r in zip(files, rels)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_convert_one, *zip(*args)))
    else:
        results = [_convert_one(*a) for a in args]

    result = IngestResult()
    lines = []
    for r in sorted(results, key=lambda r: r.source):
        if isinstance(r, ManifestEntry):
            result.entries.append(r)
        else:
            log.warning("failed to convert %s: %s", r.source, r.error)
            result.failures.append(r)
        lines.append(json.dumps(asdict(r), sort_keys=True))
    result.manifest_path = out / MANIFEST_NAME
    result.manifest_path.write_text("\n".join(lines) + "\n")
    return result


def read_manifest(path: str | Path) -> list[ManifestEntry | IngestFailure]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(IngestFailure(**rec) if "error" in rec else ManifestEntry(**rec))
    return out


# --- synthetic corpus ---------------------------------------------------------

_C_MAJOR = (0, 2, 4, 5, 7, 9, 11)


def _diatonic(degree: int) -> int:
    """MIDI pitch of a C-major scale degree, degree 0 = C4."""
    octave, d = divmod(degree, 7)
    return 60 + 12 * octave + _C_MAJOR[d]


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    pieces: int = 200
    bars: int = 8
    timesig: tuple[int, int] = (4, 4)
    chord_prob: float = 0.5
    half_range: int = 7
    density: float = 0.85
    # sixteenth-note grid: with the default 4-step frames one frame spans one beat
    steps_per_beat: int = 4
    notes_per_beat: int = 2
    melody_center: int = 72
    chord_root_degree: int = -7  # C3

    def __post_init__(self):
        if min(self.pieces, self.bars, self.steps_per_beat, self.notes_per_beat) < 1:
            raise ValueError("counts must be positive")
        if not (0.0 <= self.chord_prob <= 1.0 and 0.0 <= self.density <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.half_range < 0:
            raise ValueError("half_range must be >= 0")
        if self.steps_per_beat % self.notes_per_beat:
            raise ValueError("notes_per_beat must divide steps_per_beat")
        bar_length(*self.timesig, self.steps_per_beat)


def _below(rng: random.Random, n: int) -> int:
    """Uniform integer in [0, n) from one ``random()`` draw."""
    return int(rng.random() * n)


def _clamp(p: int) -> int:
    return min(max(p, LOWEST_PITCH), HIGHEST_PITCH)


def generate_piece(params: SynthParams, rng: random.Random) -> Pianoroll:
    spb = params.steps_per_beat
    bar = bar_length(*params.timesig, spb)
    T = bar * params.bars
    beats = T // spb
    sub = spb // params.notes_per_beat
    cells = np.zeros((N_PITCHES, T), dtype=bool)

    lo = params.melody_center - params.half_range
    hi = params.melody_center + params.half_range
    degree = min(range(-21, 36), key=lambda d: abs(_diatonic(d) - params.melody_center))
    for start in range(0, T, sub):
        step = _below(rng, 5) - 2
        if lo <= _diatonic(degree + step) <= hi:
            degree += step
        if rng.random() < params.density:
            cells[_clamp(_diatonic(degree)) - LOWEST_PITCH, start : start + sub] = True

    for b in range(beats):
        if rng.random() < params.chord_prob:
            root = params.chord_root_degree + _below(rng, 7)
            for k in (0, 2, 4):
                cells[_clamp(_diatonic(root + k)) - LOWEST_PITCH, b * spb : (b + 1) * spb] = True

    return Pianoroll(cells, spb, (TimeSignatureEvent(0, *params.timesig),))


def generate_synthetic(params: SynthParams) -> list[Pianoroll]:
    """Pieces of a diatonic random-walk melody over optional triads, one per beat.

    The melody moves by up to two scale steps per note and stays within
    ``half_range`` semitones of ``melody_center``; each melody slot sounds
    with probability ``density``. Triads sit an octave and more below.
    """
    rng = random.Random(params.seed)
    return [generate_piece(params, rng) for _ in range(params.pieces)]
