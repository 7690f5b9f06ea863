import io

import mido
import numpy as np
import pytest
from hypothesis import strategies as st

from pianoroll_event.pianoroll import Pianoroll, TimeSignatureEvent


def make_midi(notes, ppq=480, timesigs=(), tracks=1, fmt=None, extra_events=()):
    """Build SMF bytes with mido.

    ``notes`` are (onset_tick, duration_ticks, pitch[, track]);
    ``timesigs`` are (tick, numerator, denominator), placed in track 0.
    """
    mid = mido.MidiFile(ticks_per_beat=ppq, type=fmt if fmt is not None else (0 if tracks == 1 else 1))
    per_track = [[] for _ in range(tracks)]
    for tick, num, den in timesigs:
        per_track[0].append((tick, 0, mido.MetaMessage("time_signature", numerator=num, denominator=den)))
    for n in notes:
        onset, dur, pitch = n[:3]
        tr = n[3] if len(n) > 3 else 0
        per_track[tr].append((onset, 2, mido.Message("note_on", note=pitch, velocity=64)))
        per_track[tr].append((onset + dur, 1, mido.Message("note_off", note=pitch, velocity=0)))
    for tick, msg in extra_events:
        per_track[0].append((tick, 0, msg))
    for events in per_track:
        track = mido.MidiTrack()
        now = 0
        for tick, _, msg in sorted(events, key=lambda e: (e[0], e[1])):
            track.append(msg.copy(time=tick - now))
            now = tick
        mid.tracks.append(track)
    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()


def random_roll(rng, T, density, steps_per_beat=16, timesigs=None):
    cells = rng.random((88, T)) < density
    return Pianoroll(cells, steps_per_beat, timesigs or (TimeSignatureEvent(0, 4, 4),))


@st.composite
def rolls(draw, max_T=200, max_density=0.3, steps_per_beat=16, multiple_of=1):
    """Small random rolls with a 4/4 or 3/4 opening and an optional change."""
    T = draw(st.integers(1, max_T // multiple_of)) * multiple_of
    density = draw(st.floats(0, max_density))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    first = draw(st.sampled_from([(4, 4), (3, 4), (2, 4), (6, 8)]))
    sigs = [TimeSignatureEvent(0, *first)]
    bar = first[0] * steps_per_beat * 4 // first[1]
    if T > bar and draw(st.booleans()):
        second = draw(st.sampled_from([s for s in [(4, 4), (3, 4), (2, 4), (6, 8)] if s != first]))
        sigs.append(TimeSignatureEvent(1, *second))
    return Pianoroll(rng.random((88, T)) < density, steps_per_beat, tuple(sigs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ---------------------------------------------------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash_verdicts = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    details = [v for k, v in item.user_properties if k == "detail"]
    label = f"criterion {marker.args[0]:>2}" + (f" ({marker.args[1]})" if len(marker.args) > 1 else "")
    line = f"{label}: {'PASS' if report.passed else 'FAIL'}"
    if details:
        line += "  " + "; ".join(details)
    item.config.stash_verdicts.append((marker.args[0], line))
    print("\n" + line)


def pytest_terminal_summary(terminalreporter, config):
    verdicts = sorted(getattr(config, "stash_verdicts", []), key=lambda v: v[0])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for _, line in verdicts:
            terminalreporter.write_line(line)
