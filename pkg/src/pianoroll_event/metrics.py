"""Encoding-efficiency and musical-distribution metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from . import baselines, codec
from .errors import DomainError, EmptyRoll, TooFewBars, TooFewSamples
from .pianoroll import LOWEST_PITCH, Pianoroll

SIGMA_FLOOR = 1e-6
JS_POINTS = 4096
JS_SPAN = 6.0

MAJOR = (0, 2, 4, 5, 7, 9, 11)
NATURAL_MINOR = (0, 2, 3, 5, 7, 8, 10)


def bdi(mean_length: float, vocab_size: float) -> float:
    """Budget-aware difficulty index: length squared times root vocabulary."""
    if not (mean_length > 0 and vocab_size > 0):
        raise DomainError(f"bdi needs positive inputs, got l={mean_length}, V={vocab_size}")
    return mean_length * mean_length * math.sqrt(vocab_size)


def _active(roll: Pianoroll) -> np.ndarray:
    if not roll.cells.any():
        raise EmptyRoll("roll has no active cells")
    return roll.cells


def polyphony_rate(roll: Pianoroll) -> float:
    """Share of sounding steps that have two or more pitches."""
    per_step = _active(roll).sum(axis=0)
    sounding = np.count_nonzero(per_step >= 1)
    return np.count_nonzero(per_step >= 2) / sounding


def onset_steps(roll: Pianoroll) -> np.ndarray:
    """Boolean per step: some pitch goes 0 -> 1 there (step 0 counts if active)."""
    c = roll.cells
    prev = np.zeros_like(c)
    prev[:, 1:] = c[:, :-1]
    return (c & ~prev).any(axis=0)


def groove_consistency(roll: Pianoroll) -> float:
    """1 minus the mean normalized Hamming distance of consecutive bars' onset vectors.

    Only complete bars are compared. Bars of unequal length are zero-padded
    to the longer one, which also sets the normalizer.
    """
    onsets = onset_steps(roll)
    bars = [onsets[m.start : m.end] for m in roll.measures() if m.end <= roll.T]
    if len(bars) < 2:
        raise TooFewBars(f"groove consistency needs 2 complete bars, roll has {len(bars)}")
    total = 0.0
    for a, b in zip(bars, bars[1:]):
        n = max(len(a), len(b))
        pa = np.zeros(n, dtype=bool)
        pb = np.zeros(n, dtype=bool)
        pa[: len(a)] = a
        pb[: len(b)] = b
        total += np.count_nonzero(pa != pb) / n
    return 1.0 - total / (len(bars) - 1)


def _scales() -> list[frozenset[int]]:
    return [frozenset((root + i) % 12 for i in mode) for root in range(12) for mode in (MAJOR, NATURAL_MINOR)]


def scale_consistency(roll: Pianoroll) -> float:
    """Best share of active cells inside one of the 24 major/natural-minor scales."""
    per_pitch = _active(roll).sum(axis=1)
    pc = np.zeros(12, dtype=np.int64)
    np.add.at(pc, (np.arange(len(per_pitch)) + LOWEST_PITCH) % 12, per_pitch)
    total = pc.sum()
    return max(sum(int(pc[k]) for k in scale) for scale in _scales()) / total


@dataclass(frozen=True)
class PieceMetrics:
    pr: float
    gc: float
    sc: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pr, self.gc, self.sc)


def piece_metrics(roll: Pianoroll) -> PieceMetrics:
    return PieceMetrics(polyphony_rate(roll), groove_consistency(roll), scale_consistency(roll))


@dataclass
class MetricsReport:
    pieces: list[PieceMetrics]
    mean: PieceMetrics
    variance: PieceMetrics

    @classmethod
    def from_pieces(cls, pieces: Sequence[PieceMetrics]) -> "MetricsReport":
        arr = _as_array(pieces)
        ddof = 1 if len(arr) > 1 else 0
        return cls(list(pieces), PieceMetrics(*arr.mean(axis=0)), PieceMetrics(*arr.var(axis=0, ddof=ddof)))

    def to_dict(self) -> dict:
        return {
            "pieces": [asdict(p) for p in self.pieces],
            "mean": asdict(self.mean),
            "variance": asdict(self.variance),
        }


def _as_array(pieces) -> np.ndarray:
    if isinstance(pieces, MetricsReport):
        pieces = pieces.pieces
    rows = [p.as_tuple() if isinstance(p, PieceMetrics) else tuple(p) for p in pieces]
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _norm_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def gaussian_js(mu_a: float, sigma_a: float, mu_b: float, sigma_b: float, points: int = JS_POINTS) -> float:
    """Jensen-Shannon divergence (nats) between two normals.

    Written as the average of two expectations, E_p[log 2p/(p+q)] and
    E_q[log 2q/(p+q)], each integrated by the trapezoid rule on a grid of
    ``points`` nodes spanning +-6 standard deviations of its own
    distribution. Every grid resolves its density even when the other
    distribution is orders of magnitude narrower.
    """
    sigma_a = max(sigma_a, SIGMA_FLOOR)
    sigma_b = max(sigma_b, SIGMA_FLOOR)

    def half(mu_p, s_p, mu_q, s_q):
        x = np.linspace(mu_p - JS_SPAN * s_p, mu_p + JS_SPAN * s_p, points)
        lp = _norm_logpdf(x, mu_p, s_p)
        lq = _norm_logpdf(x, mu_q, s_q)
        integrand = np.exp(lp) * (math.log(2) + lp - np.logaddexp(lp, lq))
        return np.trapezoid(integrand, x)

    js = 0.5 * half(mu_a, sigma_a, mu_b, sigma_b) + 0.5 * half(mu_b, sigma_b, mu_a, sigma_a)
    return float(min(max(js, 0.0), math.log(2)))


def js_similarity(set_a, set_b) -> float:
    """100 * exp(-2 * mean JS divergence) over PR, GC and SC.

    Each set is a sequence of :class:`PieceMetrics` (or (pr, gc, sc)
    triples, or a :class:`MetricsReport`); each metric is fitted with a
    normal of the set's sample mean and variance.
    """
    a, b = _as_array(set_a), _as_array(set_b)
    if len(a) < 2 or len(b) < 2:
        raise TooFewSamples("each set needs at least 2 pieces")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sd_a, sd_b = a.std(axis=0, ddof=1), b.std(axis=0, ddof=1)
    divs = [gaussian_js(mu_a[m], sd_a[m], mu_b[m], sd_b[m]) for m in range(3)]
    return 100.0 * math.exp(-2.0 * float(np.mean(divs)))


# --- efficiency tables -------------------------------------------------------


@dataclass(frozen=True)
class EfficiencyRow:
    scheme: str
    mean_length: float
    vocab_size: int
    bdi: float
    ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def efficiency_rows(pairs: Sequence[tuple[str, float, int]], reference: str | None = None) -> list[EfficiencyRow]:
    """Rows from (name, mean length, vocabulary) triples; ratios are BDI / reference BDI.

    The reference defaults to the first row.
    """
    if not pairs:
        raise DomainError("no schemes given")
    values = [(name, float(l), int(v), bdi(l, v)) for name, l, v in pairs]
    ref_bdi = values[0][3]
    if reference is not None:
        matches = [b for name, _, _, b in values if name == reference]
        if matches:
            ref_bdi = matches[0]
    return [EfficiencyRow(name, l, v, b, b / ref_bdi) for name, l, v, b in values]


def format_rows(rows: Sequence[EfficiencyRow], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps([r.to_dict() for r in rows], indent=2) + "\n"
    header = f"{'Method':<14}{'l':>10}{'V':>9}{'BDI (1e7)':>12}{'vs. ref':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.scheme:<14}{r.mean_length:>10.1f}{r.vocab_size:>9,}{r.bdi / 1e7:>12.3f}{r.ratio:>9.2f}x")
    return "\n".join(lines) + "\n"


TABLE1 = (
    ("Ours", 749.8, 347),
    ("REMI", 1339.7, 330),
    ("MIDILike", 1398.9, 448),
    ("REMI-BPE", 317.8, 20000),
    ("ABC Notation", 2575.0, 128),
)


# --- corpus statistics ------------------------------------------------------

CODEC_SCHEMES = {"full": "full", "p": "p", "pf": "pf", "pf+": "pf+"}
BASELINE_SCHEMES = ("remi", "midilike", "abc", "remi-bpe")
ALL_SCHEMES = ("full", "p", "pf+", "pf", "remi", "midilike", "abc", "remi-bpe")


def baseline_schemes(steps_per_beat: int) -> dict[str, "baselines.BaselineScheme"]:
    """Default baseline schemes re-gridded to ``steps_per_beat``."""
    return {
        "remi": replace(baselines.REMI, steps_per_beat=steps_per_beat),
        "midilike": replace(baselines.MIDILIKE, steps_per_beat=steps_per_beat),
        "abc": replace(baselines.ABC, steps_per_beat=steps_per_beat),
    }


def _piece_lengths(roll: Pianoroll, schemes: Sequence[str], config) -> dict[str, int]:
    base = baseline_schemes(config.steps_per_beat)
    out = {}
    for s in schemes:
        if s in CODEC_SCHEMES:
            cfg = replace(config, mode=codec.Mode(CODEC_SCHEMES[s]))
            out[s] = codec.encode_pianoroll(roll, cfg).content_length()
        elif s == "remi":
            out[s] = len(baselines.remi_tokens(roll, base["remi"]))
        elif s == "midilike":
            out[s] = len(baselines.midilike_tokens(roll, base["midilike"]))
        elif s == "abc":
            out[s] = len(baselines.abc_serialize(roll, base["abc"]))
        else:
            raise ValueError(f"unknown scheme {s!r}")
    return out


def _with_context(exc: Exception, name: str) -> Exception:
    try:
        return type(exc)(f"{name}: {exc}")
    except Exception:
        return exc


def corpus_stats(
    corpus: Sequence[Pianoroll],
    schemes: Sequence[str] = ALL_SCHEMES,
    config=None,
    names: Sequence[str] | None = None,
    bpe_merges: int = 100,
    jobs: int = 1,
) -> list[EfficiencyRow]:
    """Table-1-style rows for every requested scheme over a corpus.

    Mean lengths exclude PAD/BOS/EOS; ABC-lite length is its character
    count. ``remi-bpe`` trains BPE on the corpus's own REMI-lite sequences.
    Ratios are against the ``full`` row when present, else the first row.
    The grid defaults to the corpus's ``steps_per_beat``.
    """
    if not corpus:
        raise DomainError("corpus is empty")
    grids = {r.steps_per_beat for r in corpus}
    if len(grids) > 1:
        raise DomainError(f"corpus mixes grids: {sorted(grids)} steps per beat")
    config = config or codec.EncodingConfig(steps_per_beat=grids.pop())
    names = list(names) if names is not None else [f"piece_{i}" for i in range(len(corpus))]
    unknown = [s for s in schemes if s not in CODEC_SCHEMES and s not in BASELINE_SCHEMES]
    if unknown:
        raise ValueError(f"unknown schemes: {', '.join(unknown)}")
    base = baseline_schemes(config.steps_per_beat)

    plain = [s for s in schemes if s != "remi-bpe"]
    if "remi-bpe" in schemes and "remi" not in plain:
        plain.append("remi")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            per_piece = list(pool.map(_piece_lengths, corpus, [plain] * len(corpus), [config] * len(corpus)))
    else:
        per_piece = []
        for roll, name in zip(corpus, names):
            try:
                per_piece.append(_piece_lengths(roll, plain, config))
            except Exception as exc:
                raise _with_context(exc, name) from exc

    triples = []
    for s in schemes:
        if s in CODEC_SCHEMES:
            cfg = replace(config, mode=codec.Mode(CODEC_SCHEMES[s]))
            vocab = codec.vocabulary(cfg).size
            mean = float(np.mean([p[s] for p in per_piece]))
        elif s == "remi-bpe":
            seqs = [baselines.remi_tokenize(r, base["remi"]) for r in corpus]
            remi_vocab = baselines.scheme_vocabulary(base["remi"])
            model = baselines.bpe_train(seqs, bpe_merges, base_size=len(remi_vocab))
            mean = float(np.mean([len(baselines.bpe_apply(model, q)) for q in seqs]))
            vocab = remi_vocab.size + model.n_merges
        else:
            vocab = baselines.scheme_vocabulary(base[s]).size
            mean = float(np.mean([p[s] for p in per_piece]))
        triples.append((s, mean, vocab))
    return efficiency_rows(triples, reference="full")
