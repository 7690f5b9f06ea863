"""Command-line entry point: ``prevent <subcommand> ...``.

Exit status: 0 success, 1 partial batch failure, 2 usage error, 3 data error.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines, codec, corpus, metrics
from .errors import ConfigHashMismatch, PianorollEventError, TooFewBars
from .pianoroll import DEFAULT_STEPS_PER_BEAT, read_prl, write_prl

log = logging.getLogger("prevent")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

SUBCOMMANDS = (
    "midi2roll",
    "encode",
    "decode",
    "roundtrip",
    "tokenize",
    "bpe-train",
    "bpe-apply",
    "stats",
    "metrics",
    "gen-corpus",
    "vocab",
)


def _add_codec_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("encoding")
    g.add_argument("--frame-len", type=int, default=4, help="frame length in steps (default 4)")
    g.add_argument("--block-height", type=int, default=2, help="block height in pitch rows (default 2)")
    g.add_argument("--mode", choices=[m.value for m in codec.Mode], default="full")
    g.add_argument("--no-structure", action="store_true", help="omit bar and time-signature events")
    g.add_argument(
        "--steps-per-beat",
        type=int,
        default=None,
        help="grid of the rolls (default: taken from the input roll, or matched from the token header)",
    )


def _config(args, steps_per_beat: int | None = None) -> codec.EncodingConfig:
    spb = args.steps_per_beat or steps_per_beat or DEFAULT_STEPS_PER_BEAT
    return codec.EncodingConfig(
        frame_len=args.frame_len,
        block_height=args.block_height,
        mode=codec.Mode(args.mode),
        emit_structure=not args.no_structure,
        steps_per_beat=spb,
    )


def _config_for_hash(args, config_hash: int) -> codec.EncodingConfig:
    if args.steps_per_beat:
        return _config(args)
    for spb in range(1, 129):
        try:
            cfg = _config(args, spb)
        except PianorollEventError:
            continue
        if cfg.hash == config_hash:
            return cfg
    raise ConfigHashMismatch(f"no steps-per-beat matches config hash {config_hash:016x} under the given flags")


def _write(path: str | None, data: bytes | str):
    if path is None or path == "-":
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
        else:
            sys.stdout.write(data)
        return
    Path(path).write_bytes(data if isinstance(data, bytes) else data.encode())


def _prl_files(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(p.rglob("*.prl"))
        else:
            out.append(p)
    return out


def _load_rolls(paths: Sequence[str]):
    files = _prl_files(paths)
    if not files:
        raise PianorollEventError(f"no .prl files in {', '.join(paths)}")
    return files, [read_prl(f.read_bytes()) for f in files]


# --- subcommands ---------------------------------------------------------------


def cmd_midi2roll(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        result = corpus.ingest_directory(src, args.output, args.steps_per_beat, jobs=args.jobs)
        print(
            f"converted {len(result.entries)} files, {len(result.failures)} failed; manifest {result.manifest_path}",
            file=sys.stderr,
        )
        return EXIT_PARTIAL if result.partial else EXIT_OK
    from .pianoroll import midi_to_pianoroll_report

    roll, report = midi_to_pianoroll_report(src.read_bytes(), args.steps_per_beat)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _write(args.output or str(src.with_suffix(".prl")), write_prl(roll))
    return EXIT_OK


def cmd_encode(args) -> int:
    roll = read_prl(Path(args.input).read_bytes())
    cfg = _config(args, roll.steps_per_beat)
    tokens = codec.encode_pianoroll(roll, cfg)
    data = codec.write_tokens_binary(tokens) if args.binary else codec.write_tokens_text(tokens)
    _write(args.output, data)
    return EXIT_OK


def cmd_decode(args) -> int:
    tokens = codec.read_tokens(Path(args.input).read_bytes())
    cfg = _config_for_hash(args, tokens.config_hash)
    roll = codec.decode_tokens(tokens, cfg)
    _write(args.output, write_prl(roll))
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    roll = read_prl(Path(args.input).read_bytes())
    modes = list(codec.Mode) if args.all_modes else [codec.Mode(args.mode)]
    status = EXIT_OK
    for mode in modes:
        cfg = replace(_config(args, roll.steps_per_beat), mode=mode)
        tokens = codec.encode_pianoroll(roll, cfg)
        back = codec.decode_tokens(tokens, cfg)
        same_cells = np.array_equal(back.cells, roll.cells)
        same_meta = back.timesigs == roll.timesigs or not cfg.emit_structure
        label = f"[{mode.value}] " if args.all_modes else ""
        if same_cells and same_meta:
            print(f"{label}OK bit-exact ({tokens.content_length()} tokens)")
        else:
            diff = int(np.count_nonzero(back.cells != roll.cells)) if back.cells.shape == roll.cells.shape else -1
            print(f"{label}MISMATCH: {diff} cells differ, timesigs {'match' if same_meta else 'differ'}")
            status = EXIT_DATA
    return status


def cmd_tokenize(args) -> int:
    roll = read_prl(Path(args.input).read_bytes())
    scheme = metrics.baseline_schemes(roll.steps_per_beat)[args.scheme]
    if scheme.name is baselines.SchemeName.ABC_LITE:
        _write(args.output, baselines.abc_serialize(roll, scheme))
        return EXIT_OK
    if scheme.name is baselines.SchemeName.REMI_LITE:
        toks = baselines.remi_tokens(roll, scheme)
    else:
        toks = baselines.midilike_tokens(roll, scheme)
    if args.names:
        _write(args.output, "\n".join(t.name for t in toks) + "\n")
    else:
        vocab = baselines.scheme_vocabulary(scheme)
        seq = codec.TokenSequence([vocab.id(t) for t in toks], scheme.hash, roll.T)
        _write(args.output, codec.write_tokens_text(seq))
    return EXIT_OK


def _bpe_corpus(args):
    seqs, base_size = [], None
    tok_files = [Path(p) for p in args.inputs if Path(p).suffix in (".tok", ".tokb")]
    prl_inputs = [p for p in args.inputs if Path(p).suffix not in (".tok", ".tokb")]
    for f in tok_files:
        seqs.append(codec.read_tokens(f.read_bytes()))
    if prl_inputs:
        _, rolls = _load_rolls(prl_inputs)
        for roll in rolls:
            scheme = metrics.baseline_schemes(roll.steps_per_beat)[args.scheme]
            fn = baselines.remi_tokenize if args.scheme == "remi" else baselines.midilike_tokenize
            seqs.append(fn(roll, scheme))
            base_size = len(baselines.scheme_vocabulary(scheme))
    return seqs, base_size


def cmd_bpe_train(args) -> int:
    seqs, base_size = _bpe_corpus(args)
    model = baselines.bpe_train(seqs, args.merges, base_size=base_size)
    before = np.mean([len(s) for s in seqs])
    after = np.mean([len(baselines.bpe_apply(model, s)) for s in seqs])
    print(
        f"{model.n_merges} merges; mean length {before:.1f} -> {after:.1f}; vocabulary {model.base_size} -> {model.vocab_size}",
        file=sys.stderr,
    )
    _write(args.output, model.to_text())
    return EXIT_OK


def cmd_bpe_apply(args) -> int:
    model = baselines.BpeModel.from_text(Path(args.model).read_text())
    tokens = codec.read_tokens(Path(args.input).read_bytes())
    out = baselines.bpe_decode(model, tokens) if args.decode else baselines.bpe_apply(model, tokens)
    _write(args.output, codec.write_tokens_text(out))
    return EXIT_OK


def cmd_stats(args) -> int:
    files, rolls = _load_rolls(args.inputs)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    spb = args.steps_per_beat or rolls[0].steps_per_beat
    cfg = _config(args, spb)
    rows = metrics.corpus_stats(
        rolls, schemes, config=cfg, names=[str(f) for f in files], bpe_merges=args.bpe_merges, jobs=args.jobs
    )
    _write(args.output, metrics.format_rows(rows, args.format))
    return EXIT_OK


def _metrics_for(files, rolls):
    out = []
    for f, roll in zip(files, rolls):
        rec = {"file": str(f)}
        rec["pr"] = metrics.polyphony_rate(roll)
        rec["sc"] = metrics.scale_consistency(roll)
        try:
            rec["gc"] = metrics.groove_consistency(roll)
        except TooFewBars:
            rec["gc"] = None
        out.append(rec)
    return out


def cmd_metrics(args) -> int:
    if args.js:
        sets = []
        for d in args.js:
            files, rolls = _load_rolls([d])
            recs = [r for r in _metrics_for(files, rolls) if r["gc"] is not None]
            skipped = len(files) - len(recs)
            if skipped:
                print(f"warning: {skipped} pieces in {d} have fewer than 2 bars and were skipped", file=sys.stderr)
            sets.append([(r["pr"], r["gc"], r["sc"]) for r in recs])
        score = metrics.js_similarity(sets[0], sets[1])
        if args.format == "json":
            _write(args.output, json.dumps({"js_similarity": score}) + "\n")
        else:
            _write(args.output, f"JS similarity: {score:.2f}\n")
        return EXIT_OK

    if not args.inputs:
        raise argparse.ArgumentTypeError("metrics needs input files or --js DIR_A DIR_B")
    files, rolls = _load_rolls(args.inputs)
    recs = _metrics_for(files, rolls)
    if args.format == "json":
        _write(args.output, json.dumps(recs, indent=2) + "\n")
    else:
        lines = [f"{'file':<40}{'PR':>8}{'GC':>8}{'SC':>8}"]
        for r in recs:
            gc = "-" if r["gc"] is None else f"{r['gc']:.3f}"
            lines.append(f"{r['file']:<40}{r['pr']:>8.3f}{gc:>8}{r['sc']:>8.3f}")
        _write(args.output, "\n".join(lines) + "\n")
    return EXIT_OK


def _timesig(text: str) -> tuple[int, int]:
    try:
        n, d = text.split("/")
        return int(n), int(d)
    except ValueError:
        raise argparse.ArgumentTypeError(f"time signature must look like 4/4, got {text!r}") from None


def cmd_gen_corpus(args) -> int:
    params = corpus.SynthParams(
        seed=args.seed,
        pieces=args.pieces,
        bars=args.bars,
        timesig=args.timesig,
        chord_prob=args.chord_prob,
        half_range=args.half_range,
        density=args.density,
        steps_per_beat=args.steps_per_beat,
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(params.pieces - 1)))
    for i, roll in enumerate(corpus.generate_synthetic(params)):
        (out / f"piece_{i:0{width}d}.prl").write_bytes(write_prl(roll))
    print(f"wrote {params.pieces} pieces to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_vocab(args) -> int:
    if args.scheme:
        spb = args.steps_per_beat or DEFAULT_STEPS_PER_BEAT
        vocab = baselines.scheme_vocabulary(metrics.baseline_schemes(spb)[args.scheme])
    else:
        vocab = codec.vocabulary(_config(args))
    _write(args.output, vocab.to_json())
    print(f"V = {vocab.size}", file=sys.stderr)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prevent", description="Pianoroll-Event codec and analysis tools.")
    parser.add_argument("--config", help="key = value file mirroring the command-line flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("midi2roll", help="convert a MIDI file or directory to PRL")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--steps-per-beat", type=int, default=DEFAULT_STEPS_PER_BEAT)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_midi2roll)

    p = sub.add_parser("encode", help="encode a PRL roll to tokens")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--text", action="store_true", help="text token file (default)")
    fmt.add_argument("--binary", action="store_true", help="binary PRVT token file")
    _add_codec_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a token file to PRL")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_codec_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("roundtrip", help="check decode(encode(roll)) == roll")
    p.add_argument("input")
    p.add_argument("--all-modes", action="store_true")
    _add_codec_flags(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("tokenize", help="baseline tokenization of a PRL roll")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--scheme", choices=["remi", "midilike", "abc"], default="remi")
    p.add_argument("--names", action="store_true", help="write token names instead of ids")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("bpe-train", help="train BPE merges on baseline token sequences")
    p.add_argument("inputs", nargs="+", help=".tok files, or .prl files/directories to tokenize")
    p.add_argument("--merges", type=int, default=100)
    p.add_argument("--scheme", choices=["remi", "midilike"], default="remi")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("bpe-apply", help="apply (or undo) BPE merges on a token file")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--decode", action="store_true")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("stats", help="encoding-efficiency table over a corpus of PRL files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--schemes", default=",".join(metrics.ALL_SCHEMES))
    p.add_argument("--bpe-merges", type=int, default=100)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output")
    _add_codec_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("metrics", help="PR/GC/SC per file, or JS similarity between two sets")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("inputs", nargs="*", default=[])
    src.add_argument("--js", nargs=2, metavar=("DIR_A", "DIR_B"))
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen-corpus", help="write a seeded synthetic corpus of PRL files")
    p.add_argument("output")
    defaults = corpus.SynthParams()
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--pieces", type=int, default=defaults.pieces)
    p.add_argument("--bars", type=int, default=defaults.bars)
    p.add_argument("--timesig", type=_timesig, default=defaults.timesig)
    p.add_argument("--chord-prob", type=float, default=defaults.chord_prob)
    p.add_argument("--half-range", type=int, default=defaults.half_range)
    p.add_argument("--density", type=float, default=defaults.density)
    p.add_argument("--steps-per-beat", type=int, default=defaults.steps_per_beat)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("vocab", help="dump a vocabulary as JSON")
    p.add_argument("-o", "--output")
    p.add_argument("--scheme", choices=["remi", "midilike", "abc"])
    _add_codec_flags(p)
    p.set_defaults(func=cmd_vocab)
    return parser


def _read_config_file(path: str) -> list[str]:
    """Turn ``key = value`` lines into flags; ``true`` enables a switch, ``false`` drops it."""
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = (x.strip() for x in line.split(sep, 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            out.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            out += [flag, value]
    return out


def _expand_config(argv: list[str]) -> list[str]:
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    extra = _read_config_file(known.config)
    for i, a in enumerate(rest):
        if a in SUBCOMMANDS:
            # file values go first so explicit flags on the command line win
            return rest[: i + 1] + extra + rest[i + 1 :]
    return rest + extra


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv)
    except (OSError, ValueError) as exc:
        print(f"prevent: config file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"prevent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PianorollEventError, OSError, ValueError) as exc:
        print(f"prevent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
