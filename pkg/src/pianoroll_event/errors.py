"""Exception hierarchy.

Every data-level failure raised by the package derives from
:class:`PianorollEventError`, so batch callers and the CLI can contain
errors with a single ``except`` clause.
"""


class PianorollEventError(Exception):
    """Base class for all data errors raised by this package."""


# pianoroll / MIDI ingestion
class MalformedMidi(PianorollEventError):
    pass


class EmptyScore(PianorollEventError):
    pass


class UnsupportedTimeSig(PianorollEventError):
    pass


# PRL container
class BadMagic(PianorollEventError):
    pass


class TruncatedFile(PianorollEventError):
    pass


class InvariantViolation(PianorollEventError):
    pass


# codec
class ConfigInvariantViolation(PianorollEventError):
    pass


class ConfigMismatch(PianorollEventError):
    """Input was produced under a different grid or scheme than requested."""


class DimensionMismatch(PianorollEventError):
    pass


class BarAlignmentError(PianorollEventError):
    pass


class NonCanonicalSequence(PianorollEventError):
    pass


class StructureMismatch(PianorollEventError):
    pass


class UnknownToken(PianorollEventError):
    pass


class ConfigHashMismatch(PianorollEventError):
    pass


# baselines
class PitchOutOfAbcRange(PianorollEventError):
    pass


class EmptyCorpus(PianorollEventError):
    pass


class MixedVocabularies(PianorollEventError):
    pass


# metrics
class DomainError(PianorollEventError):
    pass


class EmptyRoll(PianorollEventError):
    pass


class TooFewBars(PianorollEventError):
    pass


class TooFewSamples(PianorollEventError):
    pass


# corpus
class NoInputFiles(PianorollEventError):
    pass


class IoError(PianorollEventError):
    pass
