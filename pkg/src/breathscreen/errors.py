"""Exception types raised across the toolkit."""


class BreathScreenError(Exception):
    pass


# audio
class MalformedHeader(BreathScreenError, ValueError):
    pass


class UnsupportedEncoding(BreathScreenError, ValueError):
    pass


class TruncatedData(BreathScreenError, ValueError):
    pass


class EmptyClip(BreathScreenError, ValueError):
    pass


class ManifestError(BreathScreenError, ValueError):
    pass


# dsp
class ClipTooShort(BreathScreenError, ValueError):
    pass


class InvalidBand(BreathScreenError, ValueError):
    pass


class InvalidConfig(BreathScreenError, ValueError):
    pass


# stats
class EmptyTrack(BreathScreenError, ValueError):
    pass


class UnknownMaskEntry(BreathScreenError, KeyError):
    pass


# selection / models
class SingleClass(BreathScreenError, ValueError):
    pass


class DegenerateMatrix(BreathScreenError, ValueError):
    pass


class KTooLarge(BreathScreenError, ValueError):
    pass


class ShapeMismatch(BreathScreenError, ValueError):
    pass


class InvalidSpec(BreathScreenError, ValueError):
    pass


class NonFinite(BreathScreenError, FloatingPointError):
    pass


class BadMagic(BreathScreenError, ValueError):
    pass


class VersionMismatch(BreathScreenError, ValueError):
    pass


class ChecksumFailure(BreathScreenError, ValueError):
    pass


class SpecMismatch(BreathScreenError, ValueError):
    """Model file kind or feature layout does not match what the caller expects."""


# evaluation
class TooFewGroups(BreathScreenError, ValueError):
    pass


class EmptyMatrix(BreathScreenError, ValueError):
    pass


class LeakageDetected(BreathScreenError, AssertionError):
    pass


class FoldClassMissing(BreathScreenError, ValueError):
    pass


class IoFailure(BreathScreenError, OSError):
    pass
