"""Exception types shared across the package.

Every error the library raises deliberately derives from SmtlabError so the
CLI can map failure classes onto stable exit codes.
"""


class SmtlabError(Exception):
    pass


class ConfigError(SmtlabError):
    """Invalid configuration file, flag value, or missing input path."""


class RefusalError(SmtlabError):
    """Operation refused (e.g. output directory already populated)."""


# --- kern codec ---------------------------------------------------------


class KernStructureError(SmtlabError):
    """Base for structural kern violations; carries a 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.reason = message


class MalformedRecord(KernStructureError):
    pass


class UnterminatedSpine(KernStructureError):
    pass


class MissingExclusiveInterpretation(KernStructureError):
    pass


class UnknownSymbol(SmtlabError):
    """A token is absent from a frozen vocabulary (train/test mismatch)."""


class IllegalControlToken(SmtlabError):
    """<sot>/<eot>/<pad> encountered where only content tokens are legal."""


# --- synthesis ----------------------------------------------------------


class SpineCountMismatch(SmtlabError):
    """Document spine layout does not match the requested render style."""


class InsufficientPieces(SmtlabError):
    """Too few distinct piece ids to form train/validation/test splits."""


# --- model --------------------------------------------------------------


class ImageTooSmall(SmtlabError):
    """Input image is below one full encoder downscale factor."""


class ChannelCountNotDivisibleBy4(SmtlabError):
    """2D positional encoding requires the channel count to be 4k."""


class PrefixTooLong(SmtlabError):
    """Decode prefix has reached the maximum decode length."""


class VocabularyMismatch(SmtlabError):
    """Checkpoint vocabulary hash differs from the supplied vocabulary."""


class CheckpointError(SmtlabError):
    """Checkpoint file is missing, unreadable, or has the wrong format."""


# --- training -----------------------------------------------------------


class SplitLeakage(SmtlabError):
    """A piece id appears in more than one split."""

    def __init__(self, piece_ids):
        self.piece_ids = sorted(piece_ids)
        super().__init__(f"piece ids in multiple splits: {', '.join(self.piece_ids)}")


class SequenceExceedsMaxLength(SmtlabError):
    """A reference sequence is longer than the model's decode limit."""


class EmptyReference(SmtlabError):
    """Reference has zero tokens; error rates are undefined."""
