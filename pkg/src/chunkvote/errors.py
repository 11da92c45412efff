"""Exception types raised across the package."""


class ChunkVoteError(Exception):
    """Base class for all package errors."""


class InvalidInput(ChunkVoteError, ValueError):
    pass


class InvalidDims(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class LengthMismatch(InvalidInput):
    pass


class NonFiniteInput(InvalidInput):
    pass


class OutOfRange(InvalidInput):
    pass


class EmptyDataset(InvalidInput):
    pass


class DegenerateDimension(InvalidInput):
    pass


class EmptyCandidates(InvalidInput):
    pass


class NonMonotonicStep(InvalidInput):
    pass


class MissingCurrent(ChunkVoteError, LookupError):
    pass


class NoActToken(ChunkVoteError, LookupError):
    pass


class MissingBaseline(ChunkVoteError, LookupError):
    pass


class EpisodeOver(ChunkVoteError, RuntimeError):
    pass


class Diverged(ChunkVoteError, ArithmeticError):
    pass
