"""Exception hierarchy shared across brepseq modules."""


class BrepError(Exception):
    """Base class for every error raised by brepseq."""


# geometry / model construction
class NonFiniteGeometry(BrepError, ValueError):
    pass


class NonFiniteInput(BrepError, ValueError):
    pass


class InvariantError(BrepError, ValueError):
    pass


class ParamError(BrepError, ValueError):
    pass


# serialization
class ParseError(BrepError, ValueError):
    pass


class SchemaError(BrepError, ValueError):
    pass


# quantizers
class IndexOutOfRange(BrepError, IndexError):
    pass


class EmptyCodebook(BrepError, ValueError):
    pass


class EmptyDataset(BrepError, ValueError):
    pass


class HashMismatch(BrepError, ValueError):
    """Artifact was produced under an incompatible codebook or layout."""


# sequencing
class TooManyFaces(BrepError, ValueError):
    pass


class CoordOutOfRange(BrepError, ValueError):
    pass


class SequenceError(BrepError, ValueError):
    """A token sequence violates the block grammar.

    ``position`` is the offending token index (or None when not local).
    """

    code = "sequence"

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at token {position})")
        self.position = position


class BadStart(SequenceError):
    code = "BadStart"


class TypeMismatch(SequenceError):
    code = "TypeMismatch"

    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"expected {expected} token, found {found}", position)
        self.expected = expected
        self.found = found


class TruncatedBlock(SequenceError):
    code = "TruncatedBlock"


class MissingSep(SequenceError):
    code = "MissingSep"


class MissingEnd(SequenceError):
    code = "MissingEnd"


class TrailingTokens(SequenceError):
    code = "TrailingTokens"


class ReferenceError_(SequenceError):
    """Grammatical sequence whose face-index references are inconsistent."""

    code = "Reference"


class DuplicateFaceIndex(ReferenceError_):
    code = "DuplicateFaceIndex"


class UnknownFaceReference(ReferenceError_):
    code = "UnknownFaceReference"


class SelfLoopEdge(ReferenceError_):
    code = "SelfLoopEdge"


# generation
class EmptyCorpus(BrepError, ValueError):
    pass


class TokenOutOfVocab(BrepError, ValueError):
    pass


class SequenceTooLong(BrepError, ValueError):
    pass


class DegenerateDistribution(BrepError, ValueError):
    pass


# metrics
class EmptyModel(BrepError, ValueError):
    pass


class EmptyCloud(BrepError, ValueError):
    pass


class UsageError(BrepError):
    pass
