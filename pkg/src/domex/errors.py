"""Exception hierarchy.

Two broad families map onto process exit codes: data problems (corpus layout,
truth files, malformed inputs) exit with 3, numeric failures (non-finite
values, shape violations) exit with 4.  Usage errors are handled by the CLI
layer and exit with 2.
"""


class DomexError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DataError(DomexError):
    exit_code = 3


class NumericError(DomexError):
    exit_code = 4


class UnreadableInput(DataError):
    """Input bytes could not be decoded under any supported encoding."""


class CorpusEmpty(DataError):
    """A corpus directory yielded no sites or no pages."""


class MissingPage(DataError):
    """A ground-truth file references a page that is not on disk."""


class MissingTruthFile(DataError):
    """A (site, field) ground-truth file is absent.

    Only raised in strict mode; the default loader downgrades this to a
    warning and treats the field as all-empty for that site.
    """


class EmptyCorpus(DataError):
    """Vocabulary construction was given no usable pages."""


class EmptyTrainingSet(DataError):
    """Model training was given zero examples."""


class NoPairsConstructed(DataError):
    """Pair-stage training produced no node pairs (degenerate stage-1 output)."""


class MalformedXPath(DataError):
    """An XPath string could not be parsed into a tag sequence."""


class DuplicatePrediction(DataError):
    """More than one prediction was supplied for a (page, field) slot."""


class InsufficientSites(DataError):
    """An experiment needs more sites than the corpus provides."""


class ShapeMismatch(NumericError):
    """Tensor operands have incompatible shapes."""


class IndexOutOfRange(NumericError):
    """An embedding or class index fell outside its table."""


class NonFiniteValue(NumericError):
    """An operation produced NaN or Inf; carries the op name."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
