"""Exception types shared across the package."""


class MetaselectError(Exception):
    """Base class for all errors raised by this package."""


# --- bundle loading / writing ---------------------------------------------

class BundleError(MetaselectError):
    """Base class for run-bundle validation and I/O errors."""


class ManifestError(BundleError):
    """Manifest is missing required keys, malformed, or wrong version."""


class MissingFile(BundleError):
    """A file declared in the manifest does not exist."""


class ShapeMismatch(BundleError):
    """Tensor byte length or declared shapes are inconsistent."""


class ProbabilityRowNotNormalized(BundleError):
    """A probability row does not sum to 1 within tolerance.

    Carries the tensor name and the offending row index.
    """

    def __init__(self, tensor, row, total, detail=""):
        self.tensor = tensor
        self.row = row
        self.total = total
        msg = f"{tensor}: row {row} sums to {total!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class LabelOutOfRange(BundleError):
    """A label is outside [0, n_classes)."""


class EmptyBundle(BundleError):
    """Bundle has zero samples."""


class NonFiniteTensor(BundleError):
    """An embedding or token log-probability tensor contains NaN/Inf."""


class IoFailure(BundleError):
    """Filesystem failure while writing a bundle."""


# --- measures --------------------------------------------------------------

class MeasureError(MetaselectError):
    """Base class for measure-computation errors."""


class TooFewCandidates(MeasureError):
    """A kNN candidate set has fewer than K members."""

    def __init__(self, detail, k):
        self.k = k
        super().__init__(f"{detail}: fewer than K={k} candidates")


class MissingInput(MeasureError):
    """An explicitly requested measure needs a bundle field that is absent."""

    def __init__(self, measure, field):
        self.measure = measure
        self.field = field
        super().__init__(f"measure '{measure}' requires bundle field '{field}'")


class UnknownMeasure(MeasureError):
    """A measure name is not in the registry."""

    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown measure '{name}'")


class EmptyTokenSequence(MeasureError):
    """A sample has no token log-probabilities."""

    def __init__(self, index):
        self.index = index
        super().__init__(f"sample {index} has an empty token sequence")


# --- feature space ---------------------------------------------------------

class CoordShapeMismatch(MetaselectError):
    """Externally supplied 2-D coordinates have the wrong shape."""


# --- selection -------------------------------------------------------------

class SelectionError(MetaselectError):
    """Base class for subset-selection errors."""


class NonPositiveScore(SelectionError):
    """A DPP quality score is not strictly positive."""


class NonPositiveBeta(SelectionError):
    """Similarity bandwidth must be strictly positive."""


class BudgetExceedsN(SelectionError):
    """Requested subset size exceeds the number of samples."""


class UnknownMethod(SelectionError):
    """Selection method string is not recognized."""


class CombinatorialBlowup(SelectionError):
    """Exhaustive search space exceeds the configured cap."""


class RankDeficientWarning(UserWarning):
    """Greedy selection exhausted the numerical rank of the kernel."""
