"""Exception types shared across the package.

Every error raised on a user-facing path derives from :class:`TailClustError`
so the CLI can map error families to distinct exit codes.
"""


class TailClustError(Exception):
    """Base class for all package errors."""


class DataFormatError(TailClustError):
    """Input file could not be parsed (carries row/line context)."""


class EmptyExtremeSet(TailClustError):
    """No observation exceeds the radial threshold."""


class BelowScale(TailClustError):
    """Point lies below the rectangle partition scale (sup-norm < 1)."""


class EmptySupport(TailClustError):
    """No face survives the mass threshold."""


class UncoveredCoordinate(TailClustError):
    """A non-singleton coordinate belongs to no face, so the column
    constraint on the weight matrix cannot be satisfied."""


class BoundaryPoint(TailClustError):
    """Dirichlet density requested on the boundary of the sub-simplex."""


class DegeneratePolar(TailClustError):
    """Polar decomposition with zero radius."""


class AllComponentsZero(TailClustError):
    """Every component conditional density vanished for some row; the
    support set does not match the data."""


class DeadComponent(TailClustError):
    """A mixture component received zero posterior mass."""


class OptimizerFailure(TailClustError):
    """No feasible improving point found within the iteration budget."""


class InfeasibleK(TailClustError):
    """Could not draw the requested number of distinct non-nested faces."""


class SupportMismatch(TailClustError):
    """Two parameter bundles do not share the same support set."""


class LengthMismatch(TailClustError):
    """Paired label vectors have different lengths."""


class UnsupportedFormat(TailClustError):
    """Unknown graph export format."""


class ConvergenceFailure(TailClustError):
    """Eigen-solver or optimizer did not converge."""


class NetworkError(TailClustError):
    """Dataset download failed and no cached copy exists."""


class ChecksumMismatch(TailClustError):
    """Cached dataset does not match its recorded checksum."""
