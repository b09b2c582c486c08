"""Exception types shared across the package."""


class CurlLabError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedRankError(CurlLabError, ValueError):
    """Operation applied to a field rank it is not defined for."""


class DegenerateMetricError(CurlLabError):
    """Metric failed the SPD check at some grid point.

    Carries the offending sample point and the smallest eigenvalue found.
    """

    def __init__(self, point, min_eigenvalue):
        self.point = tuple(float(p) for p in point)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"metric not positive definite at grid point {self.point}: "
            f"min eigenvalue {self.min_eigenvalue:.3e}"
        )


class NotContactError(CurlLabError):
    """A 1-form expected to be contact has vanishing defect on the grid."""


class HasZerosError(CurlLabError):
    """Vector field vanishes somewhere, so the Reeb construction does not apply.

    Callers should route such fields to fixed-point analysis instead.
    """

    def __init__(self, min_norm, zero_tol):
        self.min_norm = float(min_norm)
        self.zero_tol = float(zero_tol)
        super().__init__(
            f"field has (near-)zeros: min |u| = {self.min_norm:.3e} <= "
            f"tolerance {self.zero_tol:.3e}"
        )


class StiffnessError(CurlLabError):
    """Adaptive integrator step size underflowed."""


class EigensolverError(CurlLabError):
    """Eigenvalue solver failed to converge; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class BranchAmbiguityError(CurlLabError):
    """Eigenvalue continuation could not resolve a branch crossing.

    This is data, not failure: it flags a non-generic metric path. The
    partial track and the ambiguous candidates are attached.
    """

    def __init__(self, s, candidates, track):
        self.s = float(s)
        self.candidates = [float(c) for c in candidates]
        self.track = track
        super().__init__(
            f"ambiguous eigenvalue matching at s={self.s:.6g}: "
            f"candidates {self.candidates}"
        )


class IncompatibleStructureError(CurlLabError):
    """Almost-complex structure incompatible with the 2-form it must tame."""


class FrameError(CurlLabError):
    """No admissible trivializing frame for the plane field along the orbit."""


class EnsembleAmplitudeError(CurlLabError):
    """Random metric ensemble kept producing non-SPD samples."""
