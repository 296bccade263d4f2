"""Exception hierarchy shared by all cmcglue modules."""


class CmcGlueError(Exception):
    """Base class for all library errors."""


class GeometryError(CmcGlueError):
    """Infeasible or degenerate geometric input."""


class RankError(CmcGlueError):
    """A linear system is rank deficient where invertibility is required."""


class SolverError(CmcGlueError):
    """An iterative or numerical procedure failed."""


# sphere_geom
class AntipodalPoints(GeometryError):
    pass


class ChartPole(GeometryError):
    pass


class DegeneratePair(GeometryError):
    pass


# config
class NonPositiveSeparation(GeometryError):
    pass


class ClosureViolation(GeometryError):
    pass


class JunctionMismatch(GeometryError):
    pass


class OverlappingSpheres(GeometryError):
    pass


class GroupClosureOverflow(SolverError):
    pass


# neck
class DegenerateC(GeometryError):
    pass


class OutOfBand(GeometryError):
    pass


class InversionFailure(SolverError):
    pass


class DomainError(GeometryError):
    pass


# greens
class GramSingular(RankError):
    pass


class TruncationTooLow(SolverError):
    pass


class TooCloseToSource(GeometryError):
    pass


class IllConditionedFit(SolverError):
    pass


# balance
class TanPole(GeometryError):
    pass


class SingularJacobian(RankError):
    pass


class NoConvergence(SolverError):
    pass


class StepTooLarge(SolverError):
    pass


# surface
class PoleOnSurface(GeometryError):
    pass


class GridTooCoarse(SolverError):
    pass


class PatchMismatch(GeometryError):
    """Adjacent surface patches disagree on their shared boundary."""


# cli
class ParseError(CmcGlueError):
    """Unreadable or schema-violating run configuration."""
