"""Exception hierarchy shared by all hitchkit modules."""


class HitchkitError(Exception):
    """Base class for all library errors."""


class InvalidResolution(HitchkitError):
    pass


class InvalidModulus(HitchkitError):
    pass


class InvalidRadius(HitchkitError):
    pass


class IncompatibleSpec(HitchkitError):
    pass


class ChartMismatch(HitchkitError):
    pass


class NonHolomorphicEntry(HitchkitError):
    pass


class WrongKind(HitchkitError):
    pass


class WrongDifferentialCount(HitchkitError):
    pass


class UnsupportedCoupling(HitchkitError):
    pass


class EvenPower(HitchkitError):
    pass


class NonConvergence(HitchkitError):
    def __init__(self, iterations, last_residual):
        self.iterations = iterations
        self.last_residual = last_residual
        super().__init__(
            f"Newton iteration did not converge: {iterations} steps, "
            f"last residual {last_residual:.3e}"
        )


class UnstableInput(HitchkitError):
    pass


class MissingBoundaryData(HitchkitError):
    pass


class NotConverged(HitchkitError):
    pass


class NoRealForm(HitchkitError):
    pass


class PathOutsideChart(HitchkitError):
    pass


class UnsupportedChart(HitchkitError):
    pass


class SectionVanishes(HitchkitError):
    pass


class NotSimplyConnected(HitchkitError):
    pass


class FrameDegenerate(HitchkitError):
    pass


class IncompatibleConstruction(HitchkitError):
    pass


class DegenerateMetric(HitchkitError):
    def __init__(self, nodes):
        self.nodes = nodes
        super().__init__(f"metric not positive definite at {len(nodes)} node(s)")


class NonRealRepresentative(HitchkitError):
    pass


class UnsupportedConstruction(HitchkitError):
    pass


class SchemaViolation(HitchkitError):
    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class UnknownConstruction(HitchkitError):
    pass
