"""Exception types shared across the package."""


class NetdriftError(Exception):
    """Base class for all package-specific errors."""


# -- topology --------------------------------------------------------------

class AsymmetricAdjacency(NetdriftError):
    pass


class DisconnectedGraph(NetdriftError):
    pass


class DegenerateNeighborhood(NetdriftError):
    pass


class StochasticityViolation(NetdriftError):
    """A combination matrix fails its row/column stochasticity requirement."""

    def __init__(self, matrix_name, axis, sums):
        self.matrix_name = matrix_name
        self.axis = axis
        super().__init__(
            f"matrix {matrix_name!r} is not stochastic along {axis} "
            f"(sums: {sums})"
        )


# -- risk ------------------------------------------------------------------

class DimensionMismatch(NetdriftError):
    pass


class NoMomentsAvailable(NetdriftError):
    pass


class UnboundedFeatures(NetdriftError):
    pass


class NonConvergence(NetdriftError):
    def __init__(self, message, grad_norm=None, iterations=None):
        self.grad_norm = grad_norm
        self.iterations = iterations
        super().__init__(message)


# -- drift -----------------------------------------------------------------

class TickBeyondHorizon(NetdriftError):
    pass


# -- engine ----------------------------------------------------------------

class Divergence(NetdriftError):
    """A weight trajectory left the finite range; reports where and when."""

    def __init__(self, node, time, step_size):
        self.node = node
        self.time = time
        self.step_size = step_size
        super().__init__(
            f"non-finite or exploding weight at node {node}, tick {time} "
            f"(step size {step_size})"
        )


# -- metrics ---------------------------------------------------------------

class EmptyEvalBatch(NetdriftError):
    pass


class MissingHessian(NetdriftError):
    pass


class SingleClassBatch(NetdriftError):
    pass


# -- theory ----------------------------------------------------------------

class UnstableB(NetdriftError):
    def __init__(self, spectral_radius):
        self.spectral_radius = spectral_radius
        super().__init__(
            f"steady-state predictor refused: spectral radius {spectral_radius:.6g} >= 1"
        )


class MissingNodeIndex(NetdriftError):
    pass


class AssumptionViolation(NetdriftError):
    pass


class ZeroNoise(NetdriftError):
    pass


# -- cli / io ---------------------------------------------------------------

class ParseError(NetdriftError):
    pass


class ValidationError(NetdriftError):
    pass


class MalformedLine(NetdriftError):
    def __init__(self, path, line_no, detail):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {detail}")


class LabelDomainError(NetdriftError):
    pass
