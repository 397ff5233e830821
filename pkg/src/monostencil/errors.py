"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented domain."""


class DegenerateCoefficient(ValueError):
    """A coefficient matrix is not positive definite."""


class OutOfBounds(ValueError):
    """A point lies outside the region a structure was built for."""


class InvalidKernel(ValueError):
    """Kernel exponent outside the admissible range."""


class EmptyNeighborhood(RuntimeError):
    """A search region contains no usable neighbor."""


class Infeasible(RuntimeError):
    """The stencil linear program has no nonnegative solution."""


class LpNumericalError(RuntimeError):
    """The simplex iteration broke down numerically."""


class StencilFailure(RuntimeError):
    """No positive stencil could be found even at the full search radius."""

    def __init__(self, point_id: int, delta: float):
        super().__init__(f"no positive stencil at point {point_id} (delta={delta:.6g})")
        self.point_id = point_id
        self.delta = delta


class SolverBreakdown(RuntimeError):
    """BiCGSTAB hit repeated breakdowns."""


class AdjustmentFailed(RuntimeError):
    """Point cloud adjustment ran out of loops with conditions still violated."""

    def __init__(self, violated, report=None):
        super().__init__(f"point cloud still violates condition(s) {', '.join(violated)}")
        self.violated = list(violated)
        self.report = report
