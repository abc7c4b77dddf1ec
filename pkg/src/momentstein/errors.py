"""Exception types raised across the package."""


class MomentSteinError(Exception):
    """Base class for all library errors."""


class HyperplaneSupportError(MomentSteinError, ValueError):
    def __init__(self, msg="hyperplane support"):
        super().__init__(msg)


class UnknownFamilyError(MomentSteinError, ValueError):
    pass


class IntegrationError(MomentSteinError, ArithmeticError):
    def __init__(self, msg="integration failure"):
        super().__init__(msg)


class SamplingUnsupportedError(MomentSteinError):
    def __init__(self, msg="sampling unsupported"):
        super().__init__(msg)


class NotCenteredError(MomentSteinError, ValueError):
    def __init__(self, msg="not centered"):
        super().__init__(msg)


class NoClosedFormError(MomentSteinError, ValueError):
    def __init__(self, msg="no closed form"):
        super().__init__(msg)


class SolverStalledError(MomentSteinError, RuntimeError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"solver stalled after {iterations} iterations (residual {residual:.3e})")


class OutsideRangeError(MomentSteinError, ValueError):
    def __init__(self, msg="outside range"):
        super().__init__(msg)


class LegendreDivergenceError(MomentSteinError, RuntimeError):
    def __init__(self, msg="legendre divergence"):
        super().__init__(msg)


class InsufficientQuadratureError(MomentSteinError, RuntimeError):
    def __init__(self, msg="insufficient quadrature"):
        super().__init__(msg)


class UnsupportedKernelError(MomentSteinError, ValueError):
    def __init__(self, msg="unsupported kernel source"):
        super().__init__(msg)


class SingularHessianError(MomentSteinError, ArithmeticError):
    def __init__(self, msg="singular Hessian"):
        super().__init__(msg)


class SizeOverflowError(MomentSteinError, ValueError):
    def __init__(self, msg="problem too large for exact LP: use entropic"):
        super().__init__(msg)


class BudgetExceededError(MomentSteinError, ValueError):
    def __init__(self, msg="budget exceeded"):
        super().__init__(msg)


class NoExplicitConstantError(MomentSteinError, ValueError):
    def __init__(self, msg="no explicit constant"):
        super().__init__(msg)


class KernelInvariantError(MomentSteinError, ArithmeticError):
    """A kernel evaluation is not symmetric or not positive semidefinite."""

    def __init__(self, invariant, value):
        self.invariant = invariant
        self.value = value
        super().__init__(f"kernel not {invariant} ({value:.2e})")
