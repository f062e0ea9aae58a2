"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (divergence, non-finite values, bracketing)."""


class RegressionDegeneracyError(NumericalError):
    """Too few active paths to fit the regression basis at some time step."""

    def __init__(self, step, n_active, n_basis):
        self.step = step
        self.n_active = n_active
        self.n_basis = n_basis
        super().__init__(
            f"step {step}: {n_active} active paths for {n_basis} basis functions"
        )


class UndefinedEstimateError(NumericalError):
    """An estimator has no samples to average over."""
