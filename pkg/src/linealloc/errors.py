"""Exception types shared across the package."""


class UnstableModelError(ValueError):
    """Offered load is at or above the total service capacity."""


class RootMultiplicityError(ArithmeticError):
    """Two roots of a characteristic equation are numerically indistinguishable."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced an untrustworthy value."""


class InfeasibleInstanceError(ValueError):
    """The spatial instance admits no assignment satisfying the request."""
