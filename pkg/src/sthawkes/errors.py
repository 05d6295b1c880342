"""Exception types shared across the package."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite, degenerate, or uncertifiable
    result (singular design, zero lower intensity, diverging objective)."""
