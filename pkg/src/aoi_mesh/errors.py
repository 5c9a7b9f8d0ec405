class ConvergenceError(RuntimeError):
    """A fixed-point iteration stopped at ``max_iter`` without meeting its tolerance."""

    def __init__(self, message: str, residual: float, history=()):
        super().__init__(f"{message} (last residual {residual:.3g})")
        self.residual = residual
        self.history = list(history)


class DivergenceError(ArithmeticError):
    """The network average AoI integral is suspected to diverge."""
