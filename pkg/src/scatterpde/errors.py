"""Exception types shared across the package."""


class InsufficientNeighborsError(ValueError):
    """Fewer neighbors than derivative unknowns."""

    def __init__(self, k, m, point=None):
        self.k = k
        self.m = m
        self.point = point
        where = f" at point {point}" if point is not None else ""
        super().__init__(
            f"insufficient neighbors{where}: K={k} but m={m} derivative unknowns "
            f"are required"
        )


class UnstableEquationError(ValueError):
    """The equation has growing Fourier modes, so its exact solution blows up."""


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"rollout diverged at step {step}")
