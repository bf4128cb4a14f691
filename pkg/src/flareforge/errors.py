"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateAxisError(ValueError):
    """Ghost placement axis is undefined (source at image center)."""


class DivergenceError(RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
