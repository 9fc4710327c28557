"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid parameter combination (neighbor counts, PCA rank, solver settings)."""


class DegenerateScaleError(ValueError):
    """A point's M-th neighbor coincides with it, so its local scale is zero."""

    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(
            message
            or f"local scale of point {self.index} is zero; deduplicate or jitter the data"
        )


class DivergenceError(RuntimeError):
    """The solver state became non-finite."""

    def __init__(self, iteration: int, vertex: int):
        self.iteration = int(iteration)
        self.vertex = int(vertex)
        super().__init__(
            f"non-finite state at iteration {self.iteration}, vertex {self.vertex}; "
            "reduce dt or increase eps"
        )


class FormatError(ValueError):
    """Input file does not match the expected format."""
