"""Exception types raised by the simulation pipeline."""


class SimulationError(RuntimeError):
    """A trajectory left the finite reals.

    ``path`` and ``step`` locate the failure when known; ``component`` is the
    offending state component.
    """

    def __init__(self, message, *, path=None, step=None, component=None):
        where = []
        if path is not None:
            where.append(f"path {path}")
        if step is not None:
            where.append(f"step {step}")
        if component is not None:
            where.append(f"component {component}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.step = step
        self.component = component


class SamplerError(RuntimeError):
    """A response function failed on a sample; ``index`` is the sample index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"sample {index}: {message}")
        self.index = index


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class IdentificationError(ValueError):
    """The likelihood is undefined at a data point; ``index`` is the increment index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"increment {index}: {message}")
        self.index = index
