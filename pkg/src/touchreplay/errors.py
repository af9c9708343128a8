"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class IngestError(PipelineError):
    """A recording or frame manifest could not be loaded."""


class ValidationError(PipelineError):
    """An input file violated one of the documented schemas."""


class ConfigError(PipelineError):
    """Configuration is inconsistent or unusable."""


class RenderError(PipelineError):
    """A synthetic scenario could not be rendered."""


class GenerationError(PipelineError):
    """An action list could not be turned into a replay script."""


class ScriptParseError(PipelineError):
    """A replay script file is malformed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SimulationError(PipelineError):
    """A replay script violates the pointer-event grammar."""
