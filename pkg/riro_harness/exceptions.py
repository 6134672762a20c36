"""Exception classes raised across the harness. The CLI maps each family onto its own exit code."""


class HarnessError(Exception):
    """Base class for all errors the harness raises on purpose."""


class ConfigError(HarnessError):
    """One or more configuration problems, reported together."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))


class DatasetError(HarnessError):
    """A dataset or input file could not be read as expected."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f'line {line_number}: {message}'
        super().__init__(message)


class CorruptionError(HarnessError):
    """A run directory whose stored aggregate disagrees with its item files, or whose layout is broken."""


class StageError(HarnessError):
    """A pipeline stage failed for one story. Carries the trace recorded up to the failure."""

    def __init__(self, story_id: str, stage, cause: Exception, trace=None):
        self.story_id = story_id
        self.stage = stage
        self.cause = cause
        self.trace = trace
        super().__init__(f'story {story_id!r}, stage {stage.value}: {cause}')


class BackendError(HarnessError):
    """A completion call failed. `attempts` counts the requests actually sent."""

    def __init__(self, message: str, attempts: int = 1):
        self.attempts = attempts
        super().__init__(f'{message} (after {attempts} attempt{"s" if attempts != 1 else ""})')


class BackendTimeoutError(BackendError):
    """Every attempt exceeded the configured timeout."""


class BackendTransportError(BackendError):
    """The server could not be reached."""


class BackendStatusError(BackendError):
    """The server answered with a non-success status."""

    def __init__(self, message: str, status: int, attempts: int = 1):
        self.status = status
        super().__init__(message, attempts)


class BackendProtocolError(BackendError):
    """The response body was not a chat completion."""

    def __init__(self, message: str, body_excerpt: str = '', attempts: int = 1):
        self.body_excerpt = body_excerpt
        super().__init__(f'{message}: {body_excerpt!r}', attempts)


class EmptyCompletionError(BackendError):
    """The backend returned no text."""
