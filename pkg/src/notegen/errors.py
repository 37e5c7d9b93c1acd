"""Exception hierarchy shared across the package."""


class NotegenError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NotegenError):
    """Invalid or inconsistent configuration (missing paths, bad values)."""


class SchemaError(NotegenError):
    """A schema map references a column the input file does not carry."""


class RowParseError(NotegenError):
    """A data row could not be parsed (strict mode only)."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class RenderError(NotegenError):
    """A prompt template could not be rendered (missing or empty slot)."""


class BudgetError(NotegenError):
    """A request would not fit the configured model context window."""


class TransportError(NotegenError):
    """The backend was unreachable or kept failing transiently."""


class ProtocolError(NotegenError):
    """The backend answered with a non-success status."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"backend returned status {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ScriptError(NotegenError):
    """A scripted mock backend had no entry matching the request."""


class PipelineError(NotegenError):
    """A generation stage failed for one instance."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause
