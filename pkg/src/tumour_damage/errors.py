class InvalidInitialData(ValueError):
    """Initial data violate a hypothesis the scheme relies on."""


class Violation(AssertionError):
    """A runtime invariant check failed."""

    def __init__(self, what: str, detail: dict | None = None):
        super().__init__(what)
        self.what = what
        self.detail = detail or {}


class OutOfRange(ValueError):
    """Requested time lies outside the simulated interval."""


class ValidationError(ValueError):
    """A parameter or config value breaks a constraint."""

    def __init__(self, field: str, constraint: str, value=None):
        super().__init__(f"{field}: requires {constraint}, got {value!r}")
        self.field = field
        self.constraint = constraint
        self.value = value


class ParseError(ValueError):
    """A config line could not be read."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class SchemaError(ValueError):
    """A snapshot file does not have the expected layout."""
