"""Exception types shared across the package."""


class RobustlabError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(RobustlabError, ValueError):
    """Operands have incompatible shapes or dimensions."""


class ParameterError(RobustlabError, ValueError):
    """An argument value is outside its allowed range."""


class ContractError(RobustlabError, ValueError):
    """An API precondition was violated by the caller."""


class CapabilityError(RobustlabError, ValueError):
    """The request exceeds what this implementation supports."""


class ConfigError(RobustlabError, ValueError):
    """A training or experiment configuration is inconsistent."""


class SchemaError(RobustlabError, ValueError):
    """A file parsed cleanly but its content contradicts its declared schema."""


class ParseError(RobustlabError, ValueError):
    """A file could not be parsed.

    `line` is 1-based; `offset` is the byte offset of the offending line
    within the file. Either may be None when unknown.
    """

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.offset = offset
