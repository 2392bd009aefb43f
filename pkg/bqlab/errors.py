from pathlib import Path

from bqlab.constants import EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_USAGE


class BqlabError(Exception):
    """
    Base class for every error raised by bqlab. The `status` attribute is
    the process exit code used when the error reaches the CLI.
    """
    status: int = EXIT_USAGE


class ConfigError(BqlabError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line

        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "

        super().__init__(prefix + message)


class FormatError(BqlabError):
    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        self.path = path
        self.line = line

        location = str(path) if path is not None else "<input>"
        if line is not None:
            location += f":{line}"

        super().__init__(f"{location}: {message}")


class NumericalAbort(BqlabError):
    status = EXIT_NUMERICAL


class GeometryError(NumericalAbort):
    pass


class InvariantFailure(BqlabError):
    status = EXIT_INVARIANT

    def __init__(self, message: str, failures: list[str] | None = None):
        self.failures = failures or []
        if self.failures:
            message = message + ": " + "; ".join(self.failures)
        super().__init__(message)


class LemmaPreconditionError(InvariantFailure):
    pass
