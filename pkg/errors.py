from typing import Optional


class EvclusError(Exception):
    """Base class for every error raised by this package."""
    pass


class ValidationError(EvclusError, ValueError):
    """Bad shapes, out-of-range parameters or inconsistent inputs."""
    pass


class NumericalError(EvclusError, ArithmeticError):
    """A non-finite value appeared in a forward pass, loss or gradient."""

    def __init__(self, message: str, block: Optional[str] = None):
        super().__init__(message)
        self.block = block


class ConvergenceError(EvclusError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, violation: float):
        super().__init__(f"{message} (final KKT violation {violation:.3e})")
        self.violation = violation


class DataFormatError(EvclusError):
    """An input file could not be parsed."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class BundleError(EvclusError):
    """A model bundle is unreadable, from another version or fails its checksum."""
    pass
