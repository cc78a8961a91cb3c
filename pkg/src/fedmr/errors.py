"""Exception hierarchy shared by every module of the simulator."""


class FedMRError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI reports."""

    category = "error"


class DimensionError(FedMRError, ValueError):
    category = "dimension"


class ContractError(FedMRError, ValueError):
    category = "contract"


class DomainError(FedMRError, ValueError):
    category = "domain"


class ProtocolError(FedMRError, RuntimeError):
    category = "protocol"


class PartitionError(FedMRError, ValueError):
    category = "partition"


class DataFormatError(FedMRError, ValueError):
    """Malformed or empty dataset file. ``line`` is 1-based when known."""

    category = "data-format"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(FedMRError, ValueError):
    category = "config"

    def __init__(self, message: str, key: str | None = None):
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class ConvergenceError(FedMRError, RuntimeError):
    category = "convergence"
