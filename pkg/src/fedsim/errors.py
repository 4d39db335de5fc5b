"""Exception types raised at module boundaries."""


class FedSimError(Exception):
    """Base class for all simulator errors."""


class DimensionError(FedSimError, ValueError):
    """Vector or box shapes do not match what the caller promised."""


class NumericError(FedSimError, ValueError):
    """A NaN or infinite value crossed a module boundary."""


class ProtocolError(FedSimError, RuntimeError):
    """A federated-protocol precondition was violated (empty round, duplicate client, ...)."""


class ClientError(ProtocolError):
    """Local training failed on one client; aborts the round."""

    def __init__(self, client_id: int, cause: BaseException):
        self.client_id = client_id
        self.cause = cause
        super().__init__(f"client {client_id} failed during local training: {cause!r}")


class ConfigError(FedSimError, ValueError):
    """Invalid experiment or dataset configuration."""
