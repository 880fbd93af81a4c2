"""Exception types shared across the suite."""


class GridMeterError(Exception):
    pass


class ConfigError(GridMeterError, ValueError):
    pass


class TableError(GridMeterError, ValueError):
    pass


class ResourceError(GridMeterError):
    pass


class TransportError(GridMeterError, OSError):
    pass


class SamplingError(GridMeterError):
    """The process table could not be read for this cycle."""


class OrderingError(GridMeterError, ValueError):
    pass


class DecodeError(GridMeterError, ValueError):
    pass


class StaleError(GridMeterError, ValueError):
    pass


class ExportError(GridMeterError):
    def __init__(self, message, last_durable_t=None):
        super().__init__(message)
        self.last_durable_t = last_durable_t


class AlignmentError(GridMeterError, ValueError):
    pass


class EmptyInputError(GridMeterError, ValueError):
    pass
