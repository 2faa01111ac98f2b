class HybridError(Exception):
    """Base class for engine errors."""

    exit_code = 1


class ConfigError(HybridError):
    exit_code = 2


class DataError(HybridError):
    exit_code = 3


class ParseError(DataError):
    pass


class GeometryError(DataError):
    pass


class ContractError(HybridError, ValueError):
    exit_code = 4


class TriangulationError(ContractError):
    pass


class ProjectionError(ContractError):
    pass
