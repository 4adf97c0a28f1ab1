"""Exception hierarchy shared by every module."""


class ImpactError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ImpactError, ValueError):
    pass


class DivisionDomainError(ImpactError, ZeroDivisionError):
    pass


class ConvergenceError(ImpactError, ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class RankError(ImpactError, ValueError):
    pass


class SampleQualityError(ImpactError, ValueError):
    pass


class InsufficientSamplesError(ImpactError, ValueError):
    pass


class DegenerateImportanceError(ImpactError, ValueError):
    pass


class DegenerateCovarianceError(ImpactError, ValueError):
    pass


class NoBenefitError(ImpactError):
    """Factorization would not shrink the layer; the caller keeps it dense."""

    def __init__(self, rank: int, factored_params: int, dense_params: int):
        super().__init__(
            f"rank {rank} gives {factored_params} weight parameters, "
            f"not fewer than dense {dense_params}"
        )
        self.rank = rank
        self.factored_params = factored_params
        self.dense_params = dense_params


class ConfigurationError(ImpactError, ValueError):
    pass


class TrainingDivergenceError(ImpactError, ArithmeticError):
    pass


class SubstitutionError(ImpactError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(ImpactError, ValueError):
    pass


class VersionError(ImpactError, ValueError):
    pass


class DataError(ImpactError, ValueError):
    pass
