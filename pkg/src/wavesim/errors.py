"""Exception types raised across the package."""


class WavesimError(Exception):
    """Base class for all package errors."""


class RowSumError(WavesimError, ValueError):
    def __init__(self, row, total):
        self.row = int(row)
        self.sum = float(total)
        super().__init__(f"row {self.row} sums to {self.sum!r}, expected 1")


class NegativeEntry(WavesimError, ValueError):
    pass


class NonConvergence(WavesimError, RuntimeError):
    def __init__(self, iterations, residual=float("nan")):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(
            f"no convergence after {self.iterations} iterations "
            f"(residual {self.residual:.3e})"
        )


class DegenerateVariance(WavesimError, ValueError):
    pass


class EmptyRow(WavesimError, ValueError):
    pass


class NoVacancy(WavesimError, ValueError):
    pass


class NumericalError(WavesimError, ArithmeticError):
    pass


class ZeroLikelihood(WavesimError, ValueError):
    pass


class DimCap(WavesimError, ValueError):
    pass


class ConfigError(WavesimError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class SchemaError(WavesimError, ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing columns: " + ", ".join(self.missing))


class IoError(WavesimError, OSError):
    pass
