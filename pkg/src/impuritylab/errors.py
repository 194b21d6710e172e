"""Exception hierarchy. The CLI maps each family onto an exit code."""


class ImpurityLabError(Exception):
    exit_code = 1


class InvalidSpecError(ImpurityLabError, ValueError):
    exit_code = 2


class ConfigError(ImpurityLabError, ValueError):
    """Raised with every validation problem collected, not just the first."""

    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ResourceError(ImpurityLabError, MemoryError):
    exit_code = 3

    def __init__(self, message, required_bytes=None):
        self.required_bytes = required_bytes
        super().__init__(message)


class NumericalContractError(ImpurityLabError, ArithmeticError):
    exit_code = 4


class CorruptedStateError(NumericalContractError):
    def __init__(self, message, trajectory_index=None):
        self.trajectory_index = trajectory_index
        if trajectory_index is not None:
            message = f"trajectory {trajectory_index}: {message}"
        super().__init__(message)


class QuadratureError(NumericalContractError):
    def __init__(self, message, error_bound):
        self.error_bound = error_bound
        super().__init__(f"{message} (achieved error bound {error_bound:.3e})")


class InsufficientDataError(NumericalContractError, ValueError):
    pass


class UnsupportedHamiltonianError(ImpurityLabError, ValueError):
    exit_code = 2


class SectorError(ImpurityLabError, ValueError):
    exit_code = 2
