"""Exception types shared across the package."""


class PeisError(Exception):
    """Base class for all package errors."""


class ParameterError(PeisError, ValueError):
    """Model parameters outside their admissible domain."""


class ContractError(PeisError, ValueError):
    """A call violated an operation precondition."""


class NumericError(PeisError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class KernelDegeneracyError(PeisError):
    """Importance kernel covariance failed to be positive definite."""

    def __init__(self, t: int, msg: str = ""):
        self.t = t
        super().__init__(msg or f"non-SPD importance kernel at period t={t}")


class SingularDesignError(PeisError):
    """Rank-deficient regression design inside the importance-parameter fit."""

    def __init__(self, t: int, iteration: int, rank: int, ncols: int):
        self.t = t
        self.iteration = iteration
        super().__init__(
            f"singular regression design at period t={t}, iteration {iteration} "
            f"(rank {rank} < {ncols} columns)"
        )


class EstimatorError(PeisError):
    """A likelihood estimator failed at run time."""

    def __init__(self, t: int, msg: str = ""):
        self.t = t
        super().__init__(msg or f"estimator failure at period t={t}")


class DegeneracyError(EstimatorError):
    """All particle weights vanished (or became non-finite)."""


class ProposalMismatchError(PeisError):
    """Importance-sampling proposal assigns no mass to the posterior."""


class DegenerateSampleError(PeisError):
    """Weighted sample too degenerate to fit a proposal density."""


class UndefinedVarianceError(PeisError):
    """Variance-based diagnostic requested for a constant sequence."""


class StudyIntegrityError(PeisError):
    """Estimator failure rate exceeded tolerance inside an experiment cell."""

    def __init__(self, cell: str, failures: int, total: int):
        self.cell = cell
        self.failures = failures
        self.total = total
        super().__init__(
            f"estimator failure rate {failures}/{total} exceeds 1% in cell {cell}"
        )


class CsvFormatError(PeisError, ValueError):
    """Malformed input CSV; carries the offending 1-based line number."""

    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")
