"""Exception types shared across the benchmark."""


class BenchError(Exception):
    """Base class for all advbench errors."""


class InvalidInput(BenchError):
    pass


class UnsupportedLoss(BenchError):
    pass


class DegenerateLogits(BenchError):
    pass


class UnsupportedNorm(BenchError):
    pass


class InvalidSpec(BenchError):
    pass


class TrainingDiverged(BenchError):
    pass


class UnsupportedFormatVersion(BenchError):
    pass


class MalformedModelFile(BenchError):
    pass


class BudgetExhausted(BenchError):
    """Raised by the query tracker when a sample's budget is spent.

    Recoverable: attacks catch it and return with the best record found
    so far.
    """


class EmptyEnsemble(BenchError):
    pass


class IncompleteCoverage(BenchError):
    pass


class IncompatibleRuns(BenchError):
    pass


class MalformedRecordFile(BenchError):
    pass
