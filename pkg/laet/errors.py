"""
Error hierarchy shared by every stage of the pipeline.
"""


class LaetError(Exception):
    """Base class for all errors raised by the package"""


class InvalidArgument(LaetError, ValueError):
    pass


class ContractViolation(LaetError, AssertionError):
    pass


class NumericError(LaetError, ArithmeticError):
    pass


class NumericDivergence(NumericError):
    """Training loss became non-finite"""

    def __init__(self, message, epoch, batch=None):
        where = f"epoch {epoch}" if batch is None else f"epoch {epoch}, batch {batch}"
        super().__init__(f"{message} ({where})")
        self.epoch = epoch
        self.batch = batch


class DatasetParseError(InvalidArgument):
    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class CorruptCheckpoint(LaetError):
    pass


class PipelineError(LaetError):
    """Wraps an error raised inside a named pipeline stage"""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
