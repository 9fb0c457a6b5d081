"""Exception hierarchy shared by all edge_audit modules."""


class EdgeAuditError(Exception):
    """Base class for every error raised by this package."""


class GraphError(EdgeAuditError):
    pass


class NonPositiveOutput(GraphError):
    """A layer would produce a tensor with a dimension smaller than one."""


class ShapeMismatch(EdgeAuditError):
    pass


class MissingQuantParams(EdgeAuditError):
    pass


class AccumulatorOverflow(EdgeAuditError):
    """An integer accumulator left the signed 32-bit range."""


class EmptyCalibration(EdgeAuditError):
    pass


class UnsupportedFormat(EdgeAuditError):
    pass


class CorruptHeader(EdgeAuditError):
    pass


class WrongSampleRate(EdgeAuditError):
    pass


class TooShort(EdgeAuditError):
    pass


class MissingPrediction(EdgeAuditError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"no prediction for {len(self.missing)} segment(s): {shown}{more}")


class DuplicatePrediction(EdgeAuditError):
    pass


class InsufficientData(EdgeAuditError):
    pass


class UnknownGroupKey(EdgeAuditError):
    pass


class DuplicateLabel(EdgeAuditError):
    pass


class RowError(EdgeAuditError):
    """A CSV row was rejected; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MalformedRow(RowError):
    pass


class UnknownClassToken(RowError):
    pass


class ProbabilitySumError(RowError):
    pass


class DuplicateSegment(RowError):
    pass
