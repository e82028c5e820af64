"""Exception hierarchy shared by all modules."""


class CigcnError(Exception):
    pass


class MalformedLine(CigcnError):
    def __init__(self, line_no: int, line: str = ""):
        super().__init__(f"malformed interaction at line {line_no}: {line!r}")
        self.line_no = line_no


class EmptyLog(CigcnError):
    pass


class InvalidStageCount(CigcnError):
    pass


class InvalidBoundaries(CigcnError):
    pass


class IndexOutOfRange(CigcnError):
    pass


class StageMismatch(CigcnError):
    pass


class NonContiguousStages(CigcnError):
    pass


class DimensionMismatch(CigcnError):
    pass


class DegenerateDegree(CigcnError):
    pass


class ExhaustedUniverse(CigcnError):
    pass


class InactiveBatchNode(CigcnError):
    pass


class ShapeMismatch(CigcnError):
    pass


class EmptyStage(CigcnError):
    pass


class EmptyTruth(CigcnError):
    pass


class UnknownUser(CigcnError):
    pass


class NoEvaluableUsers(CigcnError):
    pass


class InvalidConfig(CigcnError):
    pass


class ConfigError(CigcnError):
    pass


class CheckpointError(CigcnError):
    pass
