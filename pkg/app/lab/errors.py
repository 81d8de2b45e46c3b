from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for every failure raised by the lab"""

    def __init__(self, message: str, rule: Optional[str] = None, **context: Any):
        self.rule = rule
        self.context: Dict[str, Any] = context
        if rule:
            message = f"{message} [rule: {rule}]"
        super().__init__(message)


class SingularMetric(LabError):
    pass


class OutOfChart(LabError):
    pass


class DegenerateDimension(LabError):
    pass


class UnsupportedModel(LabError):
    pass


class ShapeMismatch(LabError):
    pass


class NonFiniteField(LabError):
    pass


class UnknownCase(LabError):
    pass


class BlowUp(LabError):
    pass


class StepCollapse(LabError):
    pass


class NonPositiveInput(LabError):
    pass


class NonPositiveV(NonPositiveInput):
    pass


class ExponentOutOfRange(LabError):
    pass


class EmptyCylinder(LabError):
    pass


class HypothesisViolated(LabError):
    """A numerically checked hypothesis failed; `context` names the bullet and the sample"""


class BadWindow(LabError):
    pass


class StiffBlowup(LabError):
    pass


class InsufficientLadder(LabError):
    pass


class ConfigError(LabError):
    pass


class MissingArtifact(LabError):
    pass
