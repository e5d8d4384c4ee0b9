"""Exception types shared across the package."""


class UrbanCausalError(Exception):
    """Base class for all package-specific errors."""


class MissingColumn(UrbanCausalError):
    def __init__(self, name):
        super().__init__(f"required column not found: {name!r}")
        self.name = name


class NonNumericCell(UrbanCausalError):
    def __init__(self, row, col):
        super().__init__(f"non-numeric cell at row {row}, column {col!r}")
        self.row = row
        self.col = col


class EmptyTable(UrbanCausalError):
    pass


class ZeroVariance(UrbanCausalError):
    def __init__(self, col):
        super().__init__(f"column {col!r} has zero variance")
        self.col = col


class TooFewRows(UrbanCausalError):
    pass


class CyclicGraph(UrbanCausalError):
    pass


class DimensionMismatch(UrbanCausalError):
    pass


class ShapeMismatch(UrbanCausalError):
    pass


class NoAcyclicSample(UrbanCausalError):
    pass


class TooManyFactors(UrbanCausalError):
    pass


class UnknownFactor(UrbanCausalError):
    def __init__(self, name):
        super().__init__(f"unknown factor: {name!r}")
        self.name = name


class NotAnEdge(UrbanCausalError):
    def __init__(self, treatment, outcome):
        super().__init__(f"no edge {treatment!r} -> {outcome!r} in graph")
        self.treatment = treatment
        self.outcome = outcome


class Degenerate(UrbanCausalError):
    pass


class SingleLevel(UrbanCausalError):
    pass


class LengthMismatch(UrbanCausalError):
    pass


class NonFiniteLoss(UrbanCausalError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class InvalidGraphSpec(UrbanCausalError):
    pass


class MissingStageOutput(UrbanCausalError):
    def __init__(self, path):
        super().__init__(f"missing prerequisite stage output: {path}")
        self.path = path


class ConfigError(UrbanCausalError):
    pass
