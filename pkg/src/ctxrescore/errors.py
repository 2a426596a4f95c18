"""Exception hierarchy shared by every module in the package."""


class RescoreError(Exception):
    """Base class; the CLI turns any of these into a one-line error."""


class ParseError(RescoreError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


class UnknownToken(RescoreError):
    pass


class VocabMismatch(RescoreError):
    pass


class InvalidLattice(RescoreError):
    pass


class CyclicLattice(InvalidLattice):
    pass


class UnreachableState(InvalidLattice):
    pass


class NoFinalState(InvalidLattice):
    pass


class CycleCreated(InvalidLattice):
    pass


class CountMismatch(ParseError):
    pass


class ConfigError(RescoreError):
    pass


class NumericalDivergence(RescoreError):
    pass


class FormatVersionMismatch(ParseError):
    pass


class ShapeMismatch(RescoreError):
    pass


class ExpansionBudgetExceeded(RescoreError):
    pass


class BudgetExceeded(RescoreError):
    pass


class EmptyResult(RescoreError):
    pass


class TagNotFound(RescoreError):
    pass


class MissingIntent(RescoreError):
    pass


class EmptyCorpus(RescoreError):
    pass
