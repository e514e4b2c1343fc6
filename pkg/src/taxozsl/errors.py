"""Exception types raised across the package.

Every error subclasses :class:`TaxoZslError` and the closest builtin so callers
can catch either.
"""


class TaxoZslError(Exception):
    """Base class for all package errors."""


class EmptyInput(TaxoZslError, ValueError):
    pass


class DuplicateSpecies(TaxoZslError, ValueError):
    pass


class InconsistentParent(TaxoZslError, ValueError):
    pass


class UnknownSpecies(TaxoZslError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InfeasibleSplit(TaxoZslError, ValueError):
    pass


class EmptyDocument(TaxoZslError, ValueError):
    pass


class DimensionMismatch(TaxoZslError, ValueError):
    pass


class UnknownLabel(TaxoZslError, ValueError):
    pass


class ParseError(TaxoZslError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class EmptyNode(TaxoZslError, ValueError):
    pass


class ShapeMismatch(TaxoZslError, ValueError):
    pass


class NonFinite(TaxoZslError, FloatingPointError):
    pass


class WeightConstraintViolated(TaxoZslError, ValueError):
    pass


class EmptyBank(TaxoZslError, ValueError):
    pass


class EmptyQuerySet(TaxoZslError, ValueError):
    pass


class MissingClass(TaxoZslError, ValueError):
    pass


class DegenerateInput(TaxoZslError, ValueError):
    pass


class UnknownClass(TaxoZslError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegenerateCovariance(TaxoZslError, ValueError):
    pass


class ConfigError(TaxoZslError, ValueError):
    pass
