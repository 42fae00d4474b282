"""Exception hierarchy shared by the package."""


class QmfeError(Exception):
    """Base class for all package errors."""


class ValidationError(QmfeError, ValueError):
    """An input object violates a structural invariant (PSD, trace, completeness...)."""


class SupportError(QmfeError, ValueError):
    """A Pauli index or (element, Pauli) pair lies outside the support of the ideal PVM."""


class NumericalError(QmfeError, ArithmeticError):
    """A computed quantity left its admissible range beyond tolerance."""


class UnsupportedOrderError(QmfeError, ValueError):
    """Rényi order alpha = 1 was requested."""
