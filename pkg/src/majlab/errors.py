class RegimeTooSmall(ValueError):
    """A threshold formula is non-positive for the requested (n, k)."""


class AdversaryError(ValueError):
    pass


class BudgetExceeded(AdversaryError):
    pass


class NegativeSupport(AdversaryError):
    pass


class NonConserving(AdversaryError):
    pass
