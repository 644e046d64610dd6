class InvalidArgument(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class InvariantViolation(AssertionError):
    """A record or state broke an ordering/accounting invariant (a bug, not bad input)."""


class NoBackend(LookupError):
    """No Ready backend is available; the client may retry."""
