class ValidationError(ValueError):
    """Bad input: malformed config, broken invariant, unknown strategy string."""


class InfeasibleError(RuntimeError):
    """No placement fits: memory exhausted, or a batch cannot be split as asked."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or message
