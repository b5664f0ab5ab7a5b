"""Exception taxonomy shared across the package."""


class RstrackError(Exception):
    """Base class for all rstrack errors."""


class DimensionMismatch(RstrackError):
    pass


class RankDeficient(RstrackError):
    pass


class NoConvergence(RstrackError):
    """Iterative routine failed to converge. Carries a diagnostics dict."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class IllConditioned(RstrackError):
    pass


class BadRank(RstrackError):
    pass


class BadGeometry(RstrackError):
    pass


class DegenerateComplement(RstrackError):
    pass


class MissingHistory(RstrackError):
    pass


class Misalignment(RstrackError):
    pass


class ConfigError(RstrackError):
    pass


class FormatError(RstrackError):
    pass
