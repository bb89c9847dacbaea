"""Exception hierarchy shared by every module."""


class IcrError(Exception):
    """Base class for all errors raised by this package."""


class ScopeError(IcrError):
    pass


class SupportError(IcrError):
    pass


class AllZeroSlice(IcrError):
    """A conditioning configuration carries no mass."""


class ParseError(IcrError):
    pass


class ValidationError(IcrError):
    pass


class UnknownBlock(IcrError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InstanceTooLarge(IcrError):
    pass


class NoCycle(IcrError):
    pass


class NotConverged(IcrError):
    pass


class NonConvergence(IcrError):
    pass


class NotFullConditional(IcrError):
    pass


class Inconsistent(IcrError):
    """Target marginals disagree on a shared sub-margin."""


class PhaseError(IcrError):
    def __init__(self, phase_id, cause):
        super().__init__(f"phase {phase_id!r} failed: {cause}")
        self.phase_id = phase_id
        self.cause = cause


class ReducibleWarning(UserWarning):
    """Rows of the powered transition matrix disagree at the stopping point."""


class NormalizationWarning(UserWarning):
    pass
