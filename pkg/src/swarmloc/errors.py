"""Exception hierarchy shared by all swarmloc modules."""


class SwarmLocError(Exception):
    """Base class for every error raised by swarmloc."""


# sim
class GenerationFailure(SwarmLocError):
    pass


class InsufficientBracketing(SwarmLocError):
    pass


# trilat
class MissingDistance(SwarmLocError):
    pass


class NotRealizable(SwarmLocError):
    pass


class NoConsistentPair(SwarmLocError):
    pass


# optim
class NoSolutionFound(SwarmLocError):
    pass


class BudgetExceeded(SwarmLocError):
    pass


class NoClosePair(SwarmLocError):
    pass


# extend
class NotEnoughAnchors(SwarmLocError):
    pass


class DegenerateAnchors(SwarmLocError):
    pass


class FrameMismatch(SwarmLocError):
    pass


# harness
class MismatchedRobots(SwarmLocError):
    pass
