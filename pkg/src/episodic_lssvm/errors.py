"""Exception hierarchy shared by all modules."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(EngineError, ValueError):
    pass


class NotPositiveDefinite(EngineError, ArithmeticError):
    pass


class DegenerateInput(EngineError, ValueError):
    pass


class DegenerateSubproblem(EngineError, ValueError):
    """A binary subproblem sees samples of only one sign."""


class LabelOutOfRange(EngineError, ValueError):
    pass


class UnsupportedKernelGradient(EngineError, NotImplementedError):
    pass


class KindMismatch(EngineError, TypeError):
    pass


class StaleCache(EngineError, RuntimeError):
    pass


class EmptyQuery(EngineError, ValueError):
    pass


class NonFiniteLoss(EngineError, ArithmeticError):
    pass


class InsufficientClasses(EngineError, ValueError):
    pass


class InsufficientSamples(EngineError, ValueError):
    pass


# feature bank file errors
class BankFormatError(EngineError, ValueError):
    pass


class BadMagic(BankFormatError):
    pass


class BadHeader(BankFormatError):
    pass


class TruncatedFile(BankFormatError):
    pass


class NonFiniteFeature(BankFormatError):
    pass


class InconsistentDim(BankFormatError):
    pass


# configuration errors
class ConfigError(EngineError, ValueError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key
