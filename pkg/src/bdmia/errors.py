"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or unknown experiment-configuration entry; message carries the key path."""


class TrainingFailure(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class QueryFailure(RuntimeError):
    """Remote oracle could not be queried after retrying."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class InvalidBracket(ValueError):
    """Bisection called without a valid adversarial / non-adversarial bracket."""


class InitFailure(RuntimeError):
    """Random initialization failed to find an adversarial point."""


class InvalidInit(ValueError):
    """A supplied initialization point is not classified as its target class."""

    def __init__(self, message: str, target_class: int):
        super().__init__(message)
        self.target_class = target_class


class InsufficientData(ValueError):
    """Not enough samples to build the requested evaluation set."""


class InsufficientAux(InsufficientData):
    """Auxiliary dataset lacks a correctly classified sample for some class."""

    def __init__(self, message: str, missing_classes: list[int]):
        super().__init__(message)
        self.missing_classes = missing_classes


class InsufficientCorrect(InsufficientData):
    """Too few correctly classified samples on one side of an evaluation set."""

    def __init__(self, message: str, side: str):
        super().__init__(message)
        self.side = side
