"""Exception hierarchy.

Every error maps to one of the CLI exit codes: configuration problems exit
with 2, data problems with 3, anything else raised here with 4.
"""


class RetinaError(Exception):
    exit_code = 4


class ConfigError(RetinaError, ValueError):
    exit_code = 2


class DataError(RetinaError, ValueError):
    exit_code = 3


# dataset
class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedRow(DataError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {reason}" if reason else ""))


class DuplicateId(DataError):
    def __init__(self, image_id):
        self.image_id = image_id
        super().__init__(f"duplicate id {image_id!r}")


class EmptyManifest(DataError):
    pass


class EmptyClass(DataError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"class {label} has no records to oversample from")


class MissingImage(DataError):
    def __init__(self, image_id, path):
        self.image_id = image_id
        super().__init__(f"image for id {image_id!r} not found at {path}")


# image ops / augment
class InvalidSigma(ConfigError):
    pass


class InvalidSize(ConfigError):
    pass


class NonSquareInput(DataError):
    pass


class NoContentWarning(UserWarning):
    """Raised as a warning when an image has no pixel above the black threshold."""


# modelkit
class UnsupportedCombination(ConfigError):
    pass


class InvalidTask(ConfigError):
    pass


class InvalidFanIn(ConfigError):
    pass


class InputTooSmall(ConfigError):
    pass


class ShapeMismatch(RetinaError, ValueError):
    pass


# trainer
class NonFiniteLoss(RetinaError, FloatingPointError):
    pass


# metrics
class ScoreOutOfRange(RetinaError, ValueError):
    pass


class EmptyVector(RetinaError, ValueError):
    pass


class LabelOutOfRange(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyMatrix(RetinaError, ValueError):
    pass


class DegenerateLabels(RetinaError, ValueError):
    pass


# cascade
class MissingScore(RetinaError, KeyError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"no score for cascade node {node_id!r}")

    def __str__(self):
        return self.args[0]


class MissingNodeModel(DataError):
    def __init__(self, node_id, path):
        self.node_id = node_id
        super().__init__(f"cascade node {node_id!r}: model not found at {path}")
