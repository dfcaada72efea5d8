"""Exception types shared across the package."""


class PlausisceneError(Exception):
    """Base class for all package errors."""


# geometry
class DegenerateCloud(PlausisceneError):
    """A projected point cloud has rank 0 in some plane; no orientation exists."""


# neural / discriminator
class ShapeMismatch(PlausisceneError):
    """Operand shapes are inconsistent with the declared architecture."""


class MissingCache(PlausisceneError):
    """backward() called without a forward cache."""


class EmptyDataset(PlausisceneError):
    """An operation requires at least one example."""


class SingleClassDataset(PlausisceneError):
    """Training requires both real and fake labels."""


class UntrainedDiscriminator(PlausisceneError):
    """Refinement requires trained (or loaded) weights."""


# synthesis
class PlacementFailure(PlausisceneError):
    """Rejection sampling exhausted its attempt budget."""


class TargetIsFloor(PlausisceneError):
    """The floor element cannot be corrupted."""


# metrics
class NoHumanSegments(PlausisceneError):
    """The scene has no body-segment elements to score."""


class LengthMismatch(PlausisceneError):
    """Scenes and references do not correspond one-to-one."""


# io / cli
class BadConfig(PlausisceneError):
    """A config file is missing, unparsable, or inconsistent."""


class SchemaVersionMismatch(PlausisceneError):
    """A file declares a schema this build does not understand."""


class IOFailure(PlausisceneError):
    """A file could not be read or written."""
