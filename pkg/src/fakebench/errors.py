"""Exception hierarchy shared across the toolkit."""


class FakebenchError(Exception):
    """Base class for all toolkit errors."""


# --- landmarks ---

class MalformedRecord(FakebenchError):
    """A landmark file record has the wrong field count or non-numeric data."""


class EmptyFile(FakebenchError):
    pass


class NoFaceFound(FakebenchError):
    """A landmark backend returned no detection for the given image."""


class BackendUnavailable(FakebenchError):
    pass


# --- region segmentation ---

class DegenerateGeometry(FakebenchError):
    """Polygon area below one pixel, or ellipse fit singular."""


class CanvasMismatch(FakebenchError):
    pass


# --- dataset protocol ---

class DuplicateVideoId(FakebenchError):
    pass


class MissingField(FakebenchError):
    pass


class EmptyManifest(FakebenchError):
    pass


class TooFewIdentities(FakebenchError):
    pass


class OverlappingLists(FakebenchError):
    pass


class UnassignedVideo(FakebenchError):
    pass


class UndecodableSource(FakebenchError):
    pass


# --- detectors ---

class IncompatibleWeights(FakebenchError):
    pass


class EmptyDataset(FakebenchError):
    pass


class NonFiniteLoss(FakebenchError):
    """Training aborted because the loss became NaN/inf."""


class ModeError(FakebenchError):
    """Operation requires the model to be in a different train/eval mode."""


class ShapeError(FakebenchError):
    pass


class ModelExists(FakebenchError):
    """A model is already registered under this (database, region, architecture) key."""


# --- metrics ---

class SingleClass(FakebenchError):
    """EER/AUC need at least one real and one fake score."""


class MixedLabelsWithinVideo(FakebenchError):
    pass


class InconsistentRegions(FakebenchError):
    pass


# --- explainability ---

class NoConvLayer(FakebenchError):
    """The model does not designate a convolutional layer for Grad-CAM."""


# --- cli / orchestration ---

class MissingPrerequisite(FakebenchError):
    """A pipeline stage output required by this command does not exist."""


class ConfigError(FakebenchError):
    pass
