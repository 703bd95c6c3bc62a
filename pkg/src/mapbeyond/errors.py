"""Exception types shared across the package."""


class MapBeyondError(Exception):
    """Base class for all package errors."""


class OutOfBounds(MapBeyondError):
    """World coordinate falls outside the grid."""


class LengthMismatch(MapBeyondError):
    """Byte buffer length does not match the declared dimensions."""


class NonPositiveDt(MapBeyondError):
    """Integration time step must be > 0."""


class PoseInvalid(MapBeyondError):
    """Robot pose is outside the map or inside an obstacle."""


class GridMismatch(MapBeyondError):
    """Grids disagree on resolution or origin."""


class Stuck(MapBeyondError):
    """Path follower made no progress for too many steps."""


class DegenerateBlueprint(MapBeyondError):
    """Corridor blueprint cannot produce a valid map."""


class IoError(MapBeyondError):
    """Dataset tree could not be written or read."""


class ManifestCorrupt(MapBeyondError):
    """Dataset tree is inconsistent with its manifest."""


class UnknownEpisode(MapBeyondError):
    """Episode id not present in the manifest."""


class MissingExpansion(MapBeyondError):
    """Requested expansion factor has no targets in the dataset."""


class NonFiniteLoss(MapBeyondError):
    """Training loss became NaN or infinite."""


class ExpansionMismatch(MapBeyondError):
    """Checkpoint was trained for a different expansion factor."""


class ShapeMismatch(MapBeyondError):
    """Tensor or image shapes disagree."""


class TooSmall(MapBeyondError):
    """Image smaller than the metric window."""
