"""Exception types shared across the package."""


class ShapeGraspError(Exception):
    """Base class for all package-specific errors."""


class EmptyCloud(ShapeGraspError):
    """A point cloud was empty where points are required."""


class NonFinite(ShapeGraspError):
    """An input contained NaN or infinite values."""


class DimMismatch(ShapeGraspError):
    """Two grids (or grid-like arrays) do not share dims/frame."""


class EmptyList(ShapeGraspError):
    """An aggregate operation received no inputs."""


class ShapeMismatch(ShapeGraspError):
    """Tensor shapes do not match the network specification."""


class EmptyDataset(ShapeGraspError):
    """Training requires at least one example."""


class EmptyLevelSet(ShapeGraspError):
    """No grid cell straddles the requested iso level."""


class NoVisibleSurface(ShapeGraspError):
    """A depth render produced no surface hits."""


class NoContacts(ShapeGraspError):
    """A wrench set needs at least one contact."""


class DegenerateMesh(ShapeGraspError):
    """Grasp candidate generation found no usable candidate."""


class EmptyTable(ShapeGraspError):
    """A grasp score table has no rows or no samples."""


class TooFewPairs(ShapeGraspError):
    """The signed-rank test needs at least five non-zero differences."""
