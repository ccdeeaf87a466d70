"""Exception hierarchy shared by every module.

Input errors cover malformed files, bad flags and broken schemas; constraint
errors cover valid inputs that cannot be honoured under the configured
resources (memory budgets, raster size limits). The command-line front end
maps the two families to distinct exit codes.
"""


class PestKitError(Exception):
    """Base class for all toolkit errors."""


class InputError(PestKitError):
    """The caller supplied something malformed or out of range."""


class ConstraintError(PestKitError):
    """Valid input that violates a resource or capacity limit."""


# ─── images ────────────────────────────────────────────────────────────────
class MalformedHeader(InputError):
    pass


class MaxvalUnsupported(InputError):
    pass


class TruncatedData(InputError):
    pass


class InvalidDimensions(InputError):
    pass


# ─── integral images and rectangles ────────────────────────────────────────
class ImageTooLarge(ConstraintError):
    pass


class RectOutOfBounds(InputError):
    pass


# ─── cascade files ─────────────────────────────────────────────────────────
class CascadeSchemaError(InputError):
    pass


class MissingField(CascadeSchemaError):
    pass


class RectOutOfWindow(CascadeSchemaError):
    pass


class EmptyStage(CascadeSchemaError):
    pass


class EmptyCascade(CascadeSchemaError):
    pass


class UnsupportedVersion(CascadeSchemaError):
    pass


# ─── detection and training ────────────────────────────────────────────────
class BudgetTooSmall(ConstraintError):
    pass


class WindowLargerThanImage(InputError):
    pass


class InsufficientSamples(InputError):
    pass


# ─── operator graphs ───────────────────────────────────────────────────────
class GraphError(InputError):
    pass


class ShapeMismatch(GraphError):
    pass


class GraphCycle(GraphError):
    pass


class UnknownOpKind(GraphError):
    pass


# ─── platforms and scheduling ──────────────────────────────────────────────
class UnknownPlatform(InputError):
    pass


class UnknownTier(InputError):
    pass


class PlatformInvalid(InputError):
    pass


class CapacityExceeded(ConstraintError):
    pass


# ─── power model ───────────────────────────────────────────────────────────
class UnsortedTrace(InputError):
    pass


class ScenarioError(InputError):
    pass
