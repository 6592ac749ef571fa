"""Exception hierarchy shared by all vcube modules."""

from __future__ import annotations


class VcubeError(Exception):
    """Base class for every error raised by vcube."""


# raster level
class RasterError(VcubeError):
    pass


class NoOverlap(RasterError):
    pass


class MalformedFile(RasterError):
    pass


class GridMismatch(RasterError):
    """Rasters that must share a grid (shape, transform, CRS label) do not."""


# catalog
class CatalogError(VcubeError):
    pass


class DuplicateScene(CatalogError):
    pass


class MissingBand(CatalogError):
    pass


class DuplicateProduct(CatalogError):
    pass


class UnknownProduct(CatalogError):
    pass


class ValidationFailed(CatalogError):
    """Wraps a :class:`SpecError` raised while registering a product."""

    def __init__(self, cause: "SpecError"):
        super().__init__(str(cause))
        self.cause = cause


# product declarations
class SpecError(VcubeError):
    pass


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownOp(SpecError):
    pass


class UnknownParam(SpecError):
    pass


class BadParam(SpecError):
    """Parameter has the wrong type or an out-of-range value."""


class ArityMismatch(SpecError):
    pass


class DanglingRef(SpecError):
    pass


class CycleDetected(SpecError):
    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle + self.cycle[:1]))


class TemporalMismatch(SpecError):
    """Per-scene and time-aggregated values mixed in one node or output set."""


# kernels
class OpError(VcubeError):
    pass


class EmptyStack(OpError):
    pass


class BadWindow(OpError):
    pass


class AllNodata(OpError):
    pass


# execution
class ExecutionError(VcubeError):
    pass


class NoScenes(ExecutionError):
    pass


class MissingSynthesisParams(ExecutionError):
    pass


class FetchFailed(ExecutionError):
    pass


class CacheCorrupt(ExecutionError):
    pass


class BadTemplate(VcubeError):
    pass
