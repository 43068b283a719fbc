"""Exception hierarchy shared by every module in the package.

All domain failures derive from DepthcompError so callers can catch one
type at the CLI boundary. The ValueError mixins keep the classes usable
with code that only knows the stdlib taxonomy.
"""


class DepthcompError(Exception):
    """Base class for all failures raised by this package."""


class ShapeError(DepthcompError, ValueError):
    """Array arguments have malformed or mutually incompatible dimensions."""


class ParameterError(DepthcompError, ValueError):
    """A scalar or config argument is outside its documented domain."""


class CodecError(DepthcompError, ValueError):
    """A byte or text payload cannot be encoded or decoded faithfully."""


class GeometryError(DepthcompError, ValueError):
    """A geometric operation left its valid domain, e.g. a point at or
    behind the camera plane, or a rotation that is not orthonormal."""


class SupportError(DepthcompError, ValueError):
    """An operation that needs valid support pixels received none, or the
    support it received is degenerate for the requested computation."""


class OptimizationError(DepthcompError, RuntimeError):
    """The optimizer produced a non-finite objective or parameter."""


class EvaluationError(DepthcompError, RuntimeError):
    """A probed or evaluated function returned a non-finite value."""
