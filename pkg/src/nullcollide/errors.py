"""Exception types shared across the package."""


class NullcollideError(Exception):
    """Base class for all errors raised by this package."""


class SvdConvergenceError(NullcollideError):
    """SVD iteration failed to converge for a matrix."""


class EmptyKernelError(NullcollideError):
    """A null-space basis was requested but the kernel is trivial."""


class ContainerError(NullcollideError):
    """Base class for weight-container format errors."""


class MalformedHeaderError(ContainerError):
    """Container header is missing, unparsable, or inconsistent."""


class TruncatedPayloadError(ContainerError):
    """Declared tensor offsets extend past the end of the file."""


class DuplicateNameError(ContainerError):
    """Two tensors in a container share the same name."""


class UnsupportedDtypeError(ContainerError):
    """Container declares a dtype outside {F32, F64}."""


class GraphSchemaError(NullcollideError):
    """Model-graph JSON violates the schema."""


class ShapeError(NullcollideError):
    """Tensor shapes are inconsistent (names the offending layer)."""


class UnsupportedLayerError(NullcollideError):
    """Operation does not support this layer kind."""


class OverlappingConvError(NullcollideError):
    """Tiled patch perturbations require stride == kernel size."""


class OperatorCapError(NullcollideError):
    """Materialized convolution operator exceeds the size cap."""


class NoTrainableLayersError(NullcollideError):
    """Model contains no dense/conv2d layers to analyze."""


class NonFiniteActivationError(NullcollideError):
    """A forward pass produced NaN or infinity (names the layer)."""


class NoNegativeElementsError(NullcollideError):
    """ReLU collision demo needs at least one negative coordinate."""


class DegenerateWindowError(NullcollideError):
    """Pooling collision demo needs window size > 1."""
