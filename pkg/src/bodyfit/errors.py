"""Exception types shared across the toolkit."""


class BodyFitError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(BodyFitError, ValueError):
    """An array argument has the wrong length or shape for the model."""


class ConfigError(BodyFitError, ValueError):
    """A configuration value (spec, schedule, flag) is invalid."""


class ModelValidationError(BodyFitError, ValueError):
    """A body-model invariant is violated; carries the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingLayerError(BodyFitError, ValueError):
    """Requested mesh layer is not present in the model."""


class BehindCameraError(BodyFitError, ValueError):
    """Points have non-positive depth after translation; carries their indices."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"non-positive depth for point indices {self.indices}")


class DegenerateGeometryError(BodyFitError, ValueError):
    """Point configuration is rank-deficient for the requested alignment."""


class UndefinedMetricError(BodyFitError, ValueError):
    """Metric is undefined for the given input (e.g. zero visible joints)."""


class EmptySubsetError(BodyFitError, ValueError):
    """Subset rule produces an empty selection."""


class InsufficientEvidenceError(BodyFitError, ValueError):
    """Not enough observed keypoints to initialize from."""


class IncompatibleModelsError(BodyFitError, ValueError):
    """Source and target models cannot be used together."""


class EvaluationError(BodyFitError, ValueError):
    """An objective evaluated to a non-finite value."""


class SchemaVersionError(BodyFitError, ValueError):
    """File schema version differs from what this build understands."""

    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"unsupported schema version: expected {expected}, found {found}")


class RecordError(BodyFitError, ValueError):
    """A dataset record is malformed; carries sample id and field path."""

    def __init__(self, sample_id, field, message):
        self.sample_id = sample_id
        self.field = field
        super().__init__(f"sample {sample_id!r}, field {field!r}: {message}")
