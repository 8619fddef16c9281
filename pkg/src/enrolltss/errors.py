"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`TssError`.
The CLI maps the three families (config, data, numeric) onto exit codes.
"""


class TssError(Exception):
    """Base class for toolkit errors."""


class ConfigError(TssError, ValueError):
    """Invalid configuration, model/config mismatch or schema violation."""


class DataError(TssError, ValueError):
    """Bad or missing input data (audio, manifests, corpora)."""


class NumericError(TssError, ArithmeticError):
    """Non-finite values or numerically degenerate operations."""


class ShapeError(ConfigError):
    """Operand shapes do not conform for a primitive."""


class ContractError(TssError, RuntimeError):
    """An operation was called outside its contract."""


class StateError(ContractError):
    """Object is not in a state that allows the call (e.g. BN without statistics)."""


class InputError(DataError):
    """Signal or sequence too short, empty, ragged or otherwise unusable."""


class DegenerateNormError(NumericError):
    """A zero vector cannot be L2-normalized or cosine-scored."""


class MetricError(NumericError):
    """A metric is undefined for the given inputs."""


class CorruptionError(NumericError):
    """Enrollment corruption cannot reach the requested SNR."""


class TrainingError(NumericError):
    """Training produced a non-finite loss."""


class OracleError(ContractError):
    """The finite-difference oracle was given a non-deterministic function."""


class GenerationError(DataError):
    """Trial generation constraints cannot be satisfied."""
