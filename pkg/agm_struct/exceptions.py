class AgmError(Exception):
    """
    Base class for every error raised by agm_struct.
    """


class TreeStructureError(AgmError, ValueError):
    """
    Raised when an edge list does not describe a rooted tree (cycle, disconnected nodes,
    duplicate edges or node indices out of range).
    """


class LossSpecError(AgmError, ValueError):
    """
    Raised for an unknown loss kind, a non-positive node weight or an invalid custom loss table.
    """


class FeatureShapeError(AgmError, ValueError):
    """
    Raised when feature arrays, parameters or labels disagree with the feature template.
    """


class NonFiniteInputError(AgmError, ValueError):
    """
    Raised when a solver receives NaN or infinite inputs.
    """


class TransportError(AgmError, ValueError):
    """
    Raised when the two marginals handed to the transport solver carry different total mass.
    """


class OracleSizeError(AgmError, ValueError):
    """
    Raised when an exhaustive oracle is asked to enumerate more joint assignments than it allows.
    """


class ConfigError(AgmError, ValueError):
    """
    Raised for invalid experiment or solver configuration.
    """


class DatasetError(AgmError, ValueError):
    """
    Raised when a dataset or model file cannot be parsed or fails validation.

    Attributes:
    line (int or None): 1-based line number in the source file, when known.
    instance (int or None): 0-based index of the offending instance, when known.
    """

    def __init__(self, message, *, line=None, instance=None):
        self.line = line
        self.instance = instance
        where = []
        if line is not None:
            where.append(f"line {line}")
        if instance is not None:
            where.append(f"instance {instance}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConvergenceError(AgmError):
    """
    Raised when training has to give up because too many inner solves failed to converge.

    Attributes:
    diagnostics (dict): Counters and last known values collected before aborting.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class SolverError(AgmError):
    """
    Raised when a linear programming backend does not return an optimal solution.
    """
