"""Exception hierarchy shared by all modules."""


class MHDLError(Exception):
    """Base class for all library errors."""


class OrientationError(MHDLError):
    def __init__(self, node, value):
        super().__init__(f"non-positive Jacobian {value:.3e} at node {node}")
        self.node = node
        self.value = value


class ConditioningError(MHDLError):
    pass


class PreconditionError(MHDLError):
    pass


class UnsupportedOrderError(MHDLError):
    pass


class SolverError(MHDLError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class InstabilityError(MHDLError):
    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class VacuumError(MHDLError):
    pass


class WindowError(MHDLError):
    pass


class IterationDivergenceError(MHDLError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class IntegrityError(MHDLError):
    pass


class UnsupportedVersionError(MHDLError):
    pass


class ConfigError(MHDLError):
    pass
