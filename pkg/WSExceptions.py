
class WSException(Exception):
    """Base class for exceptions in this module."""

    exit_code = 1

    def __init__(self, argument, message="Wound Surrogate Exception"):
        self.argument = argument
        self.message = message
        super().__init__(self.message)

    def __str__(self):
        return f'{self.message}: {self.argument}'

class ConfigException(WSException):
    """Exception raised by multiple Config errors.

    Attributes:
        argument -- offending key or value
        message -- explanation of the error
    """

    exit_code = 2

    def __init__(self, argument, message="Config Parameter Exception"):
        super().__init__(argument, message)

class ArgumentException(WSException):
    """Exception raised by multiple Arguments errors.

    Attributes:
        argument -- offending flag or value
        message -- explanation of the error
    """

    exit_code = 2

    def __init__(self, argument, message="Argument is missing"):
        super().__init__(argument, message)

    def __str__(self):
        return f'{self.argument} -> {self.message}'

class GeometryException(WSException):
    """Invalid wound geometry (cuts, sample count, zero reference area)."""

    exit_code = 3

    def __init__(self, argument, message="Invalid geometry"):
        super().__init__(argument, message)

class GridMismatchException(GeometryException):
    """Boundary curves sampled on different parameter grids."""

    def __init__(self, argument, message="Parameter grids do not match"):
        super().__init__(argument, message)

class WeightException(GeometryException):
    """Convex weights that are negative, not three, or do not sum to one."""

    def __init__(self, argument, message="Invalid convex weights"):
        super().__init__(argument, message)

class DegeneracyException(GeometryException):

    def __init__(self, argument, message="Degenerate polygon"):
        super().__init__(argument, message)

class ParameterException(WSException):
    """Exception raised for invalid kinetic parameters or biological states.

    Covers values outside their admissible range, the incompressible
    (singular) material limit and negative densities fed to the kinetics.
    """

    exit_code = 3

    def __init__(self, argument, message="Invalid parameter"):
        super().__init__(argument, message)

class MeshException(WSException):

    exit_code = 3

    def __init__(self, argument, message="Meshing failed"):
        super().__init__(argument, message)

class SolverException(WSException):
    """Linear solver did not converge. `argument` carries the simulation time."""

    exit_code = 3

    def __init__(self, argument, message="Linear solver did not converge"):
        super().__init__(argument, message)

class LimiterException(WSException):
    """A transported field left the non-negative cone after limiting."""

    exit_code = 3

    def __init__(self, argument, message="Negative field after limiting"):
        super().__init__(argument, message)

class SimulationException(WSException):
    """Failure inside a time step or remesh, stamped with the simulation time."""

    exit_code = 3

    def __init__(self, argument, message="Simulation failed"):
        super().__init__(argument, message)

class ShapeException(WSException):

    exit_code = 5

    def __init__(self, argument, message="Shape mismatch"):
        super().__init__(argument, message)

class DomainException(WSException):
    """Query points or extents outside the admissible domain."""

    exit_code = 4

    def __init__(self, argument, message="Outside of the domain"):
        super().__init__(argument, message)

class DataException(WSException):

    exit_code = 4

    def __init__(self, argument, message="Data Exception"):
        super().__init__(argument, message)

class TrainingException(WSException):

    exit_code = 5

    def __init__(self, argument, message="Training failed"):
        super().__init__(argument, message)

class MetricException(WSException):
    """Metric is undefined for the given data (zero variance, no kept entries)."""

    exit_code = 4

    def __init__(self, argument, message="Metric undefined"):
        super().__init__(argument, message)

class AlignmentException(WSException):

    exit_code = 4

    def __init__(self, argument, message="Time grids are not aligned"):
        super().__init__(argument, message)
