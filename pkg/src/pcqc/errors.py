"""Exception hierarchy.

Three families map onto CLI exit codes: input/format problems (2),
numerical failures (3) and violated preconditions (4).
"""


class PcqcError(Exception):
    exit_code = 1


class InputError(PcqcError, ValueError):
    exit_code = 2


class NumericalError(PcqcError, ArithmeticError):
    exit_code = 3


class PreconditionError(PcqcError, ValueError):
    exit_code = 4


class InvalidCloudError(InputError):
    pass


class DegenerateCloudError(InputError):
    pass


class InterfaceError(InputError):
    pass


class CatalogError(InputError):
    pass


class FormatError(InputError):
    pass


class SpecError(InputError):
    pass


class SingularFitError(NumericalError):
    def __init__(self, message, point_index=None, point=None):
        super().__init__(message)
        self.point_index = point_index
        self.point = point


class SolverError(NumericalError):
    pass


class DegenerateJacobianError(NumericalError):
    pass


class DegenerateCompositionError(NumericalError):
    pass


class DegenerateNeighborhoodError(NumericalError):
    pass


class FrameError(NumericalError):
    pass


class FactorizationError(NumericalError):
    pass


class BoundaryDetectionError(NumericalError):
    pass


class NotQuasiConformalError(PreconditionError):
    pass


class EmptyNeighborhoodError(PreconditionError):
    pass


class DomainError(PreconditionError):
    pass


class ParameterError(PreconditionError):
    pass
