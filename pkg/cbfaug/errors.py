'''
Exceptions raised by the design, simulation and analysis code
'''


class CbfError(Exception):
    pass


class ConfigError(CbfError):
    def __init__(self, field, message):
        super(ConfigError, self).__init__('{}: {}'.format(field, message))
        self.field = field


class DimensionMismatch(CbfError):
    pass


class DesignError(CbfError):
    pass


class NoRelativeDegree(DesignError):
    def __init__(self, channel, message=None):
        super(NoRelativeDegree, self).__init__(
            message or 'channel {} has no relative degree <= n'.format(channel))
        self.channel = channel


class SingularHu(DesignError):
    def __init__(self, cond, message=None):
        super(SingularHu, self).__init__(
            message or 'control sensitivity matrix is singular (cond = {:.3e})'.format(cond))
        self.cond = cond


class SingularKI(DesignError):
    pass


class SingularServoMatrix(DesignError):
    pass


class NotControllable(DesignError):
    pass


class NonStabilizable(DesignError):
    pass


class RiccatiNoConvergence(DesignError):
    pass


class BlockMismatch(DesignError):
    '''Closed-form blocks disagree with the generic construction.

    This is an implementation bug, callers must not swallow it.
    '''

    def __init__(self, name, error):
        super(BlockMismatch, self).__init__(
            '{} closed form differs from generic construction by {:.3e}'.format(name, error))
        self.name = name
        self.error = error


class EigenSolverError(CbfError):
    pass


class ResolventSingular(CbfError):
    def __init__(self, omega):
        super(ResolventSingular, self).__init__(
            'resolvent (jwI - A) is singular at omega = {:.6g} rad/s'.format(omega))
        self.omega = omega


class NonFiniteState(CbfError):
    def __init__(self, step):
        super(NonFiniteState, self).__init__(
            'state became non-finite after step {}'.format(step))
        self.step = step


class EnumerationCapExceeded(CbfError):
    pass


class InfeasibleChannel(UserWarning):
    '''Both modified bounds of a channel are violated at once.'''
