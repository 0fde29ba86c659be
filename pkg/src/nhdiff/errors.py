"""Exception types raised by nhdiff."""


class NHDiffError(Exception):
    """Base class for all library errors."""


class DegenerateInput(NHDiffError):
    pass


class NotSPD(NHDiffError):
    pass


class DimensionMismatch(NHDiffError):
    pass


class RankDrop(NHDiffError):
    pass


class NotInDistribution(NHDiffError):
    pass


class NotInvariant(NHDiffError):
    pass


class GridTooCoarse(NHDiffError):
    pass


class SingularShape(NHDiffError):
    pass


class NonFinite(NHDiffError):
    def __init__(self, t, msg=None):
        self.t = t
        super().__init__(msg or f"state left double range at t={t}")


class ConfigError(NHDiffError):
    pass
