"""Exception hierarchy shared by every splatgeom module."""


class SplatGeomError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class MalformedHeader(SplatGeomError):
    pass


class TruncatedBody(SplatGeomError):
    pass


class NonFiniteValue(SplatGeomError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateRotation(SplatGeomError):
    pass


class UnreadableImage(SplatGeomError):
    pass


class LabelOutOfRange(SplatGeomError):
    def __init__(self, message, pixel=None):
        super().__init__(message)
        self.pixel = pixel


class BadThresholds(SplatGeomError):
    pass


class DimensionMismatch(SplatGeomError):
    pass


class BadConstants(SplatGeomError):
    pass


class PairingMismatch(SplatGeomError):
    pass


class BadThreshold(SplatGeomError):
    pass


class DegenerateCorpus(SplatGeomError):
    pass


class MissingTarget(SplatGeomError):
    pass


class BadSchedule(SplatGeomError):
    pass


class SingularCovariance(SplatGeomError):
    def __init__(self, message, splat=None):
        super().__init__(message)
        self.splat = splat


class AllZeroOpacity(SplatGeomError):
    pass


class EmptyCloud(SplatGeomError):
    pass
