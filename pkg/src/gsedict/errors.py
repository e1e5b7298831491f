class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class CodecError(ValueError):
    pass


class DistortionError(ValueError):
    pass
