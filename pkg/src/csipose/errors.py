"""Exception types. Everything user-addressable derives from CsiPoseError so
the CLI can map it to exit code 2; genuine bugs surface as ordinary Python
exceptions and exit 1."""


class CsiPoseError(Exception):
    """Base class for errors caused by bad inputs, configs, or corpora."""


class GraphError(CsiPoseError):
    pass


class CorpusError(CsiPoseError):
    pass


class SplitError(CsiPoseError):
    pass


class ConfigError(CsiPoseError):
    pass


class DivergenceError(CsiPoseError):
    """Training loss became non-finite."""
