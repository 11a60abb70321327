"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to stable process exit statuses (1 usage, 2 I/O, 3 config, 4 runtime).
"""


class EdgeTrackError(Exception):
    exit_code = 4


class UsageError(EdgeTrackError):
    exit_code = 1


class UnknownFlag(UsageError):
    pass


class MissingSubcommand(UsageError):
    pass


class ConflictingFlags(UsageError):
    pass


class ConfigError(EdgeTrackError):
    exit_code = 3


class InvalidConfig(ConfigError):
    pass


class IoFailure(EdgeTrackError):
    exit_code = 2


class NoFramesFound(IoFailure):
    pass


class MalformedImage(IoFailure):
    def __init__(self, path, reason=""):
        self.path = path
        msg = f"malformed image {path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class UnsupportedChroma(IoFailure):
    pass


class TruncatedStream(IoFailure):
    pass


class SourceFailure(IoFailure):
    pass


class SinkFailure(IoFailure):
    pass


class ModelLoadFailure(IoFailure):
    pass


class OutOfFrame(EdgeTrackError):
    pass


class DimsMismatch(EdgeTrackError):
    pass


class BoxTooSmall(EdgeTrackError):
    pass


class DegenerateSearchRegion(EdgeTrackError):
    pass
