"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class TDProbeError(Exception):
    exit_code = 1


class ConfigError(TDProbeError):
    """Bad input files, flags or parameters."""

    exit_code = 1


class NetworkError(TDProbeError):
    """Sockets could not be opened, connected, or went idle."""

    exit_code = 2


class ProtocolError(TDProbeError):
    """The peer answered, but not with what the protocol requires."""

    exit_code = 3


class MalformedTrace(ConfigError):
    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class IoFailure(ConfigError):
    pass


class HostnameTooLong(ConfigError, ValueError):
    pass


class SideChannelRefused(ProtocolError):
    pass


class UnknownService(SideChannelRefused):
    pass


class DuplicateActiveReplay(SideChannelRefused):
    pass


class DataConnectFailed(NetworkError):
    pass


class UpstreamConnectFailed(NetworkError):
    pass


class SeriesTooShort(ConfigError):
    pass


class InsufficientRuns(ConfigError):
    def __init__(self, message, verdict=None):
        self.verdict = verdict
        super().__init__(message)


class InvalidScenario(ConfigError):
    pass


class InvalidFlags(ConfigError):
    pass
