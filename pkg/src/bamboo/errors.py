class BambooError(Exception):
    pass


class ConfigError(BambooError, ValueError):
    pass


class NotFound(BambooError, KeyError):
    pass


class ProtocolMisuse(BambooError, RuntimeError):
    """A lock function was called in a state its contract forbids."""


class AbortTxn(BambooError):
    """Raised inside the transaction lifecycle when the attempt must abort."""

    def __init__(self, cause, msg=""):
        super().__init__(msg or str(cause))
        self.cause = cause


class ScriptError(BambooError):
    def __init__(self, msg, lineno=None):
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)
        self.lineno = lineno


class TemplateError(BambooError, ValueError):
    pass
