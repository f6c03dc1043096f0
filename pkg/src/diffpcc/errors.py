"""Exception hierarchy shared by every stage of the codec."""


class CodecError(Exception):
    """Base class for all errors raised by diffpcc."""


class ParseError(CodecError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCloudError(CodecError, ValueError):
    pass


class DegenerateInputError(CodecError, ValueError):
    pass


class ConfigurationError(CodecError, ValueError):
    pass


class ContractError(CodecError, RuntimeError):
    pass


class DivergenceError(CodecError, FloatingPointError):
    def __init__(self, message, term=None):
        self.term = term
        super().__init__(message)


class CorruptStreamError(CodecError, ValueError):
    pass


class WrongModelError(CodecError, ValueError):
    pass
