"""Exception hierarchy shared by all modules."""


class BridgeError(Exception):
    """Base class for every error raised by this package."""


# someip codec

class CodecError(BridgeError):
    pass


class InvalidHeader(CodecError):
    pass


class Truncated(CodecError):
    pass


class BadProtocolVersion(CodecError):
    pass


# service discovery

class SdError(BridgeError):
    pass


class MalformedEntry(SdError):
    pass


class AlreadyOffered(SdError):
    pass


class NotDiscovered(SdError):
    pass


class WrongRole(SdError):
    pass


# topic bus

class BusError(BridgeError):
    pass


class TypeMismatch(BusError):
    pass


class BusClosed(BusError):
    pass


# schema

class SchemaError(BridgeError):
    pass


class ParseError(SchemaError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnknownType(SchemaError):
    def __init__(self, type_name, line=None):
        self.type_name = type_name
        self.line = line
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown type {type_name!r}{suffix}")


class ShapeMismatch(SchemaError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


class PayloadTruncated(SchemaError, Truncated):
    """Payload ended before the schema was satisfied."""


# bridge / config

class ConfigError(BridgeError):
    pass


class IdMismatch(ConfigError):
    def __init__(self, field, value_a, value_b):
        self.field = field
        self.value_a = value_a
        self.value_b = value_b
        super().__init__(f"{field} differs between files: {value_a!r} != {value_b!r}")


class MissingField(ConfigError):
    def __init__(self, field, where=""):
        self.field = field
        self.where = where
        super().__init__(f"missing field {field!r}" + (f" in {where}" if where else ""))


class InvalidId(ConfigError):
    def __init__(self, field, value):
        self.field = field
        self.value = value
        super().__init__(f"{field} out of range: {value!r}")


class PortInUse(ConfigError):
    pass


# bench

class BenchError(BridgeError):
    pass


class InsufficientSamples(BenchError):
    pass


class CorruptTraceFile(BenchError):
    pass


class DiscoveryTimeout(BridgeError):
    pass
