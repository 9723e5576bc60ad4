"""Exception hierarchy shared by every layer of the stack."""


class ValetError(Exception):
    """Base class for all errors raised by this package."""


# zoned device

class DeviceError(ValetError):
    pass


class InvalidConfig(DeviceError, ValueError):
    pass


class UnknownZone(DeviceError, IndexError):
    pass


class ZoneFull(DeviceError):
    pass


class OpenZoneLimitExceeded(DeviceError):
    pass


class UnalignedPayload(DeviceError, ValueError):
    pass


class ReadBeyondWritePointer(DeviceError):
    pass


class NotOpen(DeviceError):
    pass


class OutOfRange(ValetError, IndexError):
    pass


# placement engine

class ParseError(ValetError, ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MissingDefault(ValetError, ValueError):
    pass


class EmptyBatch(ValetError, ValueError):
    pass


class Uninitialized(ValetError):
    pass


# mapper

class NotFound(ValetError, FileNotFoundError):
    pass


class BufferPoolExhausted(ValetError):
    pass


class NotOpenForWrite(ValetError):
    pass


class NonAppendWrite(ValetError):
    """In-place update on a log-structured file; route it to the passthrough store."""


class UnknownUuid(ValetError, KeyError):
    pass


class TruncateUp(ValetError, ValueError):
    pass


class NoFreeZones(ValetError):
    pass


class GcStall(ValetError):
    pass


class CorruptMetadata(ValetError):
    pass


class DeviceMismatch(ValetError):
    pass


class NoSpace(ValetError):
    """Conventional region has no free blocks left."""


# facade

class BadFd(ValetError, OSError):
    pass


class NotSupported(ValetError, NotImplementedError):
    pass


# workload

class InvalidParams(ValetError, ValueError):
    pass


class VerificationFailure(ValetError, AssertionError):
    pass
