"""Exception hierarchy shared by every ransec module."""


class RansecError(Exception):
    """Base class for all errors raised by ransec."""


class EncodingError(RansecError, ValueError):
    """A value cannot be represented in the target wire format."""


class MalformedPacket(RansecError, ValueError):
    """Bytes on the wire do not parse as the expected PDU."""


class UnsupportedVersion(MalformedPacket):
    pass


class ProtectionError(RansecError):
    """A protected packet was rejected by its receiving endpoint."""


class AuthenticationError(ProtectionError):
    """Integrity check failed: the packet was modified or forged."""


class IntegrityError(AuthenticationError):
    """PDCP MAC-I mismatch."""


class ReplayError(ProtectionError):
    pass


class UnknownSpi(ProtectionError):
    pass


class PaddingError(ProtectionError):
    """Padding was invalid after a successful authentication check."""


class KeyLengthError(RansecError, ValueError):
    pass


class SequenceExhausted(RansecError):
    """A sequence or COUNT space ran out; the association must be re-provisioned."""


class UnknownSuite(RansecError, KeyError):
    def __init__(self, name, known):
        self.name = name
        self.known = tuple(known)
        super().__init__(name)

    def __str__(self):
        return f"unknown suite {self.name!r}; known suites: {', '.join(self.known)}"


class InvalidSuiteForInterface(RansecError, ValueError):
    pass


class TopologyError(RansecError):
    pass


class TransportError(RansecError, OSError):
    pass


class EchoFailure(RansecError):
    """An echo round trip failed; ``link`` names the interface the bad packet arrived on."""

    def __init__(self, link, node, cause):
        self.link = link
        self.node = node
        self.cause = cause
        super().__init__(f"echo failed on link {link} at {node}: {type(cause).__name__}: {cause}")


class ProcedureTimeout(RansecError, TimeoutError):
    pass


class ExperimentAborted(RansecError):
    """Campaign stopped early; carries the samples gathered before the failure."""

    def __init__(self, completed, samples_ns, cause):
        self.completed = completed
        self.samples_ns = samples_ns
        self.cause = cause
        super().__init__(f"experiment aborted after {completed} samples: {cause}")


class ConfigError(RansecError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaError(RansecError, ValueError):
    pass
