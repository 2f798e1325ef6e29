"""Exception hierarchy shared across the package."""


class AuditError(Exception):
    """Base class for every error raised by this package."""


class MalformedVersion(AuditError, ValueError):
    pass


class MalformedRecord(AuditError, ValueError):
    pass


class EmptyInput(AuditError):
    pass


class FetchError(AuditError):
    """Base class for live search API failures."""


class AuthError(FetchError):
    pass


class RateLimited(FetchError):
    pass


class TransportError(FetchError):
    pass


class InfeasibleSpec(AuditError):
    pass


class SchemaError(AuditError):
    """A rule or fingerprint document has the wrong structure."""


class ValidationError(SchemaError):
    """A rule or fingerprint document is well-formed but violates a constraint."""


class FamilyMismatch(AuditError, ValueError):
    pass
