"""Error types shared across the package.

Every error carries a machine-readable ``code`` (its class name) which is
what goes into wire-protocol Error frames and CLI messages.
"""


class GatewayError(Exception):
    """Base class; ``code`` is the stable machine-readable identifier."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- fhir model ----------------------------------------------------------

class MalformedJson(GatewayError):
    pass


class NotABundle(GatewayError):
    pass


class DuplicateResource(GatewayError):
    pass


class NotFound(GatewayError):
    pass


# -- timeline ------------------------------------------------------------

class TooFewVisits(GatewayError):
    pass


class InvalidDensity(GatewayError):
    pass


class NoEncounters(GatewayError):
    pass


# -- cohort --------------------------------------------------------------

class EmptyQuery(GatewayError):
    pass


class NoPatients(GatewayError):
    pass


class CohortTooLarge(GatewayError):
    pass


# -- volumetrics ---------------------------------------------------------

class MalformedHeader(GatewayError):
    pass


class SizeMismatch(GatewayError):
    pass


class UnsupportedDtype(GatewayError):
    pass


class LabelIsZero(GatewayError):
    pass


class LabelAbsent(GatewayError):
    pass


class DimMismatch(GatewayError):
    pass


# -- pipelines -----------------------------------------------------------

class DuplicateId(GatewayError):
    pass


class InvalidDescriptor(GatewayError):
    pass


class UnknownPipeline(GatewayError):
    pass


class MissingInput(GatewayError):
    pass


class UnknownJob(GatewayError):
    pass


class EmptyVolume(GatewayError):
    pass


# -- upstream clients ----------------------------------------------------

class AuthRejected(GatewayError):
    pass


class EndpointUnreachable(GatewayError):
    pass


class Unauthorized(GatewayError):
    pass


class UpstreamError(GatewayError):
    pass


class PageCapExceeded(GatewayError):
    pass


class PathEscapesRoot(GatewayError):
    pass


class StorageIoError(GatewayError):
    pass


# -- configuration -------------------------------------------------------

class InvalidConfig(GatewayError):
    pass


# -- wire protocol -------------------------------------------------------

class BadMagic(GatewayError):
    pass


class Truncated(GatewayError):
    """More bytes are needed before a full frame can be decoded."""


class Oversize(GatewayError):
    pass


class UnknownType(GatewayError):
    pass


class NotAllowlisted(GatewayError):
    pass


class MalformedHello(GatewayError):
    pass


class SessionClosed(GatewayError):
    pass
