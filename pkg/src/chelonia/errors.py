"""Error types shared by every service.

Each error carries a stable string ``code``. Errors raised inside a handler
travel back over the wire as ``{"error": code, "message": ..., "details": ...}``
and are re-raised on the caller side as the same class.
"""

from __future__ import annotations

_BY_CODE: dict[str, type["ServiceError"]] = {}


class ServiceError(Exception):
    code = "failed"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        _BY_CODE[cls.code] = cls

    def to_wire(self) -> dict:
        return {"error": self.code, "message": self.message, "details": self.details}

    @staticmethod
    def from_wire(data: dict) -> "ServiceError":
        cls = _BY_CODE.get(data.get("error"), ServiceError)
        err = cls(data.get("message") or "", **(data.get("details") or {}))
        if cls is ServiceError:
            err.code = data.get("error", "failed")
        return err

    def __repr__(self):
        return f"{type(self).__name__}({self.code!r}, {self.message!r})"


# hosting / transport
class DuplicateName(ServiceError):
    code = "duplicate-name"


class UnknownTarget(ServiceError):
    code = "unknown-target"


class QueueFull(ServiceError):
    code = "queue-full"


class TransportFailure(ServiceError):
    code = "transport-failure"


class TrustDenied(ServiceError):
    code = "trust-denied"


class NotSimulationTransport(ServiceError):
    code = "not-simulation-transport"


class UnknownOperation(ServiceError):
    code = "unknown-operation"


# A-Hash
class NotMaster(ServiceError):
    code = "not-master"


class NoMaster(ServiceError):
    code = "no-master"


class NoMajority(ServiceError):
    code = "no-majority"


class GapDetected(ServiceError):
    code = "gap-detected"


class NotFromMaster(ServiceError):
    code = "not-from-master"


class NodeDown(ServiceError):
    code = "node-down"


# Librarian
class AHashUnavailable(ServiceError):
    code = "ahash-unavailable"


class UnknownShepherd(ServiceError):
    code = "unknown-shepherd"


# Shepherd
class InsufficientSpace(ServiceError):
    code = "insufficient-space"


class BackendFailure(ServiceError):
    code = "backend-failure"


class NoAliveReplica(ServiceError):
    code = "no-alive-replica"


class TicketRefused(ServiceError):
    code = "ticket-refused"


class LibrarianUnavailable(ServiceError):
    code = "librarian-unavailable"


# Bartender
class NotFound(ServiceError):
    code = "not-found"


class ParentMissing(ServiceError):
    code = "parent-missing"


class NameTaken(ServiceError):
    code = "name-taken"


class AccessDenied(ServiceError):
    code = "access-denied"


class NotEmpty(ServiceError):
    code = "not-empty"


class NotACollection(ServiceError):
    code = "not-a-collection"


class InvalidName(ServiceError):
    code = "invalid-name"


class NoShepherdAvailable(ServiceError):
    code = "no-shepherd-available"


class NoEligibleShepherd(ServiceError):
    code = "no-eligible-shepherd"


class NotUnderReplicated(ServiceError):
    code = "not-under-replicated"


class BartenderUnavailable(ServiceError):
    code = "bartender-unavailable"


class IsACollection(ServiceError):
    code = "is-a-collection"


# codes caused by the request itself; everything else is a system condition
USER_ERRORS = frozenset({
    NotFound.code, ParentMissing.code, NameTaken.code, AccessDenied.code, NotEmpty.code,
    NotACollection.code, InvalidName.code, IsACollection.code, TicketRefused.code,
    UnknownOperation.code, TrustDenied.code, InsufficientSpace.code,
})


def is_user_error(code: str) -> bool:
    return code in USER_ERRORS
