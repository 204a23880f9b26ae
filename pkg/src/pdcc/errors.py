"""Exception hierarchy shared by all protocol modules.

Every error carries a short machine-readable ``reason`` (the class name by
default) so that rejections can be serialized into messages and traces.
"""


class ProtocolError(Exception):
    reason = "ProtocolError"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.reason)
        self.detail = detail


def _make(name: str, base=ProtocolError):
    return type(name, (base,), {"reason": name})


# domain / crypto
InvalidConfiguration = _make("InvalidConfiguration")
InvalidTransaction = _make("InvalidTransaction")
InvalidMembership = _make("InvalidMembership")
EncodingError = _make("EncodingError")
InsufficientSignatures = _make("InsufficientSignatures")
NonMemberSigner = _make("NonMemberSigner")
BadSignature = _make("BadSignature")

# fast path
WrongConfiguration = _make("WrongConfiguration")
UnknownSender = _make("UnknownSender")
BadNonce = _make("BadNonce")
InsufficientFunds = _make("InsufficientFunds")
ConflictingTransaction = _make("ConflictingTransaction")
StaleConfiguration = _make("StaleConfiguration")
FutureConfiguration = _make("FutureConfiguration")
QuorumInvalid = _make("QuorumInvalid")
NonSequentialExecution = _make("NonSequentialExecution")
AmountOverflow = _make("AmountOverflow")
NotMember = _make("NotMember")

# settlement
NotCoordinator = _make("NotCoordinator")
PreviousSlotUndelivered = _make("PreviousSlotUndelivered")
InvalidItem = _make("InvalidItem")
DigestMismatch = _make("DigestMismatch")
AlreadyPrepared = _make("AlreadyPrepared")
ProofInvalid = _make("ProofInvalid")
SlotGap = _make("SlotGap")
InvalidJustification = _make("InvalidJustification")

# reconfiguration
PolicyViolation = _make("PolicyViolation")
ConflictingReconfig = _make("ConflictingReconfig")
CertificateInvalid = _make("CertificateInvalid")
ProposalInvalid = _make("ProposalInvalid")
WrongTransition = _make("WrongTransition")
NotAuthorized = _make("NotAuthorized")


class SnapshotRejected(ProtocolError):
    """Raised by snapshot verification; ``link`` is the first failing CH index."""

    reason = "SnapshotRejected"

    def __init__(self, link: int, why: str):
        super().__init__(f"link {link}: {why}")
        self.link = link
        self.why = why


# scenario / tooling
class ScenarioError(Exception):
    reason = "ScenarioError"


class ParseError(ScenarioError):
    reason = "ParseError"


class OverlapViolation(ScenarioError):
    reason = "OverlapViolation"


class FaultBoundViolation(ScenarioError):
    reason = "FaultBoundViolation"


class ExplorerLimit(ScenarioError):
    reason = "ExplorerLimit"


class StateSpaceBudgetExceeded(Exception):
    reason = "StateSpaceBudgetExceeded"

    def __init__(self, explored: int, stats: dict):
        super().__init__(f"state budget exhausted after {explored} states")
        self.explored = explored
        self.stats = stats


class MalformedTrace(Exception):
    reason = "MalformedTrace"
