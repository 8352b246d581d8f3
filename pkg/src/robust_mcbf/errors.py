class InvalidInput(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class SubproblemInfeasible(RuntimeError):
    """A base station's local problem has no feasible point."""

    def __init__(self, bs, status, message=""):
        self.bs = bs
        self.status = status
        super().__init__(message or f"BS {bs}: local subproblem {status}")


class BackhaulError(RuntimeError):
    """Base class for transport failures."""


class RoundTimeout(BackhaulError):
    def __init__(self, q, missing):
        self.q = q
        self.missing = sorted(missing)
        super().__init__(f"round {q}: no message from {self.missing}")


class CorruptMessage(BackhaulError):
    """Checksum or framing mismatch."""


class ProtocolError(BackhaulError):
    """Duplicate (sender, round) pair or other protocol violation."""
