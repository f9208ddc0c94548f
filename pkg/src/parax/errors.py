"""Exception hierarchy shared across the package."""


class ParaxError(Exception):
    pass


# ledger
class KeyMismatch(ParaxError):
    pass


class EmptySigners(ParaxError):
    pass


class QuorumUnderflow(ParaxError):
    pass


class StampNotFound(ParaxError):
    pass


class DecodeError(ParaxError):
    pass


# dag
class DuplicateTransaction(ParaxError):
    pass


class BadSignature(ParaxError):
    pass


class NonceGap(ParaxError):
    pass


class IllegalTransition(ParaxError):
    pass


# sharding
class InsufficientNodes(ParaxError):
    pass


# consensus
class NotHolder(ParaxError):
    pass


class ForeignVote(ParaxError):
    pass


class MissingValidatorCert(ParaxError):
    pass


class StateRootMismatch(ParaxError):
    pass


class IndexOutOfRange(ParaxError, IndexError):
    pass


# net-sim
class DuplicateNode(ParaxError):
    pass


class UnknownNode(ParaxError):
    pass


# interop / economics
class InsufficientBalance(ParaxError):
    pass


class WrongPhase(ParaxError):
    pass


class DuplicateSwap(ParaxError):
    pass


class ChecksumMismatch(ParaxError):
    pass


# cli
class SchemaViolation(ParaxError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CorruptOutput(ParaxError):
    def __init__(self, message, height=None, chain=None):
        self.height = height
        self.chain = chain
        super().__init__(message)
