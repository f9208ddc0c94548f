"""Core ledger types: transactions, certificates, accounts, and their byte encodings.

Wire conventions used everywhere in the package: integers are big-endian
fixed width, byte strings are prefixed with a u32 length, and fields are
written in declaration order.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import (
    DecodeError,
    EmptySigners,
    KeyMismatch,
    QuorumUnderflow,
    StampNotFound,
)

DIGEST_SIZE = 32
HEARTBIT = 10**6  # base units per coin
ZERO_DIGEST = bytes(DIGEST_SIZE)

# payload type tags (first payload byte)
PAYLOAD_DATA = 0x00
PAYLOAD_CALL = 0x01
PAYLOAD_RECEIPT = 0x02
PAYLOAD_RELEASE = 0x03


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leading_zero_bits(h: bytes) -> int:
    n = 0
    for b in h:
        if b == 0:
            n += 8
            continue
        return n + 8 - b.bit_length()
    return n


# --------------------------------------------------------------------------
# byte-level helpers


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def f64(self, v: float) -> "Writer":
        self._parts.append(struct.pack(">d", v))
        return self

    def blob(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(b)
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode("utf-8"))

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self):
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


# --------------------------------------------------------------------------
# transactions


@dataclass(frozen=True)
class SignedTransaction:
    sender: bytes
    to: bytes
    value: int
    nonce: int
    payload: bytes = b""
    node_groups_hint: Optional[int] = None
    cert_id: bytes = b""
    hash_data: bytes = b""
    signature: bytes = b""

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("value must be non-negative")
        if self.nonce < 0:
            raise ValueError("nonce must be non-negative")
        if self.node_groups_hint is not None and not 1 <= self.node_groups_hint <= 4:
            raise ValueError("node_groups_hint must be 1..4 or None")

    @property
    def payload_tag(self) -> Optional[int]:
        return self.payload[0] if self.payload else None


def canonical_encode(tx: SignedTransaction) -> bytes:
    w = Writer()
    w.blob(tx.sender)
    w.u8(tx.node_groups_hint or 0)
    w.blob(tx.to)
    w.u64(tx.value)
    w.blob(tx.cert_id)
    w.blob(tx.hash_data)
    w.u64(tx.nonce)
    w.blob(tx.payload)
    w.blob(tx.signature)
    return w.getvalue()


def decode_transaction(data: bytes) -> SignedTransaction:
    r = Reader(data)
    tx = read_transaction(r)
    r.expect_end()
    return tx


def read_transaction(r: Reader) -> SignedTransaction:
    sender = r.blob()
    hint = r.u8()
    to = r.blob()
    value = r.u64()
    cert_id = r.blob()
    hash_data = r.blob()
    nonce = r.u64()
    payload = r.blob()
    signature = r.blob()
    if hint > 4:
        raise DecodeError(f"bad group hint {hint}")
    return SignedTransaction(
        sender=sender, to=to, value=value, nonce=nonce, payload=payload,
        node_groups_hint=hint or None, cert_id=cert_id, hash_data=hash_data,
        signature=signature,
    )


def hash_transaction(tx: SignedTransaction) -> bytes:
    return digest(canonical_encode(tx))


def signing_bytes(tx: SignedTransaction) -> bytes:
    return canonical_encode(replace(tx, signature=b""))


def body_hash(tx: SignedTransaction) -> bytes:
    """Digest of the transaction before certification (no cert_id, no signature)."""
    return digest(canonical_encode(replace(tx, cert_id=b"", signature=b"")))


def resource_units(tx: SignedTransaction) -> int:
    return 1 + len(tx.payload) // 256


# --------------------------------------------------------------------------
# keys and signatures


class KeyPair:
    """Ed25519 keypair; the account id is the digest of the raw public key."""

    __slots__ = ("_secret", "public", "account_id")

    def __init__(self, secret: Ed25519PrivateKey):
        self._secret = secret
        self.public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        self.account_id = digest(self.public)

    @classmethod
    def from_seed(cls, material: bytes | str) -> "KeyPair":
        if isinstance(material, str):
            material = material.encode("utf-8")
        return cls(Ed25519PrivateKey.from_private_bytes(digest(b"parax-key|" + material)))

    def sign(self, message: bytes) -> bytes:
        return self._secret.sign(message)

    def __repr__(self):
        return f"KeyPair({self.account_id.hex()[:12]})"


def verify_raw(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def sign_transaction(tx: SignedTransaction, key: KeyPair) -> SignedTransaction:
    if key.account_id != tx.sender:
        raise KeyMismatch("secret key does not derive the sender id")
    # the signature field carries the public key so verification is self-contained
    sig = key.public + key.sign(signing_bytes(tx))
    return replace(tx, signature=sig)


def verify_signature(tx: SignedTransaction) -> bool:
    sig = tx.signature
    if len(sig) != 96:
        return False
    public, raw = sig[:32], sig[32:]
    if digest(public) != tx.sender:
        return False
    return verify_raw(public, signing_bytes(tx), raw)


# --------------------------------------------------------------------------
# certificates


class Stage(enum.IntEnum):
    INITIATOR = 1
    VALIDATOR = 2
    CONSTRUCTOR = 3


@dataclass(frozen=True)
class Certificate:
    stage: Stage
    subject: bytes
    signers: tuple[str, ...]
    cycle: int
    proof: bytes = b""
    stamp: int = 0
    cert_hash: bytes = b""

    def preimage(self) -> bytes:
        return certificate_preimage(self.stage, self.subject, self.signers,
                                    self.cycle, self.proof, self.stamp)

    def recompute_hash(self) -> bytes:
        return digest(self.preimage())

    def is_intact(self) -> bool:
        return self.recompute_hash() == self.cert_hash


def certificate_preimage(stage, subject, signers, cycle, proof, stamp) -> bytes:
    w = Writer().u8(int(stage)).blob(subject).u32(len(signers))
    for s in signers:
        w.text(s)
    return w.u64(cycle).blob(proof).u64(stamp).getvalue()


def issue_certificate(
    stage: Stage,
    subject: bytes,
    signers: Sequence[str],
    cycle: int,
    proof: bytes = b"",
    quorum: Optional[int] = None,
    difficulty: int = 0,
    max_tries: int = 1 << 22,
) -> Certificate:
    signers = tuple(signers)
    if not signers:
        raise EmptySigners("certificate needs at least one signer")
    stage = Stage(stage)
    if stage is Stage.INITIATOR:
        if len(signers) != 1:
            raise ValueError("initiator certificate takes exactly one signer")
    else:
        if quorum is None:
            raise ValueError(f"{stage.name.lower()} certificate requires a quorum")
        if len(signers) < quorum:
            raise QuorumUnderflow(f"{len(signers)} signers < quorum {quorum}")
    stamp = 0
    while True:
        h = digest(certificate_preimage(stage, subject, signers, cycle, proof, stamp))
        if difficulty <= 0 or leading_zero_bits(h) >= difficulty:
            break
        stamp += 1
        if stamp >= max_tries:
            raise StampNotFound(f"no stamp with {difficulty} zero bits in {max_tries} tries")
    return Certificate(stage, subject, signers, cycle, proof, stamp, h)


def stamp_difficulty(base: int, priority: int) -> int:
    """Anti-spam difficulty falls by one bit per unit of fee priority, floor 0."""
    return max(0, base - priority)


def write_certificate(w: Writer, cert: Certificate):
    w.raw(cert.preimage()).blob(cert.cert_hash)


def read_certificate(r: Reader) -> Certificate:
    stage = r.u8()
    if stage not in (1, 2, 3):
        raise DecodeError(f"bad certificate stage {stage}")
    subject = r.blob()
    signers = tuple(r.text() for _ in range(r.u32()))
    cycle = r.u64()
    proof = r.blob()
    stamp = r.u64()
    cert_hash = r.blob()
    return Certificate(Stage(stage), subject, signers, cycle, proof, stamp, cert_hash)


# --------------------------------------------------------------------------
# accounts


@dataclass(frozen=True)
class Account:
    id: bytes
    balance: int = 0
    nonce: int = 0
    is_contract: bool = False
    governance_flag: bool = False

    def __post_init__(self):
        if self.balance < 0:
            raise ValueError("negative balance")

    def leaf(self) -> bytes:
        w = Writer().blob(self.id).u64(self.balance).u64(self.nonce)
        w.u8(int(self.is_contract) | (int(self.governance_flag) << 1))
        return digest(w.getvalue())


def contract_id(name: str) -> bytes:
    return digest(b"parax-contract|" + name.encode("utf-8"))


def create_transaction(
    key: KeyPair,
    to: bytes,
    value: int,
    nonce: int,
    payload: bytes = b"",
    cycle: int = 0,
    group_hint: Optional[int] = None,
    difficulty: int = 0,
) -> tuple[SignedTransaction, Certificate]:
    """Build, certify and sign a transaction in one step.

    The initiator certificate covers the body hash (cert_id and signature
    empty); its hash then becomes the transaction's cert_id before signing.
    """
    tx = SignedTransaction(
        sender=key.account_id, to=to, value=value, nonce=nonce, payload=payload,
        node_groups_hint=group_hint, hash_data=digest(payload),
    )
    cert = issue_certificate(
        Stage.INITIATOR, body_hash(tx), [key.account_id.hex()], cycle,
        difficulty=difficulty,
    )
    tx = replace(tx, cert_id=cert.cert_hash)
    return sign_transaction(tx, key), cert


def initiator_matches(tx: SignedTransaction, cert: Certificate) -> bool:
    return (
        cert.stage is Stage.INITIATOR
        and cert.is_intact()
        and cert.cert_hash == tx.cert_id
        and cert.subject == body_hash(tx)
        and cert.signers == (tx.sender.hex(),)
    )


def sum_balances(accounts: Iterable[Account]) -> int:
    return sum(a.balance for a in accounts)
