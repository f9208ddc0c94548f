"""Proof-of-participation building blocks: segmenting, segment votes and ballots,
vote aggregation into validator certificates, chain state, and block construction
with replay checking.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence, Union

from .economics import declared_fee, friction_fee
from .errors import (
    EmptySigners,
    ForeignVote,
    MissingValidatorCert,
    NotHolder,
    StateRootMismatch,
)
from .ledger import (
    Account,
    Certificate,
    KeyPair,
    SignedTransaction,
    Stage,
    Writer,
    canonical_encode,
    digest,
    hash_transaction,
    issue_certificate,
    resource_units,
    verify_raw,
    write_certificate,
)
from .merkle import TrieCommitment, merkle_root

MAX_SEGMENTS = 4


def quorum_for(n: int) -> int:
    """Two-thirds quorum, rounded up."""
    return -(-2 * n // 3)


@dataclass(frozen=True)
class ValidatorSet:
    group: int  # 1..4 for validator groups, 0 for the constructor set
    cycle: int
    members: tuple[str, ...]
    quorum: int = 0

    def __post_init__(self):
        if not self.members:
            raise EmptySigners("validator set is empty")
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate members")
        q = self.quorum or quorum_for(len(self.members))
        if not quorum_for(len(self.members)) <= q <= len(self.members):
            raise ValueError(f"quorum {q} outside [ceil(2n/3), n]")
        object.__setattr__(self, "quorum", q)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.members

    @property
    def size(self) -> int:
        return len(self.members)


# --------------------------------------------------------------------------
# segments and votes


def segment_transaction(tx: SignedTransaction | bytes, k: int) -> list[bytes]:
    """Split the canonical encoding into k contiguous pieces whose sizes differ by at most one."""
    if k < 1:
        raise ValueError("k must be at least 1")
    data = tx if isinstance(tx, bytes) else canonical_encode(tx)
    base, extra = divmod(len(data), k)
    out, pos = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(data[pos:pos + size])
        pos += size
    return out


def segment_count(members: int) -> int:
    return max(1, min(members, MAX_SEGMENTS))


class Verdict(enum.Enum):
    APPROVE = "Approve"
    REJECT = "Reject"


@dataclass(frozen=True)
class SegmentVote:
    voter: str
    tx_hash: bytes
    segment_index: int
    verdict: Verdict
    reason: Optional[str] = None
    signature: bytes = b""

    def body(self) -> tuple:
        return (self.voter, self.tx_hash, self.segment_index, self.verdict, self.reason)


def ballot_message(voter: str, tx_hash: bytes, votes: Sequence[SegmentVote]) -> bytes:
    w = Writer().text("ballot").text(voter).blob(tx_hash).u32(len(votes))
    for v in sorted(votes, key=lambda v: v.segment_index):
        w.u32(v.segment_index).u8(v.verdict is Verdict.APPROVE).text(v.reason or "")
    return w.getvalue()


def sign_ballot(key: KeyPair, voter: str, tx_hash: bytes, votes: Sequence[SegmentVote]) -> tuple[SegmentVote, ...]:
    """Sign all of a voter's verdicts on one transaction with a single signature.

    Each returned vote carries the shared signature; it verifies against the
    voter's complete set of votes for that transaction.
    """
    sig = key.sign(ballot_message(voter, tx_hash, votes))
    return tuple(replace(v, signature=sig) for v in votes)


def verify_ballot(public: bytes, votes: Sequence[SegmentVote]) -> bool:
    if not votes:
        return False
    first = votes[0]
    if any(v.voter != first.voter or v.tx_hash != first.tx_hash or v.signature != first.signature
           for v in votes):
        return False
    return verify_raw(public, ballot_message(first.voter, first.tx_hash, votes), first.signature)


def validate_segment(
    node: str,
    tx: SignedTransaction,
    segment_index: int,
    state: "ChainState",
    *,
    k: int = 1,
    received: Optional[bytes] = None,
    expected_digests: Optional[Sequence[bytes]] = None,
    fee: int = 0,
    holdings: Optional[set[int]] = None,
    shard_of: Optional[Callable[[bytes], int]] = None,
    tx_hash: Optional[bytes] = None,
) -> SegmentVote:
    """One validator's verdict on one segment.

    ``received`` is the segment as delivered to the node (defaults to the
    honest bytes). Segment 0 additionally checks the sender can cover value
    plus fee and that the nonce has not been used.
    """
    tx_hash = tx_hash or hash_transaction(tx)
    if expected_digests is None:
        expected_digests = [digest(s) for s in segment_transaction(tx, k)]
    if not 0 <= segment_index < len(expected_digests):
        raise IndexError("segment index out of range")
    want = expected_digests[segment_index]
    if holdings is not None and shard_of is not None and shard_of(want) not in holdings:
        raise NotHolder(f"{node} does not hold the shard for segment {segment_index}")
    if received is None:
        received = segment_transaction(tx, len(expected_digests))[segment_index]

    def vote(verdict, reason=None):
        return SegmentVote(node, tx_hash, segment_index, verdict, reason)

    if digest(received) != want:
        return vote(Verdict.REJECT, "hash-mismatch")
    if segment_index == 0:
        acct = state.account(tx.sender)
        if acct.balance < tx.value + fee:
            return vote(Verdict.REJECT, "insufficient-balance")
        if tx.nonce < acct.nonce:
            return vote(Verdict.REJECT, "bad-nonce")
    return vote(Verdict.APPROVE)


@dataclass
class ValidationResult:
    validated: bool
    certificate: Optional[Certificate]
    approvals: tuple[int, ...]
    rejections: tuple[int, ...]
    signers: tuple[str, ...] = ()
    evidence: tuple[SegmentVote, ...] = ()
    equivocators: tuple[str, ...] = ()
    decisive: bool = True
    reason: str = ""

    @property
    def status(self) -> str:
        return "Validated" if self.validated else "Rejected"


def vote_evidence(votes: Iterable[SegmentVote]) -> bytes:
    w = Writer()
    for v in sorted(votes, key=lambda v: (v.voter, v.segment_index)):
        w.text(v.voter).u32(v.segment_index).u8(v.verdict is Verdict.APPROVE)
        w.text(v.reason or "").blob(v.signature)
    return digest(w.getvalue())


def aggregate_votes(
    votes: Iterable[SegmentVote],
    vset: ValidatorSet,
    *,
    segments: int = 1,
    subject: bytes = b"",
    difficulty: int = 0,
) -> ValidationResult:
    """Validated iff every segment collects a quorum of approvals.

    A voter that cast two different verdicts on the same segment is treated
    as equivocating and all its votes on the transaction are dropped. The
    certificate is signed by every member that approved at least one segment.
    A rejection is decisive when the missing votes could not have changed it.
    """
    by_key: dict[tuple[str, int], SegmentVote] = {}
    equivocators: set[str] = set()
    for v in votes:
        if v.voter not in vset:
            raise ForeignVote(f"{v.voter} is not in the validator set")
        if not 0 <= v.segment_index < segments:
            raise ValueError(f"segment index {v.segment_index} out of range")
        key = (v.voter, v.segment_index)
        prev = by_key.get(key)
        if prev is not None and prev.body() != v.body():
            equivocators.add(v.voter)
        by_key.setdefault(key, v)
    kept = [v for (voter, _), v in by_key.items() if voter not in equivocators]

    approvals = [0] * segments
    rejections = [0] * segments
    approvers: set[str] = set()
    for v in kept:
        if v.verdict is Verdict.APPROVE:
            approvals[v.segment_index] += 1
            approvers.add(v.voter)
        else:
            rejections[v.segment_index] += 1
    q = vset.quorum
    ok = all(a >= q for a in approvals)
    if not ok:
        blocking = any(r > vset.size - q for r in rejections)
        reasons = sorted({v.reason for v in kept if v.verdict is Verdict.REJECT and v.reason})
        return ValidationResult(
            False, None, tuple(approvals), tuple(rejections),
            equivocators=tuple(sorted(equivocators)),
            decisive=blocking,
            reason=",".join(reasons) if blocking else "missing-votes",
        )
    signers = tuple(m for m in vset.members if m in approvers)
    evidence = tuple(sorted((v for v in kept if v.voter in approvers),
                            key=lambda v: (v.voter, v.segment_index)))
    cert = issue_certificate(
        Stage.VALIDATOR, subject, signers, vset.cycle,
        proof=vote_evidence(evidence), quorum=q, difficulty=difficulty,
    )
    return ValidationResult(True, cert, tuple(approvals), tuple(rejections), signers,
                            evidence, tuple(sorted(equivocators)))


# --------------------------------------------------------------------------
# chain state


def pool_leaf(pool: int, minted: int) -> bytes:
    return digest(Writer().text("pool").u64(pool).u64(minted).getvalue())


@dataclass
class ChainState:
    accounts: dict[bytes, Account] = field(default_factory=dict)
    pool: int = 0
    minted: int = 0
    initial_supply: int = 0

    @classmethod
    def genesis(cls, accounts: Iterable[Account]) -> "ChainState":
        accts = {a.id: a for a in accounts}
        return cls(accts, 0, 0, sum(a.balance for a in accts.values()))

    def copy(self) -> "ChainState":
        return ChainState(dict(self.accounts), self.pool, self.minted, self.initial_supply)

    def account(self, account_id: bytes) -> Account:
        a = self.accounts.get(account_id)
        return a if a is not None else Account(account_id)

    def balance(self, account_id: bytes) -> int:
        return self.account(account_id).balance

    def is_contract(self, account_id: bytes) -> bool:
        a = self.accounts.get(account_id)
        return a is not None and a.is_contract

    def total_balances(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def conserved(self) -> bool:
        return self.total_balances() + self.pool == self.initial_supply + self.minted

    def state_root(self) -> bytes:
        leaves = [self.accounts[k].leaf() for k in sorted(self.accounts)]
        leaves.append(pool_leaf(self.pool, self.minted))
        return merkle_root(leaves)

    def fee_for(self, tx: SignedTransaction, F: float) -> int:
        """Friction fee; contract-originated transactions pay their declared fee."""
        if self.is_contract(tx.sender):
            return declared_fee(tx.payload)
        return friction_fee(F, resource_units(tx))

    # mutation -------------------------------------------------------------

    def credit(self, account_id: bytes, amount: int):
        a = self.account(account_id)
        self.accounts[account_id] = replace(a, balance=a.balance + amount)

    def apply_transaction(self, tx: SignedTransaction, fee: int) -> Optional[str]:
        """Apply a transfer; returns a veto reason instead of applying when invalid."""
        s = self.account(tx.sender)
        if tx.nonce != s.nonce:
            return "bad-nonce"
        if s.balance < tx.value + fee:
            return "insufficient-balance"
        self.accounts[tx.sender] = replace(s, balance=s.balance - tx.value - fee, nonce=s.nonce + 1)
        self.credit(tx.to, tx.value)
        self.pool += fee
        return None

    def apply_prologue(self, minted: int, rewards: Sequence[tuple[bytes, int]]):
        """Start-of-block bookkeeping: inflation into the pool, then reward payouts."""
        self.pool += minted
        self.minted += minted
        paid = sum(a for _, a in rewards)
        if paid > self.pool:
            raise ValueError("rewards exceed pool")
        self.pool -= paid
        for acct, amount in rewards:
            self.credit(acct, amount)


# --------------------------------------------------------------------------
# blocks


@dataclass(frozen=True)
class Candidate:
    """A validated transaction waiting for the constructor phase."""

    tx: SignedTransaction
    tx_hash: bytes
    group: int
    order: tuple[int, int]  # (cycle, admission index)
    initiator: Certificate
    validator: Optional[Certificate]
    committee: tuple[str, ...] = ()
    quorum: int = 0
    votes: tuple[SegmentVote, ...] = ()


@dataclass(frozen=True)
class BlockEntry:
    tx: SignedTransaction
    group: int
    fee: int
    committee: tuple[str, ...]
    quorum: int
    votes: tuple[SegmentVote, ...]
    certs: tuple[Certificate, Certificate, Certificate]

    @property
    def tx_hash(self) -> bytes:
        return hash_transaction(self.tx)


def encode_entry(w: Writer, e: BlockEntry):
    w.raw(canonical_encode(e.tx))
    w.u8(e.group).u64(e.fee).u32(len(e.committee))
    for m in e.committee:
        w.text(m)
    w.u32(e.quorum).u32(len(e.votes))
    for v in e.votes:
        w.text(v.voter).u32(v.segment_index).u8(v.verdict is Verdict.APPROVE)
        w.text(v.reason or "").blob(v.signature)
    for c in e.certs:
        write_certificate(w, c)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    cycle: int
    friction: float
    minted: int
    rewards: tuple[tuple[bytes, int], ...]
    entries: tuple[BlockEntry, ...]
    state_root: bytes
    cert_root: bytes
    constructor_members: tuple[str, ...]
    constructor_quorum: int
    constructor_cert: Optional[Certificate] = None

    @property
    def tx_hashes(self) -> tuple[bytes, ...]:
        return tuple(hash_transaction(e.tx) for e in self.entries)

    def entries_digest(self) -> bytes:
        w = Writer()
        for e in self.entries:
            encode_entry(w, e)
        return digest(w.getvalue())

    def header_bytes(self) -> bytes:
        w = Writer().u64(self.height).blob(self.prev_hash).u64(self.cycle)
        w.f64(self.friction).u64(self.minted).u32(len(self.rewards))
        for acct, amount in self.rewards:
            w.blob(acct).u64(amount)
        w.u32(len(self.entries))
        for h in self.tx_hashes:
            w.blob(h)
        w.blob(self.entries_digest()).blob(self.state_root).blob(self.cert_root)
        w.u32(len(self.constructor_members))
        for m in self.constructor_members:
            w.text(m)
        return w.u32(self.constructor_quorum).getvalue()

    def header_digest(self) -> bytes:
        return digest(self.header_bytes())

    def block_hash(self) -> bytes:
        cert = self.constructor_cert.cert_hash if self.constructor_cert else b""
        return digest(self.header_bytes() + cert)


def build_cert_root(entries: Iterable[BlockEntry]) -> bytes:
    trie = TrieCommitment()
    for e in entries:
        for c in e.certs:
            trie.insert(e.group - 1, c.cert_hash, c.cert_hash)
    return trie.root()


@dataclass
class BlockBody:
    state: ChainState
    applied: list[tuple[Candidate, int]]
    vetoed: list[tuple[Candidate, str]]


def build_body(
    prior: ChainState,
    candidates: Iterable[Candidate],
    friction: float,
    minted: int = 0,
    rewards: Sequence[tuple[bytes, int]] = (),
) -> BlockBody:
    state = prior.copy()
    state.apply_prologue(minted, rewards)
    applied, vetoed = [], []
    for cand in sorted(candidates, key=lambda c: c.order):
        if cand.validator is None:
            raise MissingValidatorCert(cand.tx_hash.hex())
        fee = state.fee_for(cand.tx, friction)
        reason = state.apply_transaction(cand.tx, fee)
        if reason is None:
            applied.append((cand, fee))
        else:
            vetoed.append((cand, reason))
    return BlockBody(state, applied, vetoed)


def replay_entries(
    prior: ChainState,
    friction: float,
    minted: int,
    rewards: Sequence[tuple[bytes, int]],
    txs: Iterable[SignedTransaction],
) -> ChainState:
    """Strict replay: every transaction must apply cleanly."""
    state = prior.copy()
    state.apply_prologue(minted, rewards)
    for tx in txs:
        reason = state.apply_transaction(tx, state.fee_for(tx, friction))
        if reason is not None:
            raise StateRootMismatch(f"replay veto {reason} for {hash_transaction(tx).hex()}")
    return state


def seal_block(
    body: BlockBody,
    *,
    prev_hash: bytes,
    height: int,
    cycle: int,
    friction: float,
    minted: int,
    rewards: Sequence[tuple[bytes, int]],
    cset: ValidatorSet,
    signers: Sequence[str],
    state_root: Optional[bytes] = None,
    difficulty: int = 0,
) -> Block:
    """Attach per-transaction constructor certificates and the block certificate."""
    root = body.state.state_root() if state_root is None else state_root
    signers = tuple(m for m in cset.members if m in set(signers))
    entries = []
    for cand, fee in body.applied:
        ccert = issue_certificate(
            Stage.CONSTRUCTOR, cand.validator.cert_hash, signers, cycle,
            proof=digest(root + cand.tx_hash), quorum=cset.quorum, difficulty=difficulty,
        )
        entries.append(BlockEntry(cand.tx, cand.group, fee, cand.committee, cand.quorum,
                                  cand.votes, (cand.initiator, cand.validator, ccert)))
    block = Block(
        height=height, prev_hash=prev_hash, cycle=cycle, friction=friction, minted=minted,
        rewards=tuple(rewards), entries=tuple(entries), state_root=root,
        cert_root=build_cert_root(entries), constructor_members=cset.members,
        constructor_quorum=cset.quorum,
    )
    bcert = issue_certificate(
        Stage.CONSTRUCTOR, block.header_digest(), signers, cycle,
        proof=root, quorum=cset.quorum, difficulty=difficulty,
    )
    return replace(block, constructor_cert=bcert)


@dataclass
class BlockResult:
    block: Block
    state: ChainState
    finalized: list[Candidate]
    vetoed: list[tuple[Candidate, str]]


def construct_block(
    candidates: Iterable[Candidate],
    prior: ChainState,
    prev: Union[Block, bytes],
    cset: ValidatorSet,
    *,
    cycle: Optional[int] = None,
    friction: float = 1.0,
    minted: int = 0,
    rewards: Sequence[tuple[bytes, int]] = (),
    signers: Optional[Sequence[str]] = None,
) -> BlockResult:
    """Honest constructor path: order, apply with veto, replay-check, certify."""
    if isinstance(prev, Block):
        prev_hash, height = prev.block_hash(), prev.height + 1
    else:
        prev_hash, height = prev, 1
    cycle = cset.cycle if cycle is None else cycle
    body = build_body(prior, candidates, friction, minted, rewards)
    replayed = replay_entries(prior, friction, minted, rewards, [c.tx for c, _ in body.applied])
    if replayed.state_root() != body.state.state_root():
        raise StateRootMismatch(f"replay disagrees at height {height}")
    block = seal_block(
        body, prev_hash=prev_hash, height=height, cycle=cycle, friction=friction,
        minted=minted, rewards=rewards, cset=cset,
        signers=cset.members if signers is None else signers,
    )
    return BlockResult(block, body.state, [c for c, _ in body.applied], body.vetoed)
