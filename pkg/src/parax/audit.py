"""Full replay audit of exported blocks: hash links, signatures, the three-stage
certificate chain, vote quorums, fees, state and certificate roots, conservation."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .blockio import Genesis, read_blockfile
from .consensus import (
    Block,
    ChainState,
    Verdict,
    build_cert_root,
    quorum_for,
    segment_count,
    verify_ballot,
    vote_evidence,
)
from .errors import CorruptOutput
from .ledger import Stage, digest, hash_transaction, initiator_matches, verify_signature
from .sharding import classify_group


@dataclass
class Violation:
    chain: str
    height: int
    cycle: int
    message: str


@dataclass
class AuditResult:
    passed: bool
    blocks: int = 0
    transactions: int = 0
    violation: Optional[Violation] = None
    final_hashes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def line(self) -> str:
        if self.passed:
            return f"audit pass: {self.blocks} blocks, {self.transactions} transactions"
        v = self.violation
        cycle = "?" if v.cycle < 0 else v.cycle
        return f"audit FAIL: chain {v.chain} height {v.height} cycle {cycle}: {v.message}"


class _Fail(Exception):
    pass


def _check(cond: bool, msg: str):
    if not cond:
        raise _Fail(msg)


def _check_entry(state: ChainState, block: Block, e, signers: tuple[str, ...], pubs: Mapping[str, bytes]):
    tx = e.tx
    tx_hash = hash_transaction(tx)
    h = tx_hash.hex()[:16]
    _check(verify_signature(tx), f"bad signature on {h}")
    _check(tx.hash_data == digest(tx.payload), f"hash_data mismatch on {h}")
    _check(e.group == classify_group(tx, state.is_contract), f"wrong group on {h}")
    init, val, con = e.certs
    _check(all(c.is_intact() for c in e.certs), f"certificate hash mismatch on {h}")
    _check(initiator_matches(tx, init), f"initiator certificate does not cover {h}")
    _check(val.stage is Stage.VALIDATOR and val.subject == init.cert_hash,
           f"validator certificate not chained on {h}")
    _check(con.stage is Stage.CONSTRUCTOR and con.subject == val.cert_hash,
           f"constructor certificate not chained on {h}")

    committee = set(e.committee)
    _check(len(committee) == len(e.committee) and e.quorum >= quorum_for(len(committee))
           and e.quorum <= len(committee), f"bad committee quorum on {h}")
    _check(set(val.signers) <= committee and len(val.signers) >= e.quorum,
           f"validator certificate below quorum on {h}")
    k = segment_count(len(e.committee))
    by_voter = defaultdict(list)
    for v in e.votes:
        _check(v.voter in committee and 0 <= v.segment_index < k, f"foreign vote on {h}")
        by_voter[v.voter].append(v)
    for voter, vs in by_voter.items():
        _check(voter in pubs and verify_ballot(pubs[voter], vs), f"bad ballot from {voter} on {h}")
    approvals = [0] * k
    approvers = set()
    for v in e.votes:
        if v.verdict is Verdict.APPROVE:
            approvals[v.segment_index] += 1
            approvers.add(v.voter)
    _check(all(a >= e.quorum for a in approvals), f"segment below quorum on {h}")
    _check(approvers == set(val.signers), f"validator signers differ from approvers on {h}")
    _check(val.proof == vote_evidence(e.votes), f"vote evidence mismatch on {h}")
    _check(con.signers == signers and con.proof == digest(block.state_root + tx_hash),
           f"constructor certificate inconsistent on {h}")
    fee = state.fee_for(tx, block.friction)
    _check(e.fee == fee, f"fee {e.fee} differs from rule {fee} on {h}")
    reason = state.apply_transaction(tx, fee)
    _check(reason is None, f"invalid transaction {h}: {reason}")


def audit_chain(genesis: Genesis, blocks: list[Block]) -> tuple[Optional[Violation], str, int]:
    """Replay one chain from genesis; returns (first violation, head hash, tx count)."""
    state = ChainState.genesis(genesis.accounts)
    pubs = dict(genesis.nodes)
    prev = genesis.hash()
    last_cycle = 0
    txs = 0
    for i, b in enumerate(blocks):
        try:
            _check(b.height == i + 1, f"height {b.height} out of sequence")
            _check(b.prev_hash == prev, "prev_hash does not link")
            _check(b.cycle > last_cycle, "cycle not increasing")
            bc = b.constructor_cert
            members = set(b.constructor_members)
            _check(bc is not None and bc.is_intact(), "block certificate missing or altered")
            _check(bc.stage is Stage.CONSTRUCTOR and bc.subject == b.header_digest()
                   and bc.proof == b.state_root, "block certificate does not cover header")
            _check(b.constructor_quorum >= quorum_for(len(members))
                   and set(bc.signers) <= members and len(bc.signers) >= b.constructor_quorum,
                   "constructor quorum not met")
            _check(all(r[1] > 0 for r in b.rewards), "zero reward entry")
            _check(sum(a for _, a in b.rewards) <= state.pool + b.minted, "rewards exceed pool")
            state.apply_prologue(b.minted, b.rewards)
            for e in b.entries:
                _check_entry(state, b, e, bc.signers, pubs)
                txs += 1
            _check(build_cert_root(b.entries) == b.cert_root, "cert_root mismatch")
            _check(state.state_root() == b.state_root, "state_root mismatch")
            _check(state.conserved(), "conservation violated")
        except _Fail as exc:
            return Violation(genesis.chain_id, b.height if b.height else i + 1, b.cycle, str(exc)), prev.hex(), txs
        prev = b.block_hash()
        last_cycle = b.cycle
    return None, prev.hex(), txs


def audit_bytes(data: bytes, expected_heads: Optional[Mapping[str, str]] = None) -> AuditResult:
    try:
        chains = read_blockfile(data)
    except CorruptOutput as exc:
        return AuditResult(False, violation=Violation(exc.chain or "?", exc.height or 0, -1, str(exc)))
    result = AuditResult(True)
    for cid in sorted(chains):
        genesis, blocks = chains[cid]
        violation, head, txs = audit_chain(genesis, blocks)
        result.blocks += len(blocks)
        result.transactions += txs
        result.final_hashes[cid] = head
        if violation is not None:
            result.passed = False
            result.violation = violation
            return result
        if expected_heads is not None and expected_heads.get(cid) != head:
            result.passed = False
            result.violation = Violation(cid, len(blocks), blocks[-1].cycle if blocks else 0,
                                         "final block hash differs from report")
            return result
    if expected_heads is not None and set(expected_heads) != set(chains):
        result.passed = False
        result.violation = Violation(",".join(sorted(set(expected_heads) ^ set(chains))), 0, 0,
                                     "chain set differs from report")
    return result


def audit_dir(out_dir: str | Path) -> AuditResult:
    out = Path(out_dir)
    blocks_path = out / "blocks.bin"
    report_path = out / "report.json"
    if not blocks_path.exists():
        return AuditResult(False, violation=Violation("?", 0, 0, "blocks.bin missing"))
    heads = None
    if report_path.exists():
        try:
            report = json.loads(report_path.read_text())
            heads = {cid: c["final_block_hash"] for cid, c in report["chains"].items()}
        except (ValueError, KeyError, TypeError) as exc:
            return AuditResult(False, violation=Violation("?", 0, 0, f"unreadable report.json: {exc}"))
    return audit_bytes(blocks_path.read_bytes(), heads)
