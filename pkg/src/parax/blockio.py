"""Binary export of genesis records and blocks (length-prefixed records)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .consensus import Block, BlockEntry, SegmentVote, Verdict, encode_entry
from .errors import CorruptOutput, DecodeError
from .ledger import (
    Account,
    Reader,
    Writer,
    digest,
    hash_transaction,
    read_certificate,
    read_transaction,
    write_certificate,
)

MAGIC = b"PARAXBLK"
VERSION = 1
REC_GENESIS = 0
REC_BLOCK = 1


@dataclass(frozen=True)
class Genesis:
    chain_id: str
    seed: int
    accounts: tuple[Account, ...]  # sorted by id
    nodes: tuple[tuple[str, bytes], ...]  # (node id, raw public key)

    def encode(self) -> bytes:
        w = Writer().text(self.chain_id).u64(self.seed).u32(len(self.accounts))
        for a in self.accounts:
            w.blob(a.id).u64(a.balance).u64(a.nonce).u8(int(a.is_contract)).u8(int(a.governance_flag))
        w.u32(len(self.nodes))
        for nid, pub in self.nodes:
            w.text(nid).blob(pub)
        return w.getvalue()

    def hash(self) -> bytes:
        return digest(b"genesis|" + self.encode())

    @property
    def initial_supply(self) -> int:
        return sum(a.balance for a in self.accounts)


def read_genesis(r: Reader) -> Genesis:
    chain_id = r.text()
    seed = r.u64()
    accounts = []
    for _ in range(r.u32()):
        aid = r.blob()
        bal, nonce = r.u64(), r.u64()
        accounts.append(Account(aid, bal, nonce, bool(r.u8()), bool(r.u8())))
    nodes = tuple((r.text(), r.blob()) for _ in range(r.u32()))
    return Genesis(chain_id, seed, tuple(accounts), nodes)


def encode_block(b: Block) -> bytes:
    w = Writer().u64(b.height).blob(b.prev_hash).u64(b.cycle).f64(b.friction).u64(b.minted)
    w.u32(len(b.rewards))
    for acct, amount in b.rewards:
        w.blob(acct).u64(amount)
    w.u32(len(b.entries))
    for e in b.entries:
        encode_entry(w, e)
    w.blob(b.state_root).blob(b.cert_root).u32(len(b.constructor_members))
    for m in b.constructor_members:
        w.text(m)
    w.u32(b.constructor_quorum)
    if b.constructor_cert is None:
        w.u8(0)
    else:
        w.u8(1)
        write_certificate(w, b.constructor_cert)
    return w.getvalue()


def _read_entry(r: Reader) -> BlockEntry:
    tx = read_transaction(r)
    tx_hash = hash_transaction(tx)
    group, fee = r.u8(), r.u64()
    committee = tuple(r.text() for _ in range(r.u32()))
    quorum = r.u32()
    votes = []
    for _ in range(r.u32()):
        voter, idx, ok = r.text(), r.u32(), r.u8()
        reason, sig = r.text(), r.blob()
        votes.append(SegmentVote(voter, tx_hash, idx, Verdict.APPROVE if ok else Verdict.REJECT,
                                 reason or None, sig))
    certs = (read_certificate(r), read_certificate(r), read_certificate(r))
    if not 1 <= group <= 4:
        raise DecodeError(f"bad group {group}")
    return BlockEntry(tx, group, fee, committee, quorum, tuple(votes), certs)


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    height, prev, cycle, friction, minted = r.u64(), r.blob(), r.u64(), r.f64(), r.u64()
    rewards = tuple((r.blob(), r.u64()) for _ in range(r.u32()))
    entries = tuple(_read_entry(r) for _ in range(r.u32()))
    state_root, cert_root = r.blob(), r.blob()
    members = tuple(r.text() for _ in range(r.u32()))
    quorum = r.u32()
    cert = read_certificate(r) if r.u8() else None
    r.expect_end()
    return Block(height, prev, cycle, friction, minted, rewards, entries, state_root,
                 cert_root, members, quorum, cert)


def write_blockfile(chains: Iterable[tuple[Genesis, list[Block]]]) -> bytes:
    w = Writer().raw(MAGIC).u32(VERSION)
    for genesis, blocks in chains:
        w.u8(REC_GENESIS).blob(genesis.encode())
        for b in blocks:
            w.u8(REC_BLOCK).text(genesis.chain_id).blob(encode_block(b))
    return w.getvalue()


def read_blockfile(data: bytes) -> dict[str, tuple[Genesis, list[Block]]]:
    """Parse an exported block file; any framing or decoding failure raises
    CorruptOutput naming the chain and the height that follows the last good block."""
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptOutput("bad magic", height=0)
    r = Reader(data)
    r.pos = len(MAGIC)
    out: dict[str, tuple[Genesis, list[Block]]] = {}
    chain = None
    try:
        if r.u32() != VERSION:
            raise CorruptOutput("unsupported version", height=0)
        while not r.done():
            kind = r.u8()
            if kind == REC_GENESIS:
                g = read_genesis(Reader(r.blob()))
                chain = g.chain_id
                out[chain] = (g, [])
            elif kind == REC_BLOCK:
                chain = r.text()
                if chain not in out:
                    raise CorruptOutput("block before genesis", height=0, chain=chain)
                out[chain][1].append(decode_block(r.blob()))
            else:
                raise DecodeError(f"unknown record kind {kind}")
    except (DecodeError, ValueError, UnicodeDecodeError) as exc:
        height = len(out[chain][1]) + 1 if chain in out else 0
        raise CorruptOutput(f"undecodable record: {exc}", height=height, chain=chain) from None
    return out
