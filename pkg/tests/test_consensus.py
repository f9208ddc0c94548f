import pytest
from hypothesis import given, strategies as st

from parax.consensus import (
    Candidate,
    ChainState,
    ValidatorSet,
    Verdict,
    aggregate_votes,
    construct_block,
    quorum_for,
    segment_transaction,
    sign_ballot,
    validate_segment,
    verify_ballot,
    SegmentVote,
)
from parax.errors import ForeignVote, MissingValidatorCert
from parax.ledger import (
    Account,
    Stage,
    canonical_encode,
    create_transaction,
    hash_transaction,
    issue_certificate,
)
from parax.netsim import Fault

from conftest import keys, make_chain, submit

A, B = keys("A", "B")
MEMBERS = ("n0", "n1", "n2", "n3")


def test_quorum_values():
    assert [quorum_for(n) for n in (1, 2, 3, 4, 6, 7, 8)] == [1, 2, 2, 3, 4, 5, 6]


def test_segment_sizes():
    assert [len(s) for s in segment_transaction(bytes(10), 3)] == [4, 3, 3]
    assert segment_transaction(bytes(10), 1) == [bytes(10)]


@given(st.binary(min_size=1, max_size=300), st.integers(1, 8))
def test_segments_concatenate(data, k):
    parts = segment_transaction(data, k)
    assert b"".join(parts) == data and max(map(len, parts)) - min(map(len, parts)) <= 1


def _state(**bal):
    return ChainState.genesis([Account(k.account_id, v) for k, v in ((A, bal.get("A", 0)), (B, bal.get("B", 0)))])


def test_validate_segment_cases():
    state = _state(A=10)
    tx, _ = create_transaction(A, B.account_id, 4, 0)
    assert validate_segment("n0", tx, 0, state, k=2, fee=1).verdict is Verdict.APPROVE
    seg1 = segment_transaction(tx, 2)[1]
    bad = validate_segment("n0", tx, 1, state, k=2, received=bytes([seg1[0] ^ 1]) + seg1[1:])
    assert (bad.verdict, bad.reason) == (Verdict.REJECT, "hash-mismatch")
    over, _ = create_transaction(A, B.account_id, 10, 0)
    v = validate_segment("n0", over, 0, state, k=2, fee=1)
    assert (v.verdict, v.reason) == (Verdict.REJECT, "insufficient-balance")


def _votes(verdicts, tx_hash=b"h"):
    return [SegmentVote(m, tx_hash, 0, Verdict.APPROVE if ok else Verdict.REJECT, None if ok else "x")
            for m, ok in zip(MEMBERS, verdicts)]


def test_aggregate_quorum_arithmetic():
    vset = ValidatorSet(2, 1, MEMBERS)
    assert vset.quorum == 3
    res = aggregate_votes(_votes([1, 1, 1, 0]), vset, subject=b"s")
    assert res.validated and res.certificate.stage is Stage.VALIDATOR
    assert res.certificate.signers == ("n0", "n1", "n2")
    assert aggregate_votes(_votes([1, 1, 1, 1]), vset, subject=b"s").validated
    rej = aggregate_votes(_votes([0, 0, 0, 0]), vset)
    assert not rej.validated and rej.certificate is None and rej.decisive
    # two rejects block approval (2 > 4 - 3); one missing vote does not
    assert aggregate_votes(_votes([1, 1, 0, 0]), vset).decisive
    assert not aggregate_votes(_votes([1, 1, 0]), vset).decisive


def test_aggregate_drops_equivocators():
    vset = ValidatorSet(2, 1, MEMBERS)
    votes = _votes([1, 1, 1, 1]) + [SegmentVote("n3", b"h", 0, Verdict.REJECT, "x")]
    res = aggregate_votes(votes, vset, subject=b"s")
    assert res.equivocators == ("n3",) and res.validated and "n3" not in res.signers
    with pytest.raises(ForeignVote):
        aggregate_votes([SegmentVote("zz", b"h", 0, Verdict.APPROVE)], vset)


def test_ballot_signature():
    votes = sign_ballot(A, "n0", b"h", [SegmentVote("n0", b"h", i, Verdict.APPROVE) for i in range(3)])
    assert verify_ballot(A.public, votes)
    assert not verify_ballot(B.public, votes)
    assert not verify_ballot(A.public, votes[:2])


def _candidate(tx, order, with_cert=True):
    h = hash_transaction(tx)
    init = issue_certificate(Stage.INITIATOR, b"x", ["a"], 1)
    val = issue_certificate(Stage.VALIDATOR, init.cert_hash, MEMBERS[:3], 1, quorum=3) if with_cert else None
    return Candidate(tx, h, 2, order, init, val, MEMBERS, 3)


def test_construct_block_hand_ledger():
    state = _state(A=10)
    cset = ValidatorSet(0, 1, MEMBERS)
    empty = construct_block([], state, b"\x00" * 32, cset)
    assert empty.block.entries == () and empty.block.state_root == state.state_root()
    tx, _ = create_transaction(A, B.account_id, 4, 0)
    res = construct_block([_candidate(tx, (1, 0))], state, b"\x00" * 32, cset, friction=1.0)
    s = res.state
    assert (s.balance(A.account_id), s.balance(B.account_id), s.pool) == (5, 4, 1)
    assert s.conserved() and state.balance(A.account_id) == 10


def test_construct_block_double_spend_veto():
    state = _state(A=10)
    cset = ValidatorSet(0, 1, MEMBERS)
    t1, _ = create_transaction(A, B.account_id, 6, 0)
    t2, _ = create_transaction(A, B.account_id, 6, 1)
    res = construct_block([_candidate(t2, (1, 1)), _candidate(t1, (1, 0))], state, b"\x00" * 32, cset)
    assert [c.tx for c in res.finalized] == [t1]
    assert [(c.tx, r) for c, r in res.vetoed] == [(t2, "insufficient-balance")]
    with pytest.raises(MissingValidatorCert):
        construct_block([_candidate(t1, (1, 0), with_cert=False)], state, b"\x00" * 32, cset)


def test_run_cycle_end_to_end():
    chain = make_chain(4, {A.account_id: 1000})
    rep = chain.run_cycle()
    assert (rep.finalized, rep.rejected) == (0, 0) and chain.height == 1
    tx = submit(chain, A, B.account_id, 100)
    rep = chain.run_cycle()
    h = hash_transaction(tx)
    assert rep.finalized == 1 and chain.outcomes[h].status == "Finalized"
    init, val, con = chain.certificates_for(h)
    assert [c.stage for c in (init, val, con)] == [Stage.INITIATOR, Stage.VALIDATOR, Stage.CONSTRUCTOR]
    assert val.subject == init.cert_hash and con.subject == val.cert_hash
    assert chain.state.balance(B.account_id) == 100


def test_faulty_majority_in_group_never_finalizes_invalid():
    chain = make_chain(4, {A.account_id: 1000}, relay_bound=1)
    for n in ("n0", "n1"):
        chain.net.inject_fault(n, Fault.CRASH)
    submit(chain, A, B.account_id, 100)
    for _ in range(4):
        chain.run_cycle()
    assert all(o.status != "Finalized" for o in chain.outcomes.values())
    assert chain.state.balance(B.account_id) == 0 and chain.state.conserved()


def test_canonical_bytes_segmented_for_votes():
    tx, _ = create_transaction(A, B.account_id, 1, 0)
    assert b"".join(segment_transaction(tx, 4)) == canonical_encode(tx)
