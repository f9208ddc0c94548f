import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from parax.errors import InsufficientNodes
from parax.ledger import PAYLOAD_CALL, PAYLOAD_RECEIPT, SignedTransaction
from parax.sharding import (
    KEY_SPACE,
    apply_plan,
    assign_groups,
    classify_group,
    make_shard_map,
    rebalance,
    select_validators,
    shard_for_key,
)

NODES = [f"n{i}" for i in range(8)]
CONTRACT = b"C" * 32


def _is_contract(acct):
    return acct == CONTRACT


def test_classify_groups():
    assert classify_group(SignedTransaction(b"a", CONTRACT, 1, 0), _is_contract) == 1
    assert classify_group(SignedTransaction(b"a", b"b", 1, 0), _is_contract) == 2
    assert classify_group(SignedTransaction(b"a", b"b", 0, 0, bytes([PAYLOAD_RECEIPT])), _is_contract) == 3
    assert classify_group(SignedTransaction(b"a", b"b", 0, 0, bytes([PAYLOAD_CALL, 1])), _is_contract) == 4


@given(st.binary(max_size=8), st.binary(max_size=20))
def test_classify_total_and_stable(to, payload):
    tx = SignedTransaction(b"a", to, 0, 0, payload)
    g = classify_group(tx, _is_contract)
    assert g in (1, 2, 3, 4) and g == classify_group(tx, _is_contract)


def _oracle_rank(seed, epoch, tag, node):
    def text(s):
        b = s.encode()
        return struct.pack(">I", len(b)) + b
    return hashlib.sha256(struct.pack(">QQ", seed, epoch) + text(tag) + text(node)).digest()


def test_selection_matches_brute_force_ranking():
    ranked = sorted(NODES, key=lambda n: _oracle_rank(1, 7, "G2", n))
    assert select_validators(1, 7, "G2", NODES, 3) == tuple(ranked[:3])
    assert select_validators(1, 7, "G2", NODES, 8) == tuple(ranked)


def test_selection_errors():
    with pytest.raises(InsufficientNodes):
        select_validators(1, 1, "G1", [], 1)
    with pytest.raises(InsufficientNodes):
        select_validators(1, 1, "G1", NODES, 9)


def test_selection_redraw_epoch():
    a = select_validators(3, 4, "G1", NODES, 2, redraw_every=4)
    assert a == select_validators(3, 7, "G1", NODES, 2, redraw_every=4)


def test_selection_fairness():
    counts = dict.fromkeys(NODES, 0)
    for c in range(10_000):
        for n in select_validators(0, c, "G2", NODES, 2):
            counts[n] += 1
    assert all(abs(v - 2500) <= 130 for v in counts.values()), counts
    assert chisquare(list(counts.values())).pvalue > 0.001


def test_assign_groups_disjoint():
    ga = assign_groups(2, 5, NODES, ["G1", "G2", "G3"], 3)
    assert list(ga.group_map) == ["G1", "G2"] and ga.unstaffed == ["G3"]
    a, b = ga.group_map.values()
    assert not set(a) & set(b)


def test_shard_for_key_edges_and_uniformity():
    smap = make_shard_map(0, 8, NODES, 2)
    assert shard_for_key(b"\x00" * 32, smap) == 0
    assert shard_for_key(b"\xff" * 32, smap) == smap.count - 1
    rng = np.random.default_rng(4)
    counts = np.zeros(8)
    for _ in range(1000):
        counts[shard_for_key(rng.bytes(32), smap)] += 1
    assert np.all(np.abs(counts - 125) <= 25), counts


def test_rebalance_deterministic_and_keeps_replication():
    nodes = NODES[:4]
    smap = make_shard_map(9, 4, nodes, 2)
    new1, plan1 = rebalance(9, 16, smap, nodes)
    new2, plan2 = rebalance(9, 16, smap, nodes)
    assert new1 == new2 and plan1 == plan2
    applied = apply_plan(smap, plan1)
    assert applied == new1 and applied.is_valid()
    assert all(len(h) == 2 for h in applied.shard_homes)


def test_home_counts_balanced():
    # each of 8 nodes homes Binomial(256, 2/8) shards; allow 3 sigma
    smap = make_shard_map(1, 256, NODES, 2)
    sigma = (256 * 0.25 * 0.75) ** 0.5
    for n in NODES:
        assert abs(len(smap.shards_of(n)) - 64) <= 3 * sigma
    assert smap.lows[0] == 0 and smap.lows[-1] < KEY_SPACE
