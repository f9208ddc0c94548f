import pytest
from hypothesis import settings

from parax.chain import Chain, ChainParams
from parax.ledger import KeyPair, create_transaction
from parax.netsim import NodeProfile

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def keys(*names):
    return [KeyPair.from_seed(f"test|{n}") for n in names]


def make_chain(n_nodes=4, balances=None, contracts=(), **params):
    """A small honest chain whose nodes are named n0..n{k-1}."""
    p = ChainParams(**params)
    nodes = [NodeProfile(f"n{i}") for i in range(n_nodes)]
    return Chain(p, nodes, balances or {}, contracts)


def submit(chain, key, to, value, payload=b""):
    tx, cert = create_transaction(key, to, value, chain.dag.expected_nonce(key.account_id),
                                  payload, cycle=chain.cycle)
    chain.submit(tx, cert)
    return tx


@pytest.fixture
def alice_bob():
    return keys("alice", "bob")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
