import pytest

from parax.errors import DuplicateNode, UnknownNode
from parax.netsim import EventKind, Fault, Network, NodeClass, NodeProfile


def servers(net, n):
    for i in range(n):
        net.spawn_node(NodeProfile(f"s{i}"))


def test_spawn_and_duplicate():
    net = Network(0)
    servers(net, 8)
    assert len(net.active_nodes()) == 8
    with pytest.raises(DuplicateNode):
        net.spawn_node(NodeProfile("s0"))
    with pytest.raises(UnknownNode):
        net.inject_fault("nope", Fault.CRASH)


def test_mobile_availability_bernoulli():
    net = Network(3, keep_transcript=False)
    net.spawn_node(NodeProfile("m", NodeClass.MOBILE, availability=0.5))
    up = 0
    for c in range(1, 1001):
        net.run_until(cycle=c)
        up += net.is_up("m")
    sigma = (1000 * 0.25) ** 0.5
    assert abs(up - 500) <= 3 * sigma


def test_drop_probabilities():
    for p, want in ((0.0, 100), (1.0, 0)):
        net = Network(1, drop_prob=p)
        servers(net, 2)
        delivered = []
        net.on_deliver = delivered.append
        for _ in range(100):
            net.send("s0", "s1", "ping")
        net.run_until(time=100)
        assert len(delivered) == want


def test_latency_without_jitter():
    net = Network(1, base_latency_ms=10)
    servers(net, 2)
    net.run_until(time=37)
    msgs = [net.send("s0", "s1", "ping") for _ in range(5)]
    assert all(m.arrives_at == 47 for m in msgs)
    times = []
    net.on_deliver = lambda m: times.append(net.now)
    net.run_until(time=100)
    assert times == [47] * 5


def _transcript(seed):
    net = Network(seed, jitter_ms=30, drop_prob=0.2)
    servers(net, 3)
    net.spawn_node(NodeProfile("m", NodeClass.MOBILE, availability=0.6))
    net.on_cycle.append(lambda c, now: [net.send(None, n, "tx") for n in ("s0", "s1", "m")])
    net.run_until(cycle=20)
    return net.transcript


def test_transcripts_are_deterministic():
    assert _transcript(5) == _transcript(5)
    assert _transcript(5) != _transcript(6)


def test_run_until_cycle_counts_ticks():
    net = Network(0)
    servers(net, 1)
    rep = net.run_until(cycle=10)
    assert rep.ticks == 10 and net.cycle == 10
    assert sum(1 for line in net.transcript if EventKind.CYCLE_TICK.value in line) == 10


def test_step_on_empty_queue_is_noop():
    net = Network(0)
    net._started = True
    assert net.step() is None and net.now == 0


def test_fault_windows_toggle():
    net = Network(0, cycle_ms=100)
    servers(net, 1)
    net.inject_fault("s0", Fault.TAMPER, from_cycle=3, to_cycle=4)
    seen = {}
    net.on_cycle.append(lambda c, now: seen.setdefault(c, net.fault_of("s0")))
    net.run_until(cycle=6)
    assert [seen[c] for c in range(1, 7)] == [Fault.HONEST] * 2 + [Fault.TAMPER] * 2 + [Fault.HONEST] * 2
