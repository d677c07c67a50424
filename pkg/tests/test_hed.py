import threading
import time

import pytest

from chelonia.errors import DuplicateName, NotSimulationTransport, QueueFull, TrustDenied, UnknownTarget
from chelonia.hed import (
    LAN,
    WAN,
    Network,
    RealtimeScheduler,
    Service,
    ServiceEndpoint,
    Simulator,
    WorkerPool,
    WorkerPoolConfig,
    current_caller,
    rpc,
)
from chelonia.hed.sockets import SocketServer, SocketTransport


class Echo(Service):
    def __init__(self, hold: float = 0.0):
        self.hold = hold

    @rpc(public=True)
    def echo(self, value=None):
        self.clock.advance(self.hold)
        return value

    @rpc
    def whoami(self):
        return current_caller()


def echo_network(**kwargs):
    net = Network(Simulator(), seed=1, **kwargs)
    host = net.add_host("h1")
    ep = host.register_service("Echo", Echo(), "CN=echo", trusted=["CN=friend"])
    return net, host, ep


def test_register_returns_sim_endpoint():
    net = Network(Simulator())
    ep = net.add_host("host1").register_service("Bartender", Echo(), "CN=bart")
    assert ep == ServiceEndpoint("sim://host1/Bartender", "CN=bart")
    assert (ep.scheme, ep.host, ep.service) == ("sim", "host1", "Bartender")


def test_register_twice_is_duplicate():
    net = Network(Simulator())
    host = net.add_host("h")
    host.register_service("Echo", Echo(), "CN=a")
    with pytest.raises(DuplicateName):
        host.register_service("Echo", Echo(), "CN=a")


def test_four_services_distinct_endpoints():
    net = Network(Simulator())
    host = net.add_host("h")
    eps = {host.register_service(n, Echo(), f"CN={n}") for n in ("AHash", "Librarian", "Shepherd", "Bartender")}
    assert len(eps) == 4


def test_call_counts_two_messages():
    net, _, ep = echo_network()
    assert net.request("CN=x", ep, "echo", {"value": [1, "two"]}) == [1, "two"]
    assert net.stats.message_count == 2


def test_unknown_target():
    net, _, _ = echo_network()
    with pytest.raises(UnknownTarget):
        net.request("CN=x", ServiceEndpoint("sim://nowhere/Echo", "CN=e"), "echo")
    with pytest.raises(UnknownTarget):
        net.request("CN=x", ServiceEndpoint("sim://h1/Missing", "CN=e"), "echo")


def test_trust_list_gates_internal_operations():
    net, host, ep = echo_network()
    assert host.check_trust("CN=friend", ep)
    assert not host.check_trust("CN=rogue", ep)
    assert net.request("CN=friend", ep, "whoami") == "CN=friend"
    with pytest.raises(TrustDenied):
        net.request("CN=rogue", ep, "whoami")
    host.set_trusted("Echo", [])
    with pytest.raises(TrustDenied):
        net.request("CN=friend", ep, "whoami")
    # public operations skip the trust list
    assert net.request("CN=rogue", ep, "echo", {"value": 1}) == 1


def test_untrusted_handler_never_runs():
    ran = []

    def handler(op, args, env):
        ran.append(op)
        return "ok"

    net = Network(Simulator())
    ep = net.add_host("h").register_service("Raw", handler, "CN=raw", trusted=["CN=ok"])
    with pytest.raises(TrustDenied):
        net.request("CN=bad", ep, "anything")
    assert ran == []
    assert net.request("CN=ok", ep, "anything") == "ok"


def test_latency_delay_per_message():
    net, _, ep = echo_network()
    net.set_simulated_network(latency=0.01, bandwidth=None)
    net.request("CN=x", ep, "echo")
    assert net.clock.now == pytest.approx(0.02)


def test_bandwidth_delay():
    net = Network(Simulator())
    net.set_simulated_network(latency=0.0, bandwidth=1e6)
    assert net.message_delay(1_000_000) == pytest.approx(1.0)


def test_profiles_change_time_not_counts():
    results = []
    for profile in (LAN, WAN):
        net, _, ep = echo_network()
        net.set_simulated_network(**profile)
        for i in range(5):
            net.request("CN=x", ep, "echo", {"value": "x" * 100 * i})
        results.append((net.stats.message_count, net.stats.bytes_sent, net.clock.now))
    (lan_msgs, lan_bytes, lan_t), (wan_msgs, wan_bytes, wan_t) = results
    assert (lan_msgs, lan_bytes) == (wan_msgs, wan_bytes)
    assert wan_t > lan_t


def test_simulated_network_needs_simulation():
    net = Network(RealtimeScheduler())
    with pytest.raises(NotSimulationTransport):
        net.set_simulated_network(0.01, None)


def test_same_seed_same_stats():
    def run(seed):
        net = Network(Simulator(), seed=seed)
        net.set_simulated_network(**LAN)
        ep = net.add_host("h").register_service("Echo", Echo(), "CN=e")
        for _ in range(20):
            net.request("CN=x", ep, "echo", {"value": net.rng.randbytes(net.rng.randint(0, 50))})
        return net.stats, net.clock.now

    assert run(3) == run(3)


def test_virtual_pool_queues_fifo_beyond_threshold():
    net = Network(Simulator())
    ep = net.add_host("h", WorkerPoolConfig(max_concurrent=2, queue_capacity=10)).register_service(
        "Echo", Echo(hold=1.0), "CN=e")
    done = {}
    for i in range(3):
        net.submit(net.envelope("CN=x", ep, "echo", {"value": i}), lambda r, e: done.setdefault(r, net.clock.now))
    net.clock.run()
    assert done[0] == done[1] == pytest.approx(1.0)
    assert done[2] == pytest.approx(2.0)


def test_virtual_pool_rejects_when_queue_full():
    net = Network(Simulator())
    ep = net.add_host("h", WorkerPoolConfig(max_concurrent=1, queue_capacity=1)).register_service(
        "Echo", Echo(hold=1.0), "CN=e")
    errors = []
    for i in range(3):
        net.submit(net.envelope("CN=x", ep, "echo", {"value": i}), lambda r, e: errors.append(e))
    net.clock.run()
    assert sum(isinstance(e, QueueFull) for e in errors) == 1


def test_thread_pool_third_call_waits():
    pool = WorkerPool(WorkerPoolConfig(max_concurrent=2, queue_capacity=5))
    release = threading.Event()
    order = []

    def worker(i):
        with pool.slot():
            order.append(("start", i))
            if i < 2:
                release.wait(5)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(2)]
    for t in threads:
        t.start()
    while pool.active < 2:
        time.sleep(0.001)
    third = threading.Thread(target=worker, args=(2,))
    third.start()
    time.sleep(0.05)
    assert ("start", 2) not in order
    assert pool.queued == 1
    release.set()
    for t in threads + [third]:
        t.join(5)
    assert order[-1] == ("start", 2)


def test_simulator_orders_events_and_periodic():
    sim = Simulator()
    seen = []
    sim.at(2.0, seen.append, "b")
    sim.at(1.0, seen.append, "a")
    handle = sim.every(1.5, lambda: seen.append(round(sim.now, 3)))
    sim.run_until(3.5)
    handle.cancel()
    sim.run_until(10)
    assert seen == [0.0, "a", 1.5, "b", 3.0]


def test_socket_transport_round_trip():
    server_net = Network(RealtimeScheduler())
    host = server_net.add_host("srv")
    host.register_service("Echo", Echo(), "CN=echo", trusted=["CN=friend"])
    server = SocketServer(host, secrets={"CN=friend": "s3cret"}).start()
    try:
        client_net = Network(RealtimeScheduler())
        transport = SocketTransport(client_net, secrets={"CN=friend": "s3cret"})
        client_net.remotes["tcp"] = transport
        ep = ServiceEndpoint(f"tcp://{server.authority}/Echo", "CN=echo")
        assert client_net.request("CN=friend", ep, "echo", {"value": b"\x00bytes"}) == b"\x00bytes"
        assert client_net.request("CN=friend", ep, "whoami") == "CN=friend"
        assert client_net.stats.message_count == 4
        with pytest.raises(TrustDenied):
            client_net.request("CN=mallory", ep, "echo", {"value": 1})
        transport.close()
    finally:
        server.stop()
