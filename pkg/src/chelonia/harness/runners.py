"""Experiment runners.  Each returns a :class:`ScenarioResult` with CSV tables
and named checks; all assertions are over virtual time, message counts,
payload bytes and replica state counts.
"""

from __future__ import annotations

import logging
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field

from .. import codec
from ..ahash import MASTER, AHashConfig
from ..ahash.client import AHashClient
from ..ahash.store import change
from ..errors import QueueFull, ServiceError, TransportFailure
from ..hed import LAN, WAN, WorkerPoolConfig
from ..hed.service import Service
from ..metadata import ALIVE, CREATING, OFFLINE, REPLICA_STATES, THIRDWHEEL
from .deployment import Deployment, Topology
from .fsck import fsck
from .result import ScenarioResult, exact_line
from .scenario import Driver, Event, Scenario, load_scenario

log = logging.getLogger(__name__)

PROFILES = {"lan": LAN, "wan": WAN}


def _measure(d: Deployment, fn):
    """Run ``fn`` synchronously; returns (result, messages, bytes, virtual seconds)."""
    before, t0 = d.network.stats.snapshot(), d.clock.now
    result = fn()
    delta = d.network.stats - before
    return result, delta.message_count, delta.bytes_sent, d.clock.now - t0


# -- depth ----------------------------------------------------------------------
def run_depth_test(levels: int = 100, profiles=(("lan", 1), ("wan", 1), ("wan", 3)),
                   seed: int = 0) -> ScenarioResult:
    res = ScenarioResult("depth", seed)
    rows, per = [], {}
    for profile, replicas in profiles:
        tag = f"{profile}:{replicas}"
        net = PROFILES[profile]
        d = Deployment(Topology(ahash=replicas, latency=net["latency"], bandwidth=net["bandwidth"],
                                periodic=False), seed).start()
        c = d.client()
        ln, series = "", []
        for depth in range(1, levels + 1):
            ln += f"/d{depth:03d}"
            _, cm, cb, ct = _measure(d, lambda: c.mkdir(ln))
            _, sm, sb, st = _measure(d, lambda: c.stat(ln))
            row = {"profile": tag, "depth": depth, "createMessages": cm, "statMessages": sm,
                   "createBytes": cb, "statBytes": sb, "createTime": round(ct, 9), "statTime": round(st, 9)}
            rows.append(row)
            series.append(row)
        per[tag] = series
    res.tables["depth"] = rows

    gaps = {}
    for tag, series in per.items():
        depths = [r["depth"] for r in series]
        fit = exact_line(depths, [r["statMessages"] for r in series])
        ok = fit is not None and fit[2] == 0
        res.check(f"stat-linear[{tag}]", ok, f"stat = {fit[0]} + {fit[1]}*depth, residual {fit[2]}" if fit
                  else "no integer fit")
        diffs = {r["createMessages"] - r["statMessages"] for r in series}
        c = diffs.pop() if len(diffs) == 1 else None
        gaps[tag] = c
        res.check(f"create-gap-constant[{tag}]", c is not None and c >= 1,
                  f"create - stat = {c}" if c is not None else f"varies: {sorted(diffs)}")
    if "lan:1" in per and "wan:1" in per:
        same = [r["createMessages"] for r in per["lan:1"]] == [r["createMessages"] for r in per["wan:1"]] \
            and [r["statMessages"] for r in per["lan:1"]] == [r["statMessages"] for r in per["wan:1"]]
        slower = all(w["statTime"] > lan["statTime"] for lan, w in zip(per["lan:1"], per["wan:1"]))
        res.check("profile-independent-counts", same and slower,
                  "LAN and WAN counts identical, WAN slower" if same and slower else "profiles disagree")
    for tag, c in gaps.items():
        profile, replicas = tag.split(":")
        base = gaps.get(f"{profile}:1")
        if int(replicas) > 1 and base is not None and c is not None:
            want = base + 2 * (int(replicas) - 1)
            res.check(f"replication-round[{tag}]", c == want,
                      f"create - stat = {c}, single replica {base}, expected {want}")
    res.summary = {"gap": gaps}
    return res


# -- width ----------------------------------------------------------------------
def run_width_test(entries: int = 1000, seed: int = 0, profile: str = "lan") -> ScenarioResult:
    res = ScenarioResult("width", seed)
    net = PROFILES[profile]
    d = Deployment(Topology(latency=net["latency"], bandwidth=net["bandwidth"], periodic=False), seed).start()
    c = d.client()
    c.mkdir("/w")
    bartender = d.endpoints[d.bartender_ids[0]]
    rows = []
    for n in range(entries + 1):
        env = d.network.envelope(c.dn, bartender, "stat", {"ln": "/w"})
        reply, sm, sb, st = _measure(d, lambda: d.network.call_raw(env))
        codec.decode(reply)
        name = f"/w/c{n:04d}"
        _, am, ab, at = _measure(d, lambda: c.mkdir(name))
        rows.append({"n": n, "addMessages": am, "addBytes": ab, "statBytes": len(reply), "statMessages": sm,
                     "statTotalBytes": sb, "addTime": round(at, 9), "statTime": round(st, 9)})
    res.tables["width"] = rows

    ns = [r["n"] for r in rows]
    fit = exact_line(ns, [r["statBytes"] for r in rows])
    res.check("stat-bytes-linear", fit is not None and fit[2] == 0,
              f"statBytes = {fit[0]} + {fit[1]}*n, residual {fit[2]}" if fit else "no integer fit")
    add_fit = exact_line(ns, [r["addBytes"] for r in rows])
    stat_fit = exact_line(ns, [r["statTotalBytes"] for r in rows])
    faster = [r["addBytes"] < r["statTotalBytes"] for r in rows]
    cross = faster.index(True) if True in faster else None
    single = cross is not None and cross > 0 and all(faster[cross:]) and not any(faster[:cross])
    res.check("crossover", single,
              f"create moves fewer bytes than stat from n={cross}" if single else f"no single crossover ({cross})")
    res.check("message-counts-flat", len({r["addMessages"] for r in rows}) == 1
              and len({r["statMessages"] for r in rows}) == 1, "counts independent of n")
    res.summary = {"stat_fit": fit, "add_total_fit": add_fit, "stat_total_fit": stat_fit, "crossover": cross}
    return res


# -- multi-client ---------------------------------------------------------------------
MULTI_PROCESSING = {"b": 0.002, "l": 0.001, "a": 0.0005}


def _multi_round(clients: int, threshold: int, ops: int, seed: int, queue_capacity: int,
                 processing: dict, profile: str) -> tuple[list[float], int]:
    net = PROFILES[profile]
    topo = Topology(latency=net["latency"], bandwidth=net["bandwidth"], periodic=False,
                    bartender_pool=WorkerPoolConfig(threshold, queue_capacity), processing_time=dict(processing))
    d = Deployment(topo, seed).start()
    setup = d.client()
    for i in range(clients):
        setup.mkdir(f"/u{i:03d}")
    host = d.bartender_ids[0]
    bartender = d.endpoints[host]
    t0 = d.clock.now + 1.0
    done: dict[int, float] = {}
    retries = Counter()

    def send(i: int, k: int) -> None:
        env = d.network.envelope(setup.dn, bartender, "make_collection", {"ln": f"/u{i:03d}/c{k:03d}"},
                                 origin=f"client{i}")
        d.network.submit(env, lambda result, error: finished(i, k, error), session=f"client{i}")

    def finished(i: int, k: int, error) -> None:
        if isinstance(error, (QueueFull, TransportFailure)):
            retries[i] += 1
            d.clock.schedule(0.5 * 2 ** min(retries[i] - 1, 4), send, i, k)
            return
        if error is not None:
            raise RuntimeError(f"client {i} op {k} failed: {error}")
        if k + 1 < ops:
            send(i, k + 1)
        else:
            done[i] = d.clock.now - t0
            d.network.close_session(host, f"client{i}")

    for i in range(clients):
        d.clock.at(t0, send, i, 0)
    d.clock.run()
    if len(done) != clients:
        raise RuntimeError(f"only {len(done)} of {clients} clients finished")
    return [done[i] for i in range(clients)], sum(retries.values())


def run_multi_client(clients=tuple(range(10, 101, 10)), threshold: int = 30, ops: int = 50, seed: int = 0,
                     queue_capacity: int = 1000, processing: dict | None = None,
                     profile: str = "lan") -> ScenarioResult:
    res = ScenarioResult("multiclient", seed)
    rows = []
    for n in clients:
        times, retries = _multi_round(n, threshold, ops, seed, queue_capacity,
                                      MULTI_PROCESSING if processing is None else processing, profile)
        rows.append({"clients": n, "minTime": round(min(times), 9), "avgTime": round(sum(times) / n, 9),
                     "maxTime": round(max(times), 9), "retries": retries})
    res.tables["multiclient"] = rows
    avgs = [r["avgTime"] for r in rows]
    res.check("avg-monotone", all(b >= a for a, b in zip(avgs, avgs[1:])), f"avg {avgs}")
    over = [r for r in rows if r["clients"] > threshold]
    if len(over) >= 2:
        mins = [r["minTime"] for r in over]
        spread = (max(mins) - min(mins)) / min(mins)
        res.check("min-flat", spread < 0.10, f"min varies {spread:.2%} above T={threshold}")
        maxes = [r["maxTime"] for r in over]
        res.check("max-increasing", all(b > a for a, b in zip(maxes, maxes[1:])), f"max {maxes}")
    res.summary = {"threshold": threshold, "ops": ops}
    return res


# -- A-Hash bench ---------------------------------------------------------------------
BENCH_MODES = ("centralized", "replicated-stable", "replicated-unstable-clients", "replicated-unstable-master")
BENCH_DN = "CN=bench"


class _Probe(Service):
    """Outbound-only service for the bench client; remembers the cost of its last call."""

    def __init__(self):
        self.last: tuple[str, int] | None = None

    def call(self, target, operation: str, **args):
        before = self.network.stats.message_count
        self.last = None
        result = super().call(target, operation, **args)
        self.last = (operation, self.network.stats.message_count - before)
        return result


@dataclass
class _BenchOp:
    kind: str
    started: float
    finished: float = 0.0
    messages: int = 0
    overhead: int = 0
    attempts: int = 0


@dataclass
class BenchRun:
    mode: str
    ops: list[_BenchOp] = field(default_factory=list)
    verified: dict[str, str] = field(default_factory=dict)
    lost: list[str] = field(default_factory=list)
    elections: list[dict] = field(default_factory=list)
    kills: list[float] = field(default_factory=list)

    def stats(self, kind: str) -> dict:
        ops = [o for o in self.ops if o.kind == kind]
        lat = [o.finished - o.started for o in ops]
        msgs = Counter(o.messages for o in ops)
        return {"mode": self.mode, "op": kind, "count": len(ops),
                "min": round(min(lat), 9) if lat else 0.0, "avg": round(sum(lat) / len(lat), 9) if lat else 0.0,
                "max": round(max(lat), 9) if lat else 0.0,
                "messages": msgs.most_common(1)[0][0] if msgs else 0,
                "overheadMessages": sum(o.overhead for o in ops),
                "retries": sum(o.attempts - 1 for o in ops)}


def _bench(mode: str, duration: float, restart_every: float, downtime: float, interval: float,
           retry: float, seed: int, config: AHashConfig) -> BenchRun:
    replicas = 1 if mode == "centralized" else 3
    topo = Topology(ahash=replicas, librarians=0, bartenders=0, latency=LAN["latency"], bandwidth=LAN["bandwidth"],
                    ahash_config=config, extra_ahash_clients=(BENCH_DN,))
    d = Deployment(topo, seed).start(settle=2 * config.ping_period)
    probe = _Probe()
    d.network.add_host("bench").register_service("Bench", probe, BENCH_DN)
    client = AHashClient(probe, [d.endpoints[h] for h in d.ahash_ids])
    run = BenchRun(mode)
    clock = d.clock
    t_end = clock.now + duration
    state = {"i": 0, "op": None}

    def attempt() -> None:
        if clock.now >= t_end:
            return
        i = state["i"]
        op = state["op"]
        if op is None:
            op = state["op"] = _BenchOp("write", clock.now)
        key, value = f"bench-{i:05d}", f"v{i}"
        op.attempts += 1
        before = d.network.stats.message_count
        try:
            client.change([change("w", key, "set", "data", "value", value).to_wire()])
        except ServiceError:
            op.overhead += d.network.stats.message_count - before
            clock.schedule(retry, attempt)
            return
        op.messages = probe.last[1]
        op.overhead += d.network.stats.message_count - before - op.messages
        op.finished = clock.now
        run.ops.append(op)
        state["op"] = None
        # read back from any replica, then verify
        rd = _BenchOp("read", clock.now, attempts=1)
        before = d.network.stats.message_count
        try:
            got = client.get([key])[key]
        except ServiceError:
            got = {}
        rd.messages = probe.last[1] if probe.last and probe.last[0] == "get" else 0
        rd.overhead = d.network.stats.message_count - before - rd.messages
        rd.finished = clock.now
        run.ops.append(rd)
        if got.get("data", {}).get("value") == value:
            run.verified[key] = value
        state["i"] = i + 1
        clock.schedule(interval, attempt)

    clock.schedule(0.0, attempt)

    if mode in ("replicated-unstable-clients", "replicated-unstable-master"):
        def fault() -> None:
            if mode.endswith("master"):
                m = d.master()
                host = m.node_id if m else None
            else:
                host = next((h for h in d.ahash_ids if d.is_up(h) and d.ahash[h].role != MASTER), None)
            if host is None:
                return
            d.kill(host)
            run.kills.append(clock.now)
            clock.schedule(downtime, d.restart, host)

        t = restart_every
        while t < duration:
            clock.at(clock.now + t, fault)
            t += restart_every
    d.run_for(duration + 5 * config.master_timeout)
    for h, node in d.ahash.items():
        run.elections += [{**e, "node": h} for e in node.elections]
    for key, value in run.verified.items():
        for h, node in d.ahash.items():
            if node.store.peek(key).get("data", {}).get("value") != value:
                run.lost.append(f"{key}@{h}")
    return run


def run_ahash_bench(modes=BENCH_MODES, duration: float = 600.0, restart_every: float = 60.0,
                    downtime: float = 5.0, interval: float = 1.0, retry: float = 0.5, seed: int = 0,
                    config: AHashConfig | None = None) -> ScenarioResult:
    config = config or AHashConfig()
    res = ScenarioResult("ahash-bench", seed)
    runs = {m: _bench(m, duration, restart_every, downtime, interval, retry, seed, config) for m in modes}
    rows = [run.stats(kind) for run in runs.values() for kind in ("read", "write")]
    res.tables["ahash"] = rows
    by = {(r["mode"], r["op"]): r for r in rows}
    reads = {m: by[(m, "read")]["messages"] for m in runs}
    res.check("read-messages-equal", len(set(reads.values())) == 1, f"read messages {reads}")
    if "centralized" in runs and "replicated-stable" in runs:
        cw, rw = by[("centralized", "write")]["messages"], by[("replicated-stable", "write")]["messages"]
        want = cw + 2 * (3 - 1)
        res.check("write-replication-round", rw == want, f"centralized {cw}, replicated {rw}, expected {want}")
    for m, run in runs.items():
        res.check(f"no-lost-writes[{m}]", not run.lost and len(run.verified) == by[(m, "write")]["count"],
                  f"{len(run.verified)} verified, lost {run.lost[:5]}")
    if "replicated-unstable-master" in runs:
        run = runs["replicated-unstable-master"]
        durations = [e["end"] - e["start"] for e in run.elections]
        election = max(durations) if durations else 0.0
        stall = by[("replicated-unstable-master", "write")]["max"]
        bound = config.master_timeout + election
        res.check("write-stall-bound", stall <= bound,
                  f"max write stall {stall:.3f}s, bound {bound:.3f}s (election {election:.3f}s)")
        res.summary["kills"] = len(run.kills)
        res.summary["elections"] = len(run.elections)
    res.summary["modes"] = list(runs)
    return res


# -- election fuzz --------------------------------------------------------------------
FUZZ_DN = "CN=fuzz"


def _fuzz_one(seed: int, horizon: float, faults: int, probes: int, config: AHashConfig) -> dict:
    rng = random.Random(seed)
    topo = Topology(ahash=3, librarians=0, bartenders=0, ahash_config=config, extra_ahash_clients=(FUZZ_DN,))
    d = Deployment(topo, seed).start()
    net, clock = d.network, d.clock
    hosts = d.ahash_ids
    out = {"violations": [], "accepted": 0, "refused": 0, "reads": 0, "acked": {}}

    def fault() -> None:
        kind = rng.choice(("kill", "restart", "partition", "heal"))
        if kind == "kill":
            up = [h for h in hosts if d.is_up(h)]
            if up:
                d.kill(rng.choice(up))
        elif kind == "restart":
            down = [h for h in hosts if not d.is_up(h)]
            if down:
                d.restart(rng.choice(down))
        elif kind == "partition":
            shuffled = rng.sample(hosts, len(hosts))
            cut = rng.randint(1, len(hosts) - 1)
            net.partition(shuffled[:cut], shuffled[cut:])
        else:
            net.heal()

    def probe(k: int) -> None:
        h = rng.choice(hosts)
        if not d.is_up(h):
            return
        node = d.ahash[h]
        role = node.role
        if rng.random() < 0.5:
            key = f"k{seed}-{k}"
            req = [change("w", key, "set", "data", "v", str(k)).to_wire()]
            try:
                net.request(FUZZ_DN, d.endpoints[h], "change", {"requests": req})
            except ServiceError:
                out["refused"] += 1
                return
            out["accepted"] += 1
            out["acked"][key] = str(k)
            if role != MASTER:
                out["violations"].append(f"t={clock.now:.3f}: {h} accepted a write as {role}")
        else:
            try:
                net.request(FUZZ_DN, d.endpoints[h], "get", {"ids": ["probe"]})
                out["reads"] += 1
            except ServiceError as exc:
                out["violations"].append(f"t={clock.now:.3f}: live {h} refused a read: {exc.code}")

    for _ in range(faults):
        clock.at(rng.uniform(0.0, horizon), fault)
    for k in range(probes):
        clock.at(rng.uniform(0.0, horizon), probe, k)

    def check() -> None:
        masters = [h for h in hosts if d.is_up(h) and d.ahash[h].role == MASTER]
        for i, a in enumerate(masters):
            for b in masters[i + 1:]:
                if net.reachable(a, b):
                    out["violations"].append(f"t={clock.now:.3f}: {a} and {b} both master and connected")

    while clock._queue and clock._queue[0].time <= horizon:
        clock.step()
        check()
    net.heal()
    for h in hosts:
        if not d.is_up(h):
            d.restart(h)
    settle_end = clock.now + 4 * config.master_timeout
    while clock._queue and clock._queue[0].time <= settle_end:
        clock.step()
        check()
    clock.now = max(clock.now, settle_end)
    masters = [h for h in hosts if d.ahash[h].role == MASTER]
    if len(masters) != 1:
        out["violations"].append(f"after heal: masters {masters}")
    else:
        m = d.ahash[masters[0]]
        for key, value in out["acked"].items():
            if m.store.peek(key).get("data", {}).get("v") != value:
                out["violations"].append(f"acked write {key} lost")
        stores = {d.ahash[h].store.canonical() for h in hosts if d.ahash[h].seq == m.seq}
        if len(stores) != 1:
            out["violations"].append("replicas at the same seq disagree")
    out["elections"] = sum(len(n.elections) for n in d.ahash.values())
    return out


def run_election_fuzz(schedules: int = 1000, seed: int = 0, horizon: float = 30.0, faults: int = 8,
                      probes: int = 30, config: AHashConfig | None = None) -> ScenarioResult:
    config = config or AHashConfig(master_timeout=3.0, ping_period=0.5, backoff_min=0.2, backoff_max=0.8)
    res = ScenarioResult("election-fuzz", seed)
    master_rng = random.Random(seed)
    rows, violations = [], []
    for n in range(schedules):
        s = master_rng.getrandbits(32)
        out = _fuzz_one(s, horizon, faults, probes, config)
        rows.append({"schedule": n, "seed": s, "elections": out["elections"], "accepted": out["accepted"],
                     "refused": out["refused"], "reads": out["reads"], "violations": len(out["violations"])})
        violations += [f"schedule {n} (seed {s}): {v}" for v in out["violations"]]
    res.tables["fuzz"] = rows
    res.check("single-master", not any("both master" in v for v in violations),
              f"{schedules} schedules")
    res.check("writes-only-on-master", not any("accepted a write" in v for v in violations), "")
    res.check("reads-served", not any("refused a read" in v for v in violations),
              f"{sum(r['reads'] for r in rows)} reads")
    res.check("acked-writes-durable", not any("lost" in v or "disagree" in v or "after heal" in v
                                              for v in violations),
              f"{sum(r['accepted'] for r in rows)} acked writes")
    res.summary = {"schedules": schedules, "violations": violations[:20],
                   "elections": sum(r["elections"] for r in rows)}
    return res


# -- replication ----------------------------------------------------------------------
def run_replication(scenario: Scenario | None = None, seed: int | None = None) -> ScenarioResult:
    sc = scenario or load_scenario("replication")
    seed = sc.seed if seed is None else seed
    wall = time.perf_counter()
    res = ScenarioResult(sc.name, seed)
    topo = sc.build_topology()
    d = Deployment(topo, seed).start(settle=sc.param("settle", 3.0))
    drv = Driver(d)
    rng = random.Random(seed)
    files, needed = sc.param("files", 10), sc.param("needed", 4)
    content, declared = sc.param("content_size", 1024), sc.param("file_size", 114_000_000)
    drv.client.mkdir("/data")
    for i in range(files):
        drv.client.put(f"/data/file{i:02d}", rng.randbytes(content), needed=needed, size=declared)
    period, duration = sc.param("sample_period", 15.0), sc.param("duration", 720.0)
    drv.sample_every(period, duration, start=period * math.ceil(d.clock.now / period))
    drv.schedule(sc.schedule)
    d.clock.run_until(duration)
    wall = time.perf_counter() - wall

    urls = [d.endpoints[h].url for h in d.shepherd_ids]
    res.tables["timeline"] = [s.row(urls) for s in drv.samples]
    res.tables["events"] = drv.events
    total = files * needed
    kills = [e for e in drv.events if e["event"] == "kill"]
    restarts = [e for e in drv.events if e["event"] == "restart"]
    if not kills or not restarts:
        res.check("schedule", False, f"events {drv.events}")
        return res
    t_kill, t_restart, victim = kills[0]["time"], restarts[0]["time"], kills[0]["target"]
    lost = int(kills[0]["detail"].split(":")[1]) if kills[0]["detail"].startswith("holder:") else None
    before = [s for s in drv.samples if s.time < t_kill]
    down = [s for s in drv.samples if t_kill <= s.time < t_restart]
    after = [s for s in drv.samples if s.time >= t_restart]
    initial = before[-1] if before else None
    final = drv.samples[-1]
    res.tables["distribution"] = [
        {"shepherd": url.split("/")[2], "initial": initial.per_shepherd.get(url, 0) if initial else 0,
         "final": final.per_shepherd.get(url, 0)} for url in urls]

    res.check("initial", initial is not None and initial.states == {ALIVE: total},
              f"before kill: {initial.states if initial else None}")
    degraded = next((i for i, s in enumerate(down)
                     if s.states.get(ALIVE) == total - lost and s.states.get(OFFLINE) == lost), None) \
        if lost else None
    res.check("degraded-sample", degraded is not None,
              f"{down[degraded].states} at t={down[degraded].time}" if degraded is not None
              else f"no sample with {total - (lost or 0)} ALIVE + {lost} OFFLINE")
    if degraded is not None:
        trail = [s.states.get(ALIVE, 0) for s in down[degraded:]]
        recovered = next((s for s in down[degraded:] if s.states.get(ALIVE) == total), None)
        bound = 5 * topo.shepherd_config.check_period
        ok = all(b >= a for a, b in zip(trail, trail[1:])) and recovered is not None \
            and recovered.time - t_kill <= bound
        res.check("monotone-recovery", ok,
                  f"ALIVE {trail}; recovered {recovered.time - t_kill:.0f}s after kill (bound {bound:.0f}s)"
                  if recovered else f"ALIVE {trail}; never recovered")
    surplus = [s for s in after if s.states.get(THIRDWHEEL, 0) > 0]
    res.check("thirdwheel-transient", bool(surplus) and after[-1].states.get(THIRDWHEEL, 0) == 0,
              f"THIRDWHEEL peak {max((s.states[THIRDWHEEL] for s in surplus), default=0)}")
    report = fsck(d.store(), {d.endpoints[h].url: list(d.shepherds[h].replicas.values())
                              for h in d.shepherd_ids})
    res.check("final", final.states == {ALIVE: total} and report.ok,
              f"final {final.states}; fsck errors {report.errors[:3]}")
    res.check("wall-clock", wall < 10.0, f"{wall:.2f}s")
    res.summary = {"victim": victim, "kill": t_kill, "restart": t_restart, "wall_seconds": round(wall, 3),
                   "creating_seen": any(s.states.get(CREATING) for s in down),
                   "states": list(REPLICA_STATES)}
    return res


# -- soak -----------------------------------------------------------------------------
WRITE_OPS = {"put", "rm", "mkdir"}


def run_soak(scenario: Scenario | None = None, seed: int | None = None,
             duration: float | None = None) -> ScenarioResult:
    sc = scenario or load_scenario("soak")
    seed = sc.seed if seed is None else seed
    duration = sc.param("duration", 86400.0) if duration is None else duration
    res = ScenarioResult(sc.name, seed)
    topo = sc.build_topology()
    d = Deployment(topo, seed).start(settle=sc.param("settle", 5.0))
    drv = Driver(d)
    rng = random.Random(seed)
    c = drv.client
    needed = sc.param("needed", 2)
    op_interval = sc.param("op_interval", 60.0)
    start = d.clock.now
    c.mkdir("/soak")
    files: dict[str, bytes] = {}
    dirs = ["/soak"]
    ops: list[dict] = []
    counter = {"n": 0}

    def workload() -> None:
        if d.clock.now - start >= duration:
            return
        counter["n"] += 1
        n = counter["n"]
        op = rng.choices(("put", "rm", "list", "get", "mkdir"), weights=(35, 20, 20, 20, 5))[0]
        if op in ("rm", "get") and not files:
            op = "put"
        t = d.clock.now
        target, error = "", None
        try:
            if op == "put":
                target = f"{rng.choice(dirs)}/f{n:05d}"
                data = rng.randbytes(rng.randint(0, 4096))
                c.put(target, data, needed=needed)
                files[target] = data
            elif op == "rm":
                target = rng.choice(sorted(files))
                c.rm(target)
                files.pop(target)
            elif op == "mkdir":
                target = f"/soak/d{n:05d}"
                c.mkdir(target)
                dirs.append(target)
            elif op == "list":
                target = rng.choice(dirs)
                c.list(target)
            else:
                target = rng.choice(sorted(files))
                if c.get(target) != files[target]:
                    error = "corrupt-read"
        except ServiceError as exc:
            error = exc.code
        ops.append({"time": round(t, 6), "op": op, "target": target, "ok": error is None, "error": error or ""})
        d.clock.schedule(op_interval, workload)

    d.clock.schedule(0.0, workload)

    # scheduled A-Hash restarts
    events = list(sc.schedule)
    downtime = sc.param("ahash_downtime", 30.0)
    for key, target in (("master_restart", "master"), ("client_restart", "ahash-client")):
        every = sc.param(f"{key}_every", 0.0)
        t = sc.param(f"{key}_offset", every)
        while every and t < duration:
            events.append(Event(t, "kill", (target,)))
            events.append(Event(t + downtime, "restart", ("last",)))
            t += every
    drv.schedule(sorted(events, key=lambda e: e.time), offset=start)
    d.clock.run_until(start + duration)
    settle = sc.param("final_settle", 3 * topo.shepherd_config.check_period + topo.shepherd_config.heartbeat_period)
    d.clock.run_until(start + duration + settle)

    # availability: each master kill opens a window that closes with the next election
    elections = sorted((e for n in d.ahash.values() for e in n.elections), key=lambda e: e["end"])
    windows, gaps = [], []
    for ev in drv.events:
        if ev["event"] != "kill" or ev["detail"] != "master":
            continue
        end = next((e["end"] for e in elections if e["end"] >= ev["time"]), None)
        windows.append((ev["time"], end if end is not None else math.inf))
        gaps.append(round((end if end is not None else math.inf) - ev["time"], 6))
    failed = [o for o in ops if not o["ok"]]
    outside = [o for o in failed if not any(a <= o["time"] <= b for a, b in windows)]
    res.check("gaps-only-during-elections", not outside,
              f"{len(failed)} failed ops, {len(outside)} outside elections: {outside[:3]}")
    client_windows = [(ev["time"], ev["time"] + downtime) for ev in drv.events
                      if ev["event"] == "kill" and ev["detail"] == "ahash-client"]
    during_client = [o for o in failed if any(a <= o["time"] <= b for a, b in client_windows)]
    res.check("client-restart-invisible", not during_client, f"{len(during_client)} failures")
    report = fsck(d.store(), {d.endpoints[h].url: list(d.shepherds[h].replicas.values())
                              for h in d.shepherd_ids})
    res.check("fsck", report.ok, f"{report.files} files, {report.collections} collections; "
                                 f"errors {report.errors[:3]}; orphans {report.orphans[:3]}")
    expected = {ln for ln in files}
    present = {f"{ln}" for ln in files if _exists(c, ln)}
    res.check("namespace-matches-workload", expected == present, f"{len(present)} of {len(expected)} files")
    res.tables["ops"] = ops
    res.tables["events"] = drv.events
    res.summary = {"duration": duration, "ops": len(ops), "failed": len(failed), "gaps": gaps,
                   "fsck": report.to_dict() | {"orphans": len(report.orphans)},
                   "by_op": dict(Counter(o["op"] for o in ops))}
    return res


def _exists(c, ln: str) -> bool:
    try:
        c.stat(ln)
        return True
    except ServiceError:
        return False


# -- dispatch ---------------------------------------------------------------------------
def run_scenario(scenario: Scenario, seed: int | None = None) -> ScenarioResult:
    """Run a loaded scenario according to its kind."""
    seed = scenario.seed if seed is None else seed
    p = scenario.param
    kind = scenario.kind
    if kind == "replication":
        res = run_replication(scenario, seed)
    elif kind == "soak":
        res = run_soak(scenario, seed)
    elif kind == "depth":
        profiles = tuple((x.split(":")[0], int(x.split(":")[1])) for x in p("profiles", "lan:1 wan:1 wan:3").split())
        res = run_depth_test(p("levels", 100), profiles, seed)
    elif kind == "width":
        res = run_width_test(p("entries", 1000), seed, p("profile", "lan"))
    elif kind == "multiclient":
        clients = tuple(int(x) for x in p("clients", "10 20 30 40 50 60 70 80 90 100").split())
        res = run_multi_client(clients, p("threshold", 30), p("ops", 50), seed, p("queue_capacity", 1000))
    elif kind == "ahash-bench":
        res = run_ahash_bench(tuple(p("modes", " ".join(BENCH_MODES)).split()), p("duration", 600.0),
                              p("restart_every", 60.0), p("downtime", 5.0), seed=seed)
    elif kind == "election-fuzz":
        res = run_election_fuzz(p("schedules", 1000), seed)
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    res.name = scenario.name
    return res
