"""Deterministic scenario harness over the simulation transport."""

from .deployment import Client, Deployment, Topology, dn_of
from .fsck import FsckReport, StateSample, fsck, take_sample, tally
from .result import Check, ScenarioResult
from .runners import (
    BENCH_MODES,
    run_ahash_bench,
    run_depth_test,
    run_election_fuzz,
    run_multi_client,
    run_replication,
    run_scenario,
    run_soak,
    run_width_test,
)
from .scenario import Driver, Event, Scenario, build_topology, builtin_names, load_scenario

__all__ = [
    "BENCH_MODES", "Check", "Client", "Deployment", "Driver", "Event", "FsckReport", "Scenario",
    "ScenarioResult", "StateSample", "Topology", "build_topology", "builtin_names", "dn_of", "fsck",
    "load_scenario", "run_ahash_bench", "run_depth_test", "run_election_fuzz", "run_multi_client",
    "run_replication", "run_scenario", "run_soak", "run_width_test", "take_sample", "tally",
]
