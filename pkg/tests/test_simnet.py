from __future__ import annotations

import dataclasses

import pytest

from seemore.config import Mode
from seemore.messages import Accept, Commit, Prepare, PrePrepare, Request
from seemore.replica import Replica
from seemore.simnet import (
    STRATEGIES,
    ByzantineAdversary,
    ByzantineSpec,
    ClusterSpec,
    CrashSpec,
    DelaySpec,
    FaultPlan,
    ModeChangeSpec,
    PartitionSpec,
    ScenarioConfig,
    ScenarioInvalid,
    Simulation,
    Workload,
    audit,
    check_new_views,
    random_scenario,
    run,
    run_random,
)

SMALL = ClusterSpec(S=2, c=1, m=1, P=4)


def scenario(**kwargs):
    base = dict(cluster=SMALL, workload=Workload(clients=2, requests_per_client=15), delay=DelaySpec(base=1, jitter=2))
    base.update(kwargs)
    return ScenarioConfig(**base)


@pytest.mark.parametrize("mode", list(Mode))
def test_fault_free_runs_complete_and_agree(mode):
    result = run(scenario(mode=mode))
    assert result.safe and result.completed_all
    assert result.metrics.completed == 30
    assert len(set(result.digests.values())) == 1


def test_same_seed_same_run():
    sc = random_scenario(11, 2, 2, Mode.DOG)
    a, b = run(sc), run(sc)
    assert a.commit_history() == b.commit_history()
    assert a.metrics.counters == b.metrics.counters
    assert a.audit_record() == b.audit_record()


def test_different_seed_changes_delays():
    sc = scenario(delay=DelaySpec(base=1, jitter=5))
    a, b = run(sc, seed=1), run(sc, seed=2)
    assert a.metrics.latencies() != b.metrics.latencies()


@pytest.mark.parametrize(
    "faults",
    [
        FaultPlan(crashes=[CrashSpec(3, 10)]),
        FaultPlan(crashes=[CrashSpec(0, 10), CrashSpec(1, 20)]),
        FaultPlan(byzantine=[ByzantineSpec(0, "mute")]),
        FaultPlan(byzantine=[ByzantineSpec(2, "mute"), ByzantineSpec(3, "mute")]),
        FaultPlan(byzantine=[ByzantineSpec(2, "shout")]),
        FaultPlan(crashes=[CrashSpec(0, 50, 40)]),
        FaultPlan(crashes=[CrashSpec(0, 0, on_commit=0)]),
        FaultPlan(crashes=[CrashSpec(0, 0, on_commit=1, partial=-1)]),
        FaultPlan(byzantine=[ByzantineSpec(2, "mute", after=-1)]),
    ],
)
def test_fault_plan_validation(faults):
    with pytest.raises(ScenarioInvalid):
        scenario(faults=faults).validate()


def test_scenario_rejects_bad_cluster_and_hooks():
    with pytest.raises(ScenarioInvalid):
        scenario(cluster=ClusterSpec(S=2, c=1, m=2, P=4)).validate()
    with pytest.raises(ScenarioInvalid):
        scenario(test_hooks=["nope"]).validate()
    with pytest.raises(ScenarioInvalid):
        ScenarioConfig.from_dict({"mode": "lion"})


def test_scenario_dict_round_trip():
    sc = random_scenario(5, 1, 3, Mode.PEACOCK)
    data = sc.to_dict()
    assert ScenarioConfig.from_dict(data).to_dict() == data


def test_sizing_input_builds_cluster():
    cfg = ClusterSpec(S=2, c=1, sizing={"alpha": 0.3}).build()
    assert (cfg.P, cfg.m) == (10, 3)


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("mode", list(Mode))
def test_each_strategy_is_tolerated(strategy, mode):
    faults = FaultPlan(byzantine=[ByzantineSpec(3, strategy)])
    result = run(scenario(mode=mode, faults=faults, max_time=50_000))
    assert result.safe, result.violations
    assert result.completed_all


def test_byzantine_primary_equivocation_is_tolerated():
    faults = FaultPlan(byzantine=[ByzantineSpec(2, "equivocate")])
    result = run(scenario(mode=Mode.PEACOCK, faults=faults))
    assert result.safe and result.completed_all
    assert result.metrics.spans  # the equivocating primary was replaced


def _adversary(strategy):
    from seemore.config import ClusterConfig
    from seemore.messages import KeyDirectory

    cfg = ClusterConfig(2, 4, 1, 1)
    keys = KeyDirectory.generate(list(cfg.replicas) + ["alice"])
    replica = Replica(cfg, 3, Mode.DOG, keys)
    return ByzantineAdversary(replica, strategy, cfg, seed=1), keys


def test_mute_sends_nothing():
    adv, _ = _adversary("mute")
    assert adv.transform(4, Accept(0, 1, b"d" * 16, Mode.DOG, 3)) == []


def test_mute_after_passes_early_traffic():
    replica_adv, _ = _adversary("mute")
    replica_adv.after = 2
    msg = Accept(0, 1, b"d" * 16, Mode.DOG, 3)
    assert [len(replica_adv.transform(4, msg)) for _ in range(4)] == [1, 1, 0, 0]


def test_equivocation_alters_odd_destinations():
    adv, keys = _adversary("equivocate")
    msg = keys.signer(3).sign(Accept(0, 1, b"d" * 16, Mode.DOG, 3))
    (_, even, _), = adv.transform(2, msg)
    (_, odd, _), = adv.transform(5, msg)
    assert even is msg and odd.digest != msg.digest


def test_wrong_seq_shifts_sequence():
    adv, keys = _adversary("wrong_seq")
    msg = keys.signer(3).sign(Commit(0, 4, b"d" * 16, Mode.DOG, None, 3))
    (_, out, _), = adv.transform(2, msg)
    assert out.seq == 5


def test_replay_resends_history():
    adv, keys = _adversary("replay_old_view")
    first = keys.signer(3).sign(Accept(0, 1, b"d" * 16, Mode.DOG, 3))
    second = keys.signer(3).sign(Accept(1, 1, b"e" * 16, Mode.DOG, 3))
    adv.transform(2, first)
    out = adv.transform(2, second)
    assert [m for _, m, _ in out] == [second, first]


def test_forgeries_claim_other_senders():
    adv, keys = _adversary("forge_attempt")
    forged = []
    for i in range(60):
        for dst, msg, claimed in adv.transform(i % 6, Accept(0, 1, b"d" * 16, Mode.DOG, 3)):
            if msg in adv.forged:
                forged.append((msg, claimed))
    kinds = {type(m).__name__ for m, _ in forged}
    assert len(kinds) >= 6
    assert all(claimed != 3 or type(m).__name__ == "ViewChange" for m, claimed in forged)


def test_forgeries_are_all_rejected_in_a_run():
    faults = FaultPlan(byzantine=[ByzantineSpec(4, "forge_attempt")])
    result = run(scenario(mode=Mode.LION, faults=faults))
    assert result.forged_delivered > 0
    assert result.forged_rejected == result.forged_delivered


def test_crash_restart_rejoins():
    faults = FaultPlan(crashes=[CrashSpec(0, 5, 200)])
    result = run(scenario(mode=Mode.LION, faults=faults, workload=Workload(2, 80)))
    assert result.safe and result.completed_all
    # the restarted replica caught up with the others
    assert result.replicas[0].exec_cursor == result.replicas[1].exec_cursor


def test_partition_holds_messages():
    faults = FaultPlan(partitions=[PartitionSpec(0, 2, 0, 100)])
    result = run(scenario(mode=Mode.DOG, faults=faults, workload=Workload(1, 3)))
    assert result.safe and result.completed_all


def test_pre_gst_drops_and_duplicates():
    delay = DelaySpec(base=1, jitter=1, gst=400, pre_gst_cap=30, drop=0.1, duplicate=0.1)
    result = run(scenario(mode=Mode.PEACOCK, delay=delay))
    assert result.safe and result.completed_all


@pytest.mark.parametrize("start,target", [(Mode.LION, Mode.PEACOCK), (Mode.PEACOCK, Mode.DOG), (Mode.DOG, Mode.LION)])
def test_mode_switch_mid_run(start, target):
    result = run(scenario(mode=start, mode_changes=[ModeChangeSpec(30, target)]))
    assert result.safe and result.completed_all
    assert all(r.mode is target for r in result.replicas.values())


def test_audit_catches_disagreement():
    result = run(scenario(mode=Mode.LION, workload=Workload(1, 3)))
    replicas = result.replicas
    first = replicas[1].trace[0]
    replicas[1].trace[0] = (first[0], first[1], b"\x00" * 16, first[3])
    problems = audit(replicas, result.honest, result.clients)
    assert any("agreement" in p for p in problems)


def test_audit_catches_double_application():
    result = run(scenario(mode=Mode.LION, workload=Workload(1, 3)))
    replicas = result.replicas
    replicas[2].applied.append(replicas[2].applied[0])
    assert audit(replicas, result.honest, result.clients)


def test_skip_quorum_hook_is_caught_by_audit():
    faults = FaultPlan(byzantine=[ByzantineSpec(2, "equivocate")])
    result = run(scenario(mode=Mode.PEACOCK, faults=faults, test_hooks=["skip_peacock_quorum"]))
    assert not result.safe


def test_random_scenarios_respect_bounds():
    for seed in range(40):
        c, m = [(1, 1), (2, 2), (1, 3), (3, 1)][seed % 4]
        sc = random_scenario(seed, c, m, Mode.DOG)
        cfg = sc.validate()
        total = sc.workload.clients * sc.workload.requests_per_client
        assert 50 <= total <= 200
        assert (cfg.S, cfg.P) == (2 * c, 3 * m + 1)


def test_run_random_outcome():
    outcome = run_random((3, 1, 1, "lion"))
    assert outcome.violations == () and outcome.completed_all
    assert 0 <= outcome.gst_fraction < 0.5


def test_simulation_uses_scenario_seed_by_default():
    sc = scenario(seed=42)
    assert Simulation(sc).seed == 42
    assert Simulation(sc, 7).seed == 7


def _crash_on_commit(partial):
    faults = FaultPlan(crashes=[CrashSpec(0, 0, on_commit=3, partial=partial)])
    return Simulation(scenario(mode=Mode.LION, faults=faults))


@pytest.mark.parametrize("partial", [0, 2])
def test_crash_on_commit_cuts_the_broadcast(partial):
    sim = _crash_on_commit(partial)
    result = sim.run()
    assert 0 in sim.crashed and not sim.triggers
    assert result.safe and result.completed_all
    # the crashed primary's Commit for the trigger sequence reached at most `partial` replicas
    reached = [
        r for r in result.honest
        if r != 0 and any(seq == 3 and view == 0 for seq, _, view in result.replicas[r].exec_log)
    ]
    assert len(reached) <= partial
    assert any(result.replicas[r].assembled for r in result.honest)


def test_triggered_crash_is_disarmed_by_restart():
    faults = FaultPlan(crashes=[CrashSpec(0, 0, restart_at=1, on_commit=10_000)])
    sim = Simulation(scenario(faults=faults))
    result = sim.run()
    assert not sim.crashed and not sim.triggers and result.completed_all


def test_new_view_check_catches_dropped_commit():
    faults = FaultPlan(crashes=[CrashSpec(0, 0, on_commit=3, partial=3)])
    result = run(scenario(mode=Mode.LION, faults=faults))
    assert check_new_views(result.replicas, result.honest) == []
    rid, nv = next((r, nv) for r in result.honest for nv in result.replicas[r].assembled if nv.commits or nv.prepares)
    trimmed = dataclasses.replace(nv, commits=(), prepares=())
    result.replicas[rid].assembled[result.replicas[rid].assembled.index(nv)] = trimmed
    executed_before = any(
        view < nv.view and seq > (nv.checkpoint[0].seq if nv.checkpoint else 0)
        for r in result.honest for seq, _, view in result.replicas[r].exec_log
    )
    assert executed_before
    assert any("drops sequence" in v for v in check_new_views(result.replicas, result.honest))


def test_primary_counter_follows_adopted_checkpoint():
    # this fault plan lets a primary adopt a checkpoint beyond its sequence counter
    outcome = run_random((78, 2, 2, "lion"))
    assert outcome.violations == () and outcome.completed_all


def test_stale_view_change_promise_is_not_broken():
    # proxies here once sent a ViewChange and were then offered a lower new view
    outcome = run_random((181, 3, 1, "peacock"))
    assert outcome.violations == () and outcome.completed_all
