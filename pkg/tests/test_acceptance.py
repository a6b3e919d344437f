"""Release acceptance gate.

One test per release criterion. Each test records its verdict through
record_acceptance before asserting, so the terminal summary always shows one
PASSED/FAILED line per criterion even when the suite aborts early.
"""
from __future__ import annotations

import dataclasses
import json
import random
import re
import subprocess
import time
from fractions import Fraction

import pytest

from conftest import (
    PAPER_SCENARIO,
    make_device,
    make_fault,
    make_profile,
    make_scenario,
    make_sensor,
    make_service,
    record_acceptance,
)
from edgefleet.bus import Bus
from edgefleet.energy import EnergyEvent, EnergyEventKind, EnergyTrace, average_current
from edgefleet.model import FaultKind, LifecycleAction, SensorKind
from edgefleet.runner import ScriptedAction, run_scenario
from edgefleet.wire import BusMessage, decode, encode, make_topic
from reference import PageHinkley, ReferenceMonitor, integrate_average_current

INTERVAL_S = 600.0


def _finish(name: str, failures: list[str]) -> None:
    record_acceptance(name, not failures)
    assert not failures, f"{name}: " + "; ".join(failures[:10])


def _suspicious_flips(result, service_id: str) -> list[dict]:
    return [
        e
        for e in result.state_changes
        if e["service_id"] == service_id and e["state"] == "Suspicious"
    ]


# ---------------------------------------------------------------------------
# experiment reproduction


def _hand_computed_delta_mA() -> Fraction:
    """Post-fault saving of the bundled experiment, integrated by hand.

    Exact rational arithmetic throughout. Current values are built from float
    literals so they share the simulator's binary representation; durations
    come from the millisecond grid and are exact decimals.
    """
    sleep, mcu, radio = Fraction(0.01), Fraction(40), Fraction(120) * Fraction(1, 5)
    busy = Fraction(30) + Fraction(1, 5) + Fraction(1, 10) + Fraction(1, 5)
    both = (
        mcu * busy
        + Fraction(19) * 30
        + 2 * radio
        + Fraction(1) * Fraction(1, 10)
        + sleep * (600 - busy)
    )
    temp_only = mcu * 2 + Fraction(1) * Fraction(1, 10) + radio + sleep * (600 - 2)
    saved = both - temp_only
    # 18 intervals after the comparison boundary: two pass before the fleet
    # reacts, the interval that delivers the stop saves everything except one
    # radio receive, and the remaining 15 save the full amount.
    return (16 * saved - radio) / 10800


def test_experiment_reproduction(tmp_path):
    """Paced end-to-end CLI run of the bundled scenario: at least 1 mA saved
    after the fault, within 10% of the hand computation, in under two minutes
    of wall time."""
    name = "experiment-reproduction"
    started = time.monotonic()
    try:
        proc = subprocess.run(
            [
                "edgefleet",
                "run",
                "--scenario",
                str(PAPER_SCENARIO),
                "--seed",
                "42",
                "--out",
                str(tmp_path / "out"),
            ],
            capture_output=True,
            text=True,
            timeout=170,
        )
    except subprocess.TimeoutExpired:
        record_acceptance(name, False)
        raise
    elapsed = time.monotonic() - started

    failures: list[str] = []
    if proc.returncode != 0:
        failures.append(f"run exited {proc.returncode}: {proc.stderr.strip()}")
        _finish(name, failures)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    delta = summary["delta_mA"]
    expected = float(_hand_computed_delta_mA())
    if elapsed >= 120.0:
        failures.append(f"took {elapsed:.1f}s wall, budget is 120s")
    if delta is None or delta < 1.0:
        failures.append(f"saved {delta} mA, below the 1 mA floor")
    if delta is None or abs(delta - expected) > 0.10 * expected:
        failures.append(f"saved {delta} mA, not within 10% of {expected}")
    if not summary["fleet_avg_current_mA"]["post_fault"]:
        failures.append("summary carries no post-fault comparison")
    _finish(name, failures)


# ---------------------------------------------------------------------------
# lifecycle isolation


def _random_fleet(rng: random.Random):
    devices = []
    for d in range(rng.randint(1, 2)):
        services = []
        for s in range(rng.randint(2, 4)):
            sensor = make_sensor(
                kind=rng.choice(list(SensorKind)),
                baseline=rng.uniform(-20.0, 500.0),
                amplitude=rng.choice([0.0, rng.uniform(0.5, 5.0)]),
                sigma=rng.uniform(0.01, 10.0),
            )
            services.append(
                make_service(
                    f"svc-{s}",
                    interval_s=rng.choice([300.0, 600.0, 900.0]),
                    sensor=sensor,
                    sample_mA=rng.uniform(0.5, 20.0),
                    sample_s=rng.choice([0.1, 1.0, 30.0]),
                )
            )
        devices.append(
            make_device(f"dev-{d}", services=tuple(services), seed=rng.randrange(2**32))
        )
    return tuple(devices)


def _plan_action(rng: random.Random, devices):
    """One randomized management plan against one target service.

    Two-step plans space the follow-up 1000 s after the first action; with
    report intervals of at most 900 s the first command is always delivered
    and acknowledged before the second is submitted.
    """
    dev = rng.choice(devices)
    target = rng.choice(dev.services)
    first_at = rng.randrange(5, 13) * 100.0
    style = rng.choice(["stop", "update", "stop_start", "stop_uninstall"])
    if style == "stop":
        actions = [ScriptedAction(first_at, dev.device_id, target.service_id, LifecycleAction.stop)]
    elif style == "update":
        bumped = dataclasses.replace(
            target,
            code_version=target.code_version + 1,
            sensor=dataclasses.replace(target.sensor, baseline=target.sensor.baseline + 1.0),
        )
        actions = [
            ScriptedAction(first_at, dev.device_id, target.service_id, LifecycleAction.update, bumped)
        ]
    else:
        second = LifecycleAction.start if style == "stop_start" else LifecycleAction.uninstall
        actions = [
            ScriptedAction(first_at, dev.device_id, target.service_id, LifecycleAction.stop),
            ScriptedAction(first_at + 1000.0, dev.device_id, target.service_id, second),
        ]
    return dev.device_id, target.service_id, tuple(actions)


def test_lifecycle_isolation():
    """Randomized fleets: managing one service never perturbs any sibling's
    measurement trace, compared sample for sample against an action-free run
    of the same scenario and seed."""
    name = "lifecycle-isolation"
    rng = random.Random(20250825)
    failures: list[str] = []
    cases = sibling_checks = 0
    for case in range(110):
        devices = _random_fleet(rng)
        seed = rng.randrange(2**32)
        target_dev, target_svc, actions = _plan_action(rng, devices)
        scenario = make_scenario(devices=devices, duration_s=3600.0)
        acted = run_scenario(scenario, seed=seed, scripted_actions=actions)
        control = run_scenario(scenario, seed=seed)
        for dev in devices:
            for svc in dev.services:
                mine = acted.service_trace(dev.device_id, svc.service_id)
                ref = control.service_trace(dev.device_id, svc.service_id)
                if (dev.device_id, svc.service_id) == (target_dev, target_svc):
                    if mine == ref:
                        failures.append(f"case {case}: action left no trace on the target")
                else:
                    sibling_checks += 1
                    if mine != ref:
                        failures.append(
                            f"case {case}: sibling {dev.device_id}/{svc.service_id} trace changed"
                        )
        cases += 1
    if cases < 100:
        failures.append(f"only {cases} randomized scenarios exercised")
    if not failures:
        assert sibling_checks >= 100
    _finish(name, failures)


# ---------------------------------------------------------------------------
# availability and correctness detection

# 4 devices x 5 services x 500 report intervals: exactly 10,000 health
# verdicts over lossless transport with quiet, fault-free sensors.


@pytest.fixture(scope="module")
def clean_fleet_run():
    devices = tuple(
        make_device(
            f"dev-{d}",
            services=tuple(
                make_service(
                    f"svc-{s}",
                    interval_s=INTERVAL_S,
                    sensor=make_sensor(sigma=0.1, amplitude=0.0),
                )
                for s in range(5)
            ),
            seed=d + 1,
        )
        for d in range(4)
    )
    return run_scenario(make_scenario(devices=devices, duration_s=300_000.0), seed=13)


def test_availability_detection(clean_fleet_run):
    """A silenced service is flagged within (missed_k + grace) report
    intervals in every seeded run, and a loss-free fleet never produces a
    false unavailability verdict across 10,000 evaluations."""
    name = "availability-detection"
    failures: list[str] = []
    budget_s = (2 + 1.5) * INTERVAL_S
    for seed in range(1, 26):
        fault_start = 3000.0 if seed % 2 else 6000.0
        # sigma 0 keeps the value detectors quiet so staleness is the only
        # possible reason for a flip
        scenario = make_scenario(
            devices=(
                make_device(
                    "dev-1",
                    services=(
                        make_service("svc-a", interval_s=INTERVAL_S, sensor=make_sensor(sigma=0.0)),
                        make_service("svc-b", interval_s=INTERVAL_S, sensor=make_sensor(sigma=0.0)),
                    ),
                    seed=seed,
                ),
            ),
            duration_s=fault_start + 3600.0,
            faults=(
                make_fault(
                    device_id="dev-1",
                    service_id="svc-a",
                    kind=FaultKind.dropout,
                    start_s=fault_start,
                ),
            ),
        )
        flips = _suspicious_flips(run_scenario(scenario, seed=seed), "svc-a")
        if not flips:
            failures.append(f"seed {seed}: dropout never flagged")
        elif flips[0]["reason"] != "missed_reports":
            failures.append(f"seed {seed}: flagged as {flips[0]['reason']}")
        elif flips[0]["t_s"] - fault_start > budget_s:
            failures.append(
                f"seed {seed}: flagged {flips[0]['t_s'] - fault_start:.0f}s after onset"
            )

    records = list(clean_fleet_run.control.records.values())
    total = sum(r.total_verdicts for r in records)
    stale = sum(r.unavailable_verdicts for r in records)
    if total != 10_000:
        failures.append(f"clean fleet produced {total} verdicts, expected 10000")
    if stale:
        failures.append(f"{stale} false unavailability verdicts on lossless transport")
    _finish(name, failures)


def test_correctness_detection(clean_fleet_run):
    """Value faults are caught on time and verdicts agree with independent
    recomputations; quiet streams stay below a 1% false-alarm rate."""
    name = "correctness-detection"
    failures: list[str] = []

    # step of 10 sigma, flagged within the vote quorum. A step this large can
    # legitimately trip the mean-change detector one sample before the votes.
    for seed in range(1, 11):
        scenario = make_scenario(
            devices=(
                make_device(
                    "dev-1",
                    services=(
                        make_service(
                            "svc-a",
                            interval_s=INTERVAL_S,
                            sensor=make_sensor(sigma=0.5, amplitude=0.0),
                        ),
                    ),
                    seed=seed,
                ),
            ),
            duration_s=9600.0,
            faults=(
                make_fault(
                    device_id="dev-1",
                    service_id="svc-a",
                    kind=FaultKind.offset_outlier,
                    start_s=6000.0,
                    magnitude=5.0,
                    outlier_probability=1.0,
                ),
            ),
        )
        result = run_scenario(scenario, seed=seed)
        flips = _suspicious_flips(result, "svc-a")
        if not flips or flips[0]["t_s"] > 6000.0 + 3 * INTERVAL_S:
            failures.append(f"step seed {seed}: not flagged within 3 samples ({flips[:1]})")
        monitor = ReferenceMonitor(INTERVAL_S)
        expected = []
        for ev in result.events:
            if ev["type"] == "measurement" and ev["service_id"] == "svc-a":
                monitor.arrive(ev["timestamp_s"], ev["value"])
            elif ev["type"] == "eval" and ev["device_id"] == "dev-1":
                expected.append(monitor.evaluate(ev["t_s"]))
        rec = result.control.record("dev-1", "svc-a")
        got = [(v.available, v.correct, v.reason.value) for v in rec.history]
        if got != expected[-len(got):]:
            failures.append(f"step seed {seed}: verdicts diverge from the reference monitor")

    # 10 units/hour of drift at 600 s sampling: flagged well inside two
    # simulated hours, and the standalone reference detector agrees.
    for seed in range(1, 11):
        scenario = make_scenario(
            devices=(
                make_device(
                    "dev-1",
                    services=(
                        make_service(
                            "svc-a",
                            interval_s=INTERVAL_S,
                            sensor=make_sensor(sigma=0.1, amplitude=0.0),
                        ),
                    ),
                    seed=seed,
                ),
            ),
            duration_s=14400.0,
            faults=(
                make_fault(
                    device_id="dev-1",
                    service_id="svc-a",
                    kind=FaultKind.drift,
                    start_s=3600.0,
                    magnitude=10.0,
                ),
            ),
        )
        result = run_scenario(scenario, seed=seed)
        flips = _suspicious_flips(result, "svc-a")
        if not flips or flips[0]["t_s"] >= 3600.0 + 7200.0:
            failures.append(f"drift seed {seed}: not flagged inside two hours ({flips[:1]})")
        ph = PageHinkley(delta=0.05, lam=5.0)
        fired_at = None
        for m in result.measurements:
            if ph.step(m.value) and fired_at is None:
                fired_at = m.timestamp_ms / 1000.0
        if fired_at is None or fired_at >= 3600.0 + 7200.0:
            failures.append(f"drift seed {seed}: reference detector fired at {fired_at}")

    records = list(clean_fleet_run.control.records.values())
    total = sum(r.total_verdicts for r in records)
    alarmed = sum(r.suspicious_verdicts for r in records)
    if total != 10_000:
        failures.append(f"clean fleet produced {total} verdicts, expected 10000")
    if alarmed / total >= 0.01:
        failures.append(f"false-alarm rate {alarmed / total:.2%} is not below 1%")
    _finish(name, failures)


# ---------------------------------------------------------------------------
# energy accounting


def test_energy_oracle_equivalence():
    """Average current agrees bit for bit with an independent piecewise
    integration, on randomized synthetic wake schedules and on the schedules
    real simulation runs produce."""
    name = "energy-oracle-equivalence"
    rng = random.Random(424243)
    failures: list[str] = []
    checked = 0

    for case in range(110):
        profile = make_profile(
            sleep=rng.uniform(0.001, 0.5),
            mcu=rng.uniform(1.0, 200.0),
            wake_s=2.0,
            tx_mA=rng.uniform(1.0, 500.0),
            tx_s=0.2,
        )
        duration_ms = 20_000
        trace = EnergyTrace("dev-1", profile, 5_000, duration_ms)
        for t in sorted(rng.sample(range(1000, duration_ms + 1, 1000), rng.randint(1, 10))):
            wake_dur = rng.randint(100, 500)
            trace.add(
                EnergyEvent(
                    "dev-1", t, EnergyEventKind.wake_window, wake_dur, profile.mcu_active_current_mA
                )
            )
            budget = wake_dur
            for _ in range(rng.randint(0, 2)):
                dur = rng.randint(0, budget // 2)
                budget -= dur
                kind = rng.choice([EnergyEventKind.sensor_sample, EnergyEventKind.radio_tx])
                trace.add(EnergyEvent("dev-1", t, kind, dur, rng.uniform(0.0, 300.0)))
        expected = integrate_average_current(profile, trace.events, duration_ms)
        if average_current(trace, 0.0, duration_ms / 1000) != expected:
            failures.append(f"synthetic schedule {case} diverges from piecewise integration")
        checked += 1

    for case in range(12):
        devices = _random_fleet(rng)
        result = run_scenario(
            make_scenario(devices=devices, duration_s=3600.0), seed=rng.randrange(2**32)
        )
        for dev in devices:
            trace = result.traces[dev.device_id]
            expected = integrate_average_current(dev.energy_profile, trace.events, 3_600_000)
            mine = Fraction(trace.total_charge_mA_s()) * 1000 / 3_600_000
            if mine != expected:
                failures.append(f"simulated schedule {case}/{dev.device_id} diverges")
            checked += 1

    if checked < 100:
        failures.append(f"only {checked} schedules checked")
    _finish(name, failures)


# ---------------------------------------------------------------------------
# transport guarantees


def test_protocol_guarantees():
    """Wire codec round-trips arbitrary well-formed traffic, topics deliver in
    publish order, and loss-free runs acknowledge every accepted command
    exactly once."""
    name = "protocol-guarantees"
    rng = random.Random(77)
    failures: list[str] = []

    for case in range(500):
        dev = f"dev-{rng.randint(0, 30)}"
        svc = f"svc-{rng.randint(0, 30)}"
        t = round(rng.uniform(0.0, 100_000.0), 3)
        roll = rng.random()
        if roll < 0.5:
            topic = make_topic(dev, "measurement", svc)
            payload = {
                "device_id": dev,
                "service_id": svc,
                "timestamp_s": t,
                "value": rng.uniform(-1e6, 1e6),
                "code_version": rng.randint(0, 9),
            }
        elif roll < 0.8:
            topic = make_topic(dev, "event", svc)
            payload = {
                "kind": "ack",
                "command_id": f"c{rng.randint(1, 999)}",
                "action": rng.choice(["stop", "start", "uninstall"]),
                "service_id": svc,
                "ok": bool(rng.getrandbits(1)),
                "state": "Stopped",
                "timestamp_s": t,
            }
        else:
            topic = make_topic(dev, "energy")
            start = round(rng.uniform(0.0, 1000.0), 3)
            payload = {
                "device_id": dev,
                "window_start_s": start,
                "window_end_s": start + rng.uniform(0.001, 600.0),
                "variant": rng.choice(["live", "baseline"]),
                "avg_current_mA": rng.uniform(0.0, 100.0),
            }
        message = BusMessage(topic, payload, t)
        if decode(encode(message)) != message:
            failures.append(f"codec round-trip {case} mutated the message")

    bus = Bus()
    received: dict[str, list[float]] = {}
    bus.subscribe(
        lambda p: p.channel == "measurement",
        lambda m, p: received.setdefault(m.topic, []).append(m.payload["value"]),
    )
    sent: dict[str, list[float]] = {}
    for i in range(200):
        svc = f"svc-{i % 3}"
        topic = make_topic("dev-1", "measurement", svc)
        bus.publish(
            topic,
            {
                "device_id": "dev-1",
                "service_id": svc,
                "timestamp_s": float(i),
                "value": float(i),
                "code_version": 1,
            },
            float(i),
        )
        sent.setdefault(topic, []).append(float(i))
    if received != sent:
        failures.append("per-topic delivery order differs from publish order")

    rng = random.Random(555)
    for case in range(10):
        devices = _random_fleet(rng)
        _, _, actions = _plan_action(rng, devices)
        result = run_scenario(
            make_scenario(devices=devices, duration_s=3600.0),
            seed=rng.randrange(2**32),
            scripted_actions=actions,
        )
        commands = sorted(e["command_id"] for e in result.events if e["type"] == "command")
        acks = sorted(e["command_id"] for e in result.events if e["type"] == "ack")
        if not commands:
            failures.append(f"run {case}: no command was issued")
        elif commands != acks:
            failures.append(f"run {case}: commands {commands} but acks {acks}")
    _finish(name, failures)


# ---------------------------------------------------------------------------
# determinism and replay


def test_determinism_and_replay(tmp_path):
    """Identical scenario and seed produce byte-identical CSV artifacts, and
    the replay command re-derives every logged health transition."""
    name = "determinism-and-replay"
    failures: list[str] = []
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        proc = subprocess.run(
            [
                "edgefleet",
                "run",
                "--scenario",
                str(PAPER_SCENARIO),
                "--seed",
                "42",
                "--out",
                str(out),
                "--no-pace",
            ],
            capture_output=True,
            text=True,
            timeout=120,
        )
        if proc.returncode != 0:
            failures.append(f"run {sub} exited {proc.returncode}: {proc.stderr.strip()}")
            _finish(name, failures)
        outs.append(out)
    for artifact in ("measurements.csv", "energy.csv"):
        if (outs[0] / artifact).read_bytes() != (outs[1] / artifact).read_bytes():
            failures.append(f"{artifact} differs between identical runs")

    log = outs[0] / "events.log"
    logged_changes = sum(
        1 for line in log.read_text().splitlines() if json.loads(line)["type"] == "state_change"
    )
    proc = subprocess.run(
        ["edgefleet", "replay", "--events", str(log)], capture_output=True, text=True, timeout=60
    )
    if proc.returncode != 0:
        failures.append(f"replay exited {proc.returncode}: {proc.stderr.strip()}")
    else:
        matched = re.fullmatch(r"replay ok: (\d+) transitions confirmed\n", proc.stdout)
        if not matched:
            failures.append(f"unexpected replay output {proc.stdout!r}")
        elif int(matched.group(1)) != logged_changes or logged_changes < 1:
            failures.append(
                f"replay confirmed {matched.group(1)} transitions, log holds {logged_changes}"
            )
    _finish(name, failures)
