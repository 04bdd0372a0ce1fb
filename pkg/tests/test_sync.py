"""Countdown protocol tests: plan shape, min rule, firing semantics, trials."""

import random

import pytest

from camswarm.netsim import BROADCAST, Constant, NetworkModel, Simulator, Uniform
from camswarm.protocol import CaptureMode, CountdownPayload, decode_message, encode_message, message
from camswarm.sync import (
    CaptureClient,
    CaptureHost,
    CaptureSchedule,
    StateError,
    SyncError,
    countdown_plan,
    on_countdown,
    run_study,
    run_trial,
)


class TestCountdownPlan:
    def test_20hz(self):
        plan = countdown_plan(20)
        assert len(plan) == 101
        assert [r for _, r in plan] == list(range(5000, -1, -50))
        assert plan[0] == (0, 5000)
        assert plan[-1] == (5000.0, 0)

    def test_1hz(self):
        plan = countdown_plan(1)
        assert len(plan) == 6
        assert [r for _, r in plan] == [5000, 4000, 3000, 2000, 1000, 0]

    def test_slow_rate_still_covers_fire_instant(self):
        plan = countdown_plan(0.2)
        assert plan == [(0, 5000), (5000.0, 0)]

    def test_bad_rate(self):
        with pytest.raises(SyncError):
            countdown_plan(0)


class TestOnCountdown:
    def payload(self, remaining, cid=1):
        return CountdownPayload(cid, remaining, 0, 0)

    def test_hand_example(self):
        s = on_countdown(CaptureSchedule(1), 10_000.0, self.payload(3000))
        assert s.fire_at_local == 13_000.0
        assert s.packets_received == 1
        assert not s.fired

    def test_monotone_improvement(self):
        rng = random.Random(4)
        s = CaptureSchedule(1)
        best = float("inf")
        for _ in range(200):
            on_countdown(s, rng.uniform(0, 5000), self.payload(rng.randint(0, 5000)))
            assert s.fire_at_local <= best
            best = s.fire_at_local

    def test_other_capture_ignored(self):
        s = CaptureSchedule(1)
        on_countdown(s, 100.0, self.payload(3000, cid=2))
        assert s.packets_received == 0
        assert s.fire_at_local is None

    def test_late_packet_fires_immediately(self):
        s = on_countdown(CaptureSchedule(1), 5070.0, self.payload(0))
        assert s.fired
        assert s.fired_at_local == 5070.0


class ScriptedLatency:
    """Test double: returns queued latencies in order (duck-typed dist)."""

    def __init__(self, values):
        self.values = list(values)

    def sample(self, rng):
        return self.values.pop(0)


def countdown_frame(remaining, cid=1, sender=0):
    return encode_message(message(sender, CountdownPayload(cid, remaining, 0, 0)))


class TestClientScheduling:
    def run_packets(self, latencies, sends):
        """Host broadcasts scripted packets; returns the single client."""
        sim = Simulator(NetworkModel(0.0, ScriptedLatency(latencies), seed=1))
        sim.register("host")
        client = {}

        def handler(ctx, d):
            client["obj"].handle_countdown(decode_message(d.payload).payload)

        ctx = sim.register("c0", handler)
        client["obj"] = CaptureClient(ctx)
        for at, remaining in sends:
            sim.send("host", BROADCAST, countdown_frame(remaining), at=at)
        sim.run_until(10_000)
        return client["obj"]

    def test_min_latency_wins(self):
        # Latencies 120, 40, 80: fire at 5040, effective latency 40.
        client = self.run_packets(
            [120, 40, 80], [(0.0, 5000), (50.0, 4950), (100.0, 4900)])
        assert client.schedule.fired
        assert client.schedule.fired_at_local == 5040.0
        assert client.schedule.packets_received == 3

    def test_exactly_once(self):
        # A slower later packet neither reschedules nor re-fires.
        client = self.run_packets(
            [40, 30], [(0.0, 5000), (5000.0, 0)])
        # second packet arrives at 5030 < fire 5040: candidate 5030 fires it
        assert client.schedule.fired_at_local == 5030.0
        assert client.schedule.packets_received == 2

    def test_post_fire_packet_counted_not_refired(self):
        client = self.run_packets(
            [40, 300], [(0.0, 5000), (100.0, 4900)])
        assert client.schedule.fired_at_local == 5040.0
        assert client.schedule.packets_received == 2

    def test_newer_capture_supersedes(self):
        sim = Simulator(NetworkModel(0.0, Constant(10), seed=1))
        sim.register("host")
        holder = {}

        def handler(ctx, d):
            holder["c"].handle_countdown(decode_message(d.payload).payload)

        ctx = sim.register("c0", handler)
        holder["c"] = CaptureClient(ctx)
        sim.send("host", BROADCAST, countdown_frame(100, cid=1), at=0.0)
        sim.run_until(500)
        assert holder["c"].schedule.fired
        sim.send("host", BROADCAST, countdown_frame(200, cid=2), at=1000.0)
        sim.send("host", BROADCAST, countdown_frame(300, cid=1), at=1000.0)  # stale
        sim.run_until(5000)
        assert holder["c"].schedule.capture_id == 2
        assert holder["c"].schedule.fired_at_local == 1210.0
        assert holder["c"].schedule.packets_received == 1


class TestRunTrial:
    def test_constant_latency_zero_skew(self):
        result, _ = run_trial(7, loss=0.0, latency=Constant(40), n_clients=3)
        assert result.miss_count == 0
        for o in result.outcomes.values():
            assert o.effective_latency_ms == pytest.approx(40, abs=1e-9)
            assert o.min_gt_latency_ms == 40
        assert result.max_skew_ms == pytest.approx(0, abs=1e-9)

    def test_total_loss_means_miss(self):
        result, _ = run_trial(7, loss=1.0, n_clients=2)
        assert result.miss_count == 2
        assert result.mean_latency_ms is None
        assert all(o.packets_received == 0 for o in result.outcomes.values())

    def test_effective_equals_min_ground_truth(self):
        for seed in range(40):
            result, _ = run_trial(seed, loss=0.5, rate_hz=20, n_clients=2)
            for o in result.outcomes.values():
                if o.fired:
                    assert o.effective_latency_ms == pytest.approx(
                        o.min_gt_latency_ms, abs=1e-9)

    def test_clock_offsets_do_not_change_latency(self):
        plain, _ = run_trial(3, loss=0.3, n_clients=2)
        shifted, _ = run_trial(3, loss=0.3, n_clients=2,
                               clock_offsets={"host": -222.0, "c0": 12_345.0,
                                              "c1": -7_000.0})
        for name in plain.outcomes:
            a, b = plain.outcomes[name], shifted.outcomes[name]
            assert a.fired == b.fired
            if a.fired:
                assert b.effective_latency_ms == pytest.approx(
                    a.effective_latency_ms, abs=1e-6)

    def test_trace_contains_fire_events(self):
        result, sim = run_trial(5, loss=0.0, latency=Constant(40),
                                record_trace=True)
        fires = [r for r in sim.trace if r.event == "fire"]
        assert len(fires) == 2  # host + client
        assert any(r.device == "c0" for r in fires)

    def test_single_shot_miss_rate(self):
        study = run_study(300, loss=0.5, single_shot=True, seed0=100)
        assert 0.40 <= study.miss_rate <= 0.60
        # received -> fired with the packet's own latency
        trial, _ = run_trial(1, loss=0.0, latency=Constant(70), single_shot=True)
        assert trial.outcomes["c0"].effective_latency_ms == pytest.approx(70)

    def test_repeated_countdown_eliminates_misses(self):
        study = run_study(300, loss=0.5, rate_hz=20, seed0=0)
        assert study.total_missed == 0

    def test_rate_monotonicity_smoke(self):
        lat = {rate: run_study(80, loss=0.5, rate_hz=rate, seed0=50).mean_latency_ms
               for rate in (1, 20)}
        assert lat[20] <= lat[1]


class TestCaptureHost:
    def mk_host(self):
        sim = Simulator(NetworkModel(0.0, Constant(10), seed=1))
        ctx = sim.register("host")
        return sim, CaptureHost(ctx, sender_id=0)

    def test_double_start_rejected(self):
        sim, host = self.mk_host()
        host.start_capture()
        with pytest.raises(StateError):
            host.start_capture()

    def test_second_capture_after_fire(self):
        sim, host = self.mk_host()
        first = host.start_capture()
        sim.run_until(6000)
        assert first.host_fired_at_local == 5000.0
        second = host.start_capture()
        assert second.capture_id == first.capture_id + 1

    def test_video_mode_payload(self):
        sim, host = self.mk_host()
        seen = []
        sim.register("c0", lambda ctx, d: seen.append(decode_message(d.payload).payload))
        host.start_capture(CaptureMode.VIDEO, video_duration_ms=2000, rate_hz=1)
        sim.run_until(10_000)
        assert len(seen) == 6
        assert all(p.mode == CaptureMode.VIDEO and p.video_duration_ms == 2000
                   for p in seen)
