import time

from cloudguardian.chain import ChainConfig, SimChain
from cloudguardian.engine import EngineConfig, SyncEngine
from cloudguardian.scheduler import Scheduler
from cloudguardian.store import RecordStore
from cloudguardian.vault import KdfParams
from cloudguardian.workload import gen_records

FAST_KDF = KdfParams(n=2**10)


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def monotonic(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


def make_engine(tmp_path):
    store = RecordStore()
    chain = SimChain(ChainConfig(rng_seed=1))
    addr = chain.deploy_contract()
    return SyncEngine(
        store, chain, addr, str(tmp_path / "v.vault"), "pw",
        EngineConfig(rng_seed=1, vault_kdf=FAST_KDF),
    )


def run_with_fake_clock(scheduler, clock, stop_at):
    scheduler.run(should_stop=lambda: clock.now >= stop_at)


def test_three_and_a_half_intervals_give_exactly_three_anchors(tmp_path):
    engine = make_engine(tmp_path)
    clock = FakeClock()
    scheduler = Scheduler(
        engine, "p2", interval_s=1.0, monotonic=clock.monotonic, sleep=clock.sleep
    )
    anchors = []
    # re-seed between ticks so every tick has something to anchor
    original_anchor = engine.anchor
    def reseeding_anchor(protocol):
        outcome = original_anchor(protocol)
        anchors.append(clock.now)
        engine.store.insert_records(gen_records(2, seed=int(clock.now)))
        return outcome
    engine.anchor = reseeding_anchor

    engine.store.insert_records(gen_records(2, seed=0))
    run_with_fake_clock(scheduler, clock, stop_at=3.5)

    assert anchors == [1.0, 2.0, 3.0]
    assert scheduler.log.anchors == 3


def test_empty_store_gives_skip_logs_not_anchors(tmp_path):
    engine = make_engine(tmp_path)
    clock = FakeClock()
    scheduler = Scheduler(
        engine, "p2", interval_s=1.0, monotonic=clock.monotonic, sleep=clock.sleep
    )
    run_with_fake_clock(scheduler, clock, stop_at=3.5)
    assert scheduler.log.anchors == 0
    assert scheduler.log.skips == 3


def test_long_anchor_delays_but_never_doubles(tmp_path):
    engine = make_engine(tmp_path)
    clock = FakeClock()
    scheduler = Scheduler(
        engine, "p2", interval_s=1.0, monotonic=clock.monotonic, sleep=clock.sleep
    )
    fired = []
    original_anchor = engine.anchor
    def slow_anchor(protocol):
        fired.append(clock.now)
        clock.now += 2.5  # runs well past the next two deadlines
        outcome = original_anchor(protocol)
        engine.store.insert_records(gen_records(1, seed=len(fired)))
        return outcome
    engine.anchor = slow_anchor

    engine.store.insert_records(gen_records(1, seed=0))
    run_with_fake_clock(scheduler, clock, stop_at=6.0)

    # fires at 1.0; finishes at 3.5; next at 4.5 (delayed), not 2.0 and 3.0
    assert fired == [1.0, 4.5]


def test_per_tick_errors_recorded_not_fatal(tmp_path):
    engine = make_engine(tmp_path)
    clock = FakeClock()
    scheduler = Scheduler(
        engine, "p2", interval_s=1.0, monotonic=clock.monotonic, sleep=clock.sleep
    )
    def broken_anchor(protocol):
        raise RuntimeError("boom")
    engine.anchor = broken_anchor
    run_with_fake_clock(scheduler, clock, stop_at=2.5)
    assert scheduler.log.errors == 2
    assert scheduler.log.ticks[0].detail == "boom"


def test_threaded_start_stop(tmp_path):
    engine = make_engine(tmp_path)
    engine.store.insert_records(gen_records(2, seed=5))
    scheduler = Scheduler(engine, "p2", interval_s=0.05)
    scheduler.start()
    deadline = time.monotonic() + 2.0
    while scheduler.log.anchors < 1 and time.monotonic() < deadline:
        time.sleep(0.01)
    scheduler.stop()
    assert scheduler.log.anchors == 1
    assert scheduler.log.skips >= 0
    anchors_after_stop = scheduler.log.anchors
    time.sleep(0.15)
    assert scheduler.log.anchors == anchors_after_stop


def test_interval_must_be_positive(tmp_path):
    engine = make_engine(tmp_path)
    try:
        Scheduler(engine, "p2", interval_s=0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero interval accepted")
