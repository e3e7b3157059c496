"""Tests for the single-event transition functions."""

import random

import pytest

from tbstat import (
    FixedState,
    SystemState,
    fixed_arrive,
    fixed_replenish,
    md1_step,
    net_coord,
    periodic_transfer_step,
    state_from_net_coord,
    var_arrive,
    var_replenish,
)


class TestFixedReplenish:
    def test_serves_the_head(self):
        assert fixed_replenish(FixedState(3, 0), 5) == FixedState(2, 0)

    def test_full_bucket_discards_the_token(self):
        assert fixed_replenish(FixedState(0, 5), 5) == FixedState(0, 5)

    def test_idle_system_banks_the_token(self):
        assert fixed_replenish(FixedState(0, 0), 5) == FixedState(0, 1)


class TestFixedArrive:
    def test_banked_token_forwards_instantly(self):
        assert fixed_arrive(FixedState(0, 2), 5) == (FixedState(0, 1), True)

    def test_full_buffer_drops(self):
        assert fixed_arrive(FixedState(5, 0), 5) == (FixedState(5, 0), False)

    def test_no_tokens_queues(self):
        assert fixed_arrive(FixedState(1, 0), 5) == (FixedState(2, 0), True)


class TestNetCoordinate:
    def test_round_trip_on_valid_states(self):
        for backlog in range(6):
            for tokens in range(4):
                if backlog and tokens:
                    continue  # both positive never occurs
                state = FixedState(backlog, tokens)
                assert state_from_net_coord(net_coord(state, 3), 3) == state

    def test_batch_step_floor(self):
        assert periodic_transfer_step(0, 0, 5, 5) == 0

    def test_batch_step_ceiling_then_service(self):
        assert periodic_transfer_step(10, 3, 5, 5) == 9

    def test_batch_step_interior(self):
        assert periodic_transfer_step(2, 1, 5, 5) == 2

    def test_md1_serves_fresh_arrivals(self):
        assert md1_step(0, 2, 5, 5) == 2

    def test_md1_empty_idles(self):
        assert md1_step(0, 0, 5, 5) == 0

    def test_md1_matches_batch_step_when_busy(self):
        assert md1_step(3, 0, 5, 5) == 2
        for s in range(1, 11):
            for a in range(4):
                assert md1_step(s, a, 5, 5) == periodic_transfer_step(s, a, 5, 5)


class TestVarReplenish:
    def test_grant_completes_the_head(self):
        got = var_replenish(SystemState(2, (3, 1)), 5)
        assert got == SystemState(0, (1,))

    def test_grant_banks_when_head_is_still_short(self):
        got = var_replenish(SystemState(1, (3, 2)), 5)
        assert got == SystemState(2, (3, 2))

    def test_full_bucket_idle_is_a_fixed_point(self):
        assert var_replenish(SystemState(5, ()), 5) == SystemState(5, ())

    def test_removes_at_most_the_head(self):
        before = SystemState(3, (4, 2, 1))
        after = var_replenish(before, 5)
        assert after.buffer in (before.buffer, before.buffer[1:])


class TestVarArrive:
    def test_instant_transfer_spends_tokens(self):
        assert var_arrive(SystemState(3, ()), 2, 5) == (SystemState(1, ()), True)

    def test_short_bucket_queues_the_packet(self):
        assert var_arrive(SystemState(0, ()), 2, 5) == (SystemState(0, (2,)), True)

    def test_full_buffer_drops(self):
        state = SystemState(0, (2, 3))
        assert var_arrive(state, 1, 5) == (state, False)

    def test_appends_preserve_order(self):
        state = SystemState(0, (3,))
        got, kept = var_arrive(state, 2, 5)
        assert kept and got.buffer == (3, 2)

    def test_busy_buffer_blocks_instant_transfer(self):
        # FCFS: even a payable packet waits behind the queue
        got, kept = var_arrive(SystemState(2, (3,)), 1, 5)
        assert kept and got == SystemState(2, (3, 1))


class TestTrajectoryProperties:
    def test_backlog_tokens_product_stays_zero(self):
        rng = random.Random(7)
        for _ in range(300):
            bucket = rng.randint(1, 8)
            buffer_cap = rng.randint(1, 8)
            state = FixedState(0, 0)
            for _ in range(60):
                if rng.random() < 0.5:
                    state = fixed_replenish(state, bucket)
                else:
                    state, _ = fixed_arrive(state, buffer_cap)
                assert state.backlog * state.tokens == 0
                assert 0 <= state.backlog <= buffer_cap
                assert 0 <= state.tokens <= bucket

    def test_net_coordinate_recursion_matches_raw_dynamics(self):
        rng = random.Random(11)
        for _ in range(500):
            bucket = rng.randint(1, 8)
            buffer_cap = rng.randint(1, 8)
            state = FixedState(0, 0)
            coord = net_coord(state, bucket)
            for _ in range(40):
                arrivals = rng.randint(0, 3)
                for _ in range(arrivals):
                    state, _ = fixed_arrive(state, buffer_cap)
                state = fixed_replenish(state, bucket)
                coord = periodic_transfer_step(coord, arrivals, buffer_cap, bucket)
                assert coord == net_coord(state, bucket)

    def test_unit_size_variable_dynamics_collapse_to_fixed(self):
        rng = random.Random(13)
        bucket, buffer_cap = 4, 6
        fixed = FixedState(0, 0)
        var = SystemState(0, ())
        for _ in range(4000):
            if rng.random() < 0.5:
                fixed = fixed_replenish(fixed, bucket)
                var = var_replenish(var, bucket)
            else:
                fixed, kept_f = fixed_arrive(fixed, buffer_cap)
                var, kept_v = var_arrive(var, 1, buffer_cap)
                assert kept_f == kept_v
            assert fixed == FixedState(len(var.buffer), var.tokens)
