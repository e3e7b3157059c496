"""Tests for the stationary solution and its output statistics."""

import numpy as np
import pytest

from tbstat import (
    FilterConfig,
    SystemState,
    TrafficSpec,
    build_partitioned_generator,
    build_periodic_transfer_chain,
    build_rate_matrix,
    build_replenishment_matrix,
    build_state_space,
    class_backlog,
    class_metrics,
    expm_action,
    integrate_expm_action,
    loss_ratio,
    net_to_backlog_distribution,
    occupancy_table,
    solve_stationary,
    stationary_dense,
    time_average,
    time_average_distribution,
    waiting_time,
)
from tests.conftest import reference_traffic


@pytest.fixture(scope="module")
def solved_reference(reference_config):
    space = build_state_space(reference_traffic(0.5), reference_config)
    result = solve_stationary(space)
    part = build_partitioned_generator(space)
    return space, result, part


@pytest.fixture(scope="module")
def solved_small():
    space = build_state_space(
        TrafficSpec((1, 2), (0.6, 0.4), 0.8), FilterConfig(2, 3, 1.0)
    )
    result = solve_stationary(space)
    part = build_partitioned_generator(space)
    return space, result, part


class TestSolveStationary:
    def test_distribution_and_residual(self, solved_reference):
        _, result, _ = solved_reference
        assert abs(result.pi.sum() - 1.0) < 1e-10
        assert result.pi.min() >= 0.0
        assert result.residual <= 1e-10
        assert result.iterations > 0
        assert result.wall_time > 0.0

    def test_vanishing_traffic_parks_at_full_bucket(self):
        space = build_state_space(
            TrafficSpec((1,), (1.0,), 1e-7), FilterConfig(1, 1, 1.0)
        )
        result = solve_stationary(space)
        assert result.pi[space.index_of(SystemState(1, ()))] > 1 - 1e-4

    def test_fixed_point_property(self, solved_reference):
        space, result, _ = solved_reference
        rate = build_rate_matrix(space)
        grant = build_replenishment_matrix(space)
        stepped = expm_action(rate, result.pi, 1.0) @ grant
        assert np.abs(stepped - result.pi).sum() <= 1e-10

    def test_unreachable_states_carry_no_mass(self, solved_reference):
        space, result, _ = solved_reference
        # a queued head the bucket could pay for is never visited
        for i, state in enumerate(space.states):
            if state.buffer and state.tokens >= state.buffer[0]:
                assert result.pi[i] == 0.0

    def test_partition_views(self, solved_reference):
        space, result, _ = solved_reference
        assert result.idle_distribution().shape == (6,)
        total = result.idle_distribution().sum()
        total += sum(result.level_queue(t).sum() for t in range(6))
        assert abs(total - 1.0) < 1e-10


class TestNetToBacklogDistribution:
    def test_point_mass_at_zero(self):
        pi = np.zeros(11)
        pi[0] = 1.0
        out = net_to_backlog_distribution(pi, 5, 5)
        assert out[0] == 1.0

    def test_bucket_boundary_collapses_to_empty(self):
        pi = np.zeros(11)
        pi[5] = 1.0
        out = net_to_backlog_distribution(pi, 5, 5)
        assert out[0] == 1.0

    def test_uniform_small_case(self):
        out = net_to_backlog_distribution(np.full(3, 1 / 3), 1, 1)
        assert np.allclose(out, [2 / 3, 1 / 3])

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            net_to_backlog_distribution(np.ones(4) / 4, 5, 5)


class TestUnitSizeUnification:
    @pytest.mark.parametrize("rate", [0.25, 0.5, 1.0])
    def test_variable_solver_reproduces_the_transfer_chain(self, rate):
        config = FilterConfig(5, 5, 1.0)
        space = build_state_space(TrafficSpec((1,), (1.0,), rate), config)
        result = solve_stationary(space, tol=1e-12)
        chain = build_periodic_transfer_chain(rate, 5, 5)
        pi_net = stationary_dense(chain)
        # both solutions observe the system right after a token grant
        embedded = np.zeros(11)
        for i, state in enumerate(space.states):
            embedded[len(state.buffer) - state.tokens + 5] += result.pi[i]
        assert np.abs(embedded - pi_net).max() < 1e-8


class TestTimeAverage:
    def test_full_space_is_one(self, solved_reference):
        space, result, part = solved_reference
        mask = np.ones(space.n_states, dtype=bool)
        assert time_average(result, part, mask) == pytest.approx(1.0, abs=1e-10)

    def test_empty_set_is_zero(self, solved_reference):
        space, result, part = solved_reference
        mask = np.zeros(space.n_states, dtype=bool)
        assert time_average(result, part, mask) == 0.0

    def test_additive_over_disjoint_sets(self, solved_reference):
        space, result, part = solved_reference
        rng = np.random.default_rng(3)
        split = rng.random(space.n_states) < 0.5
        left = time_average(result, part, split)
        right = time_average(result, part, ~split)
        assert left + right == pytest.approx(1.0, abs=1e-10)

    def test_accepts_state_iterables(self, solved_reference):
        space, result, part = solved_reference
        states = [SystemState(5, ()), SystemState(0, (4, 1))]
        mask = np.zeros(space.n_states, dtype=bool)
        for s in states:
            mask[space.index_of(s)] = True
        assert time_average(result, part, states) == pytest.approx(
            time_average(result, part, mask), abs=1e-14
        )

    def test_idle_term_level_cannot_matter(self, solved_reference):
        space, result, part = solved_reference
        mask = np.zeros(space.n_states, dtype=bool)
        mask[space.empty_indices] = True
        values = [
            time_average(result, part, mask, idle_term_level=k) for k in range(6)
        ]
        assert max(values) - min(values) < 1e-10

    def test_blocks_match_the_full_generator(self, solved_small):
        space, result, part = solved_small
        full = build_rate_matrix(space)
        rng = np.random.default_rng(17)
        mask = rng.random(space.n_states) < 0.4
        via_blocks = time_average(result, part, mask)
        averaged_full = integrate_expm_action(full, result.pi, 1.0)
        via_full = float(averaged_full[mask].sum())
        assert abs(via_blocks - via_full) < 1e-10

    def test_averaged_distribution_sums_to_one(self, solved_reference):
        _, result, part = solved_reference
        averaged = time_average_distribution(result, part)
        assert abs(averaged.sum() - 1.0) < 1e-10
        assert averaged.min() >= 0.0


class TestOccupancyTable:
    def test_normalized_grid(self, solved_reference):
        _, result, part = solved_reference
        table = occupancy_table(result, part)
        assert table.shape == (6, 6)
        assert table.min() >= 0.0
        assert abs(table.sum() - 1.0) < 1e-8

    def test_vanishing_traffic_sits_idle_at_full_bucket(self):
        space = build_state_space(
            TrafficSpec((1, 2), (0.5, 0.5), 1e-8), FilterConfig(2, 2, 1.0)
        )
        result = solve_stationary(space)
        table = occupancy_table(result)
        assert table[2, 0] > 1 - 1e-5


class TestLossRatio:
    def test_blocking_set_for_unit_packets(self, solved_reference):
        space, result, part = solved_reference
        averaged = time_average_distribution(result, part)
        direct = averaged[space.backlog_of_state == 5].sum()
        assert loss_ratio(result, part, size=1) == pytest.approx(
            float(direct), abs=1e-12
        )

    def test_vanishing_traffic_never_blocks(self):
        space = build_state_space(
            TrafficSpec((1, 2), (0.5, 0.5), 1e-8), FilterConfig(2, 2, 1.0)
        )
        result = solve_stationary(space)
        assert loss_ratio(result, size=2) < 1e-6

    def test_monotone_in_packet_size(self, solved_reference):
        _, result, part = solved_reference
        losses = [loss_ratio(result, part, size=s) for s in (1, 2, 3, 4)]
        assert losses == sorted(losses)

    def test_rejects_unknown_size(self, solved_reference):
        _, result, part = solved_reference
        with pytest.raises(ValueError):
            loss_ratio(result, part, size=5)


class TestClassBacklog:
    def test_unit_size_matches_the_occupancy_mean(self):
        config = FilterConfig(5, 5, 1.0)
        space = build_state_space(TrafficSpec((1,), (1.0,), 0.5), config)
        result = solve_stationary(space)
        part = build_partitioned_generator(space)
        table = occupancy_table(result, part)
        mean_backlog = float(table.sum(axis=0) @ np.arange(6))
        assert class_backlog(result, part, size=1) == pytest.approx(
            mean_backlog, abs=1e-8
        )

    def test_weighted_sum_matches_token_backlog(self, solved_reference):
        space, result, part = solved_reference
        averaged = time_average_distribution(result, part)
        total_tokens = float(averaged @ space.backlog_of_state)
        by_class = sum(
            s * class_backlog(result, part, size=s) for s in (1, 2, 3, 4)
        )
        assert by_class == pytest.approx(total_tokens, abs=1e-10)


class TestWaitingTime:
    def test_zero_backlog_means_zero_wait(self):
        assert waiting_time(0.0, 0.2, 0.5, 0.4) == 0.0

    def test_plain_quotient(self):
        assert waiting_time(0.2, 0.0, 0.5, 0.4) == pytest.approx(1.0)

    def test_fully_blocked_class_is_undefined(self):
        assert waiting_time(0.3, 1.0, 0.5, 0.4) is None

    def test_silenced_source_is_undefined(self):
        assert waiting_time(0.0, 0.0, 0.0, 1.0) is None


class TestClassMetrics:
    def test_little_identity_holds_exactly(self, solved_reference):
        _, result, part = solved_reference
        for m in class_metrics(result, part):
            assert m.throughput == pytest.approx(
                (1 - m.loss_ratio) * 0.5 * m.probability, abs=1e-15
            )
            assert m.mean_backlog == pytest.approx(
                m.mean_wait * m.throughput, abs=1e-12
            )

    def test_covers_every_class_in_order(self, solved_reference):
        _, result, part = solved_reference
        metrics = class_metrics(result, part)
        assert [m.size for m in metrics] == [1, 2, 3, 4]
        assert [m.probability for m in metrics] == [0.4, 0.3, 0.2, 0.1]
