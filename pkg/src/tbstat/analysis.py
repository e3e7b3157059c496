"""Stationary performance statistics of the token bucket filter.

The embedded chain observes the system immediately after each token grant;
its stationary vector feeds time averages over one replenishment period,
taken blockwise through the partitioned generator.  Because arrivals are
Poisson, an arriving packet sees exactly those time-averaged probabilities,
so the blocking probability of a size class is the time-averaged mass of
the states whose buffer cannot fit one more packet of that size.  Waiting
times then follow from the time-averaged per-class backlog and the accepted
rate by Little's law.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .statespace import StateSpace, SystemState
from .markov import (
    PartitionedGenerator,
    build_partitioned_generator,
    build_rate_matrix,
    build_replenishment_matrix,
    expm_action,
    integrate_expm_action,
    stationary_power,
)

__all__ = [
    "StationaryResult",
    "solve_stationary",
    "net_to_backlog_distribution",
    "time_average_distribution",
    "time_average",
    "occupancy_table",
    "loss_ratio",
    "class_backlog",
    "waiting_time",
    "ClassMetrics",
    "class_metrics",
]


@dataclass
class StationaryResult:
    """Stationary distribution over the full state space, with diagnostics."""

    space: StateSpace
    pi: np.ndarray
    iterations: int
    residual: float
    wall_time: float = 0.0

    def idle_distribution(self) -> np.ndarray:
        """Mass of the idle-buffer state at each token level."""
        return self.pi[self.space.empty_indices].copy()

    def level(self, level: int) -> np.ndarray:
        """Mass of every buffer string at one token level."""
        return self.pi[self.space.level_slice(level)].copy()

    def level_queue(self, level: int) -> np.ndarray:
        """Mass of the occupied-buffer strings at one token level."""
        return self.pi[self.space.nonempty_slice(level)].copy()


def solve_stationary(
    space: StateSpace,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
    kernel_tol: float | None = None,
) -> StationaryResult:
    """Stationary vector of the per-period operator by power iteration.

    One step propagates through the arrival generator for a full period and
    then applies the token grant.  Iteration starts from the full-bucket
    idle state, so states the dynamics cannot reach keep zero mass.
    """
    rate_matrix = build_rate_matrix(space)
    grant_t = build_replenishment_matrix(space).T.tocsr()
    period = space.config.period
    ktol = kernel_tol if kernel_tol is not None else min(1e-12, tol / 10)

    def step(vec: np.ndarray) -> np.ndarray:
        moved = expm_action(rate_matrix, vec, period, ktol)
        return grant_t @ moved

    start = space.index_of(SystemState(space.config.bucket, ()))
    began = time.perf_counter()
    solve = stationary_power(step, space.n_states, start, tol, max_iters)
    elapsed = time.perf_counter() - began
    return StationaryResult(
        space, solve.pi, solve.iterations, solve.residual, elapsed
    )


def net_to_backlog_distribution(
    pi_net: np.ndarray, buffer_cap: int, bucket: int
) -> np.ndarray:
    """Backlog distribution from a net-coordinate distribution.

    Coordinates up to the bucket size all mean an empty buffer (they differ
    only in banked tokens); coordinates above it are backlog plus bucket.
    """
    pi_net = np.asarray(pi_net, dtype=float)
    if pi_net.shape != (buffer_cap + bucket + 1,):
        raise ValueError("net-coordinate vector has wrong length")
    out = np.zeros(buffer_cap + 1)
    out[0] = pi_net[: bucket + 1].sum()
    out[1:] = pi_net[bucket + 1 :]
    return out


def _level_integrals(
    result: StationaryResult,
    part: PartitionedGenerator,
    levels: list[int],
    tol: float,
) -> dict[int, np.ndarray]:
    """Time-averaged block vectors [idle, level queue, overflow] per level."""
    idle = result.pi[result.space.empty_indices]
    period = result.space.config.period
    out: dict[int, np.ndarray] = {}
    for level in levels:
        start = np.concatenate(
            [idle, result.pi[result.space.nonempty_slice(level)], [0.0]]
        )
        out[level] = integrate_expm_action(part.gamma(level), start, period, tol)
    return out


def time_average_distribution(
    result: StationaryResult,
    part: PartitionedGenerator | None = None,
    tol: float = 1e-12,
) -> np.ndarray:
    """Time-averaged probability of every state over one period.

    The occupied-buffer mass of each token level comes from that level's
    block propagation; the idle-state mass evolves autonomously and is read
    from any one block (level 0 here).
    """
    space = result.space
    if part is None:
        part = build_partitioned_generator(space)
    n_idle = part.n_idle
    levels = list(range(n_idle))
    integrals = _level_integrals(result, part, levels, tol)
    avg = np.zeros(space.n_states)
    for level in levels:
        avg[space.nonempty_slice(level)] = integrals[level][n_idle:-1]
    avg[space.empty_indices] = integrals[0][:n_idle]
    return avg


def _membership(space: StateSpace, members) -> np.ndarray:
    if isinstance(members, np.ndarray) and members.dtype == bool:
        if members.shape != (space.n_states,):
            raise ValueError("membership mask has wrong length")
        return members
    mask = np.zeros(space.n_states, dtype=bool)
    for state in members:
        mask[space.index_of(state)] = True
    return mask


def time_average(
    result: StationaryResult,
    part: PartitionedGenerator,
    members,
    tol: float = 1e-12,
    idle_term_level: int = 0,
) -> float:
    """Fraction of time the system spends in a set of states.

    ``members`` is a boolean mask over the state space or an iterable of
    states.  Occupied-buffer members are integrated level by level; the
    idle-buffer members are read from the block of ``idle_term_level``,
    whose choice cannot matter because the idle dynamics are shared.
    """
    space = result.space
    mask = _membership(space, members)
    n_idle = part.n_idle
    idle_mask = mask[space.empty_indices]
    total = 0.0
    levels = [
        level for level in range(n_idle) if mask[space.nonempty_slice(level)].any()
    ]
    if idle_mask.any() and idle_term_level not in levels:
        levels.append(idle_term_level)
    integrals = _level_integrals(result, part, levels, tol)
    for level in levels:
        queue_mask = mask[space.nonempty_slice(level)]
        if queue_mask.any():
            total += float(integrals[level][n_idle:-1][queue_mask].sum())
    if idle_mask.any():
        total += float(integrals[idle_term_level][:n_idle][idle_mask].sum())
    return total


def occupancy_table(
    result: StationaryResult,
    part: PartitionedGenerator | None = None,
    tol: float = 1e-12,
    averaged: np.ndarray | None = None,
) -> np.ndarray:
    """Joint time-averaged distribution of (token level, backlog).

    Rows index token levels 0..bucket, columns backlog 0..buffer.
    """
    space = result.space
    if averaged is None:
        averaged = time_average_distribution(result, part, tol)
    table = np.zeros((space.config.bucket + 1, space.config.buffer + 1))
    np.add.at(
        table,
        (space.token_of_state, space.backlog_of_state),
        averaged,
    )
    return table


def loss_ratio(
    result: StationaryResult,
    part: PartitionedGenerator | None = None,
    size: int = 1,
    tol: float = 1e-12,
    averaged: np.ndarray | None = None,
) -> float:
    """Stationary loss probability for packets of one size.

    A Poisson arrival samples the time-averaged state, so the loss ratio is
    the averaged mass of states whose buffer lacks room for the packet.  An
    idle buffer always has room because sizes never exceed the buffer.
    """
    space = result.space
    if size not in space.traffic.sizes:
        raise ValueError(f"size {size} is not a traffic class")
    if averaged is None:
        averaged = time_average_distribution(result, part, tol)
    blocking = space.backlog_of_state > space.config.buffer - size
    blocking &= space.backlog_of_state > 0
    return float(averaged[blocking].sum())


def class_backlog(
    result: StationaryResult,
    part: PartitionedGenerator | None = None,
    size: int = 1,
    tol: float = 1e-12,
    averaged: np.ndarray | None = None,
) -> float:
    """Time-averaged number of queued packets of one size."""
    space = result.space
    if size not in space.traffic.sizes:
        raise ValueError(f"size {size} is not a traffic class")
    if averaged is None:
        averaged = time_average_distribution(result, part, tol)
    counts = np.array([z.count(size) for z in space.strings])
    weights = np.tile(counts, space.config.bucket + 1)
    return float(averaged @ weights)


def waiting_time(
    mean_backlog: float, loss: float, rate: float, probability: float
) -> float | None:
    """Mean queueing delay of accepted packets of one class, by Little's law.

    Returns None when the class has no accepted throughput (fully blocked or
    silenced), where the mean wait is undefined.
    """
    effective = (1.0 - loss) * rate * probability
    if effective <= 0.0:
        return None
    return mean_backlog / effective


@dataclass(frozen=True)
class ClassMetrics:
    """Per-size stationary performance figures."""

    size: int
    probability: float
    loss_ratio: float
    mean_backlog: float
    mean_wait: float | None
    throughput: float


def class_metrics(
    result: StationaryResult,
    part: PartitionedGenerator | None = None,
    tol: float = 1e-12,
) -> list[ClassMetrics]:
    """Loss, backlog, wait and throughput for every traffic class."""
    space = result.space
    if part is None:
        part = build_partitioned_generator(space)
    averaged = time_average_distribution(result, part, tol)
    rate = space.traffic.rate
    out = []
    for size, prob in zip(space.traffic.sizes, space.traffic.probs):
        loss = loss_ratio(result, part, size, tol, averaged)
        queued = class_backlog(result, part, size, tol, averaged)
        wait = waiting_time(queued, loss, rate, prob)
        out.append(
            ClassMetrics(
                size=size,
                probability=prob,
                loss_ratio=loss,
                mean_backlog=queued,
                mean_wait=wait,
                throughput=(1.0 - loss) * rate * prob,
            )
        )
    return out
