"""State space of a token bucket filter with variable-size packets.

The filter grants one token per replenishment period into a bucket holding at
most ``bucket`` tokens, and queues packets in a FCFS ingress buffer holding at
most ``buffer`` token units.  A system state pairs the current token count
with the string of packet sizes waiting in the buffer; the empty string means
an idle buffer.  This module enumerates, counts and indexes those states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "TrafficSpec",
    "FilterConfig",
    "SystemState",
    "enumerate_strings",
    "count_strings",
    "cardinality_bound",
    "backlog",
    "class_count",
    "StateSpace",
    "build_state_space",
    "reachable_indices",
]

PROB_TOL = 1e-12


class SystemState(NamedTuple):
    """Token count plus the buffered packet sizes, head of the queue first."""

    tokens: int
    buffer: tuple[int, ...]


@dataclass(frozen=True)
class TrafficSpec:
    """Compound Poisson packet flow: rate, admissible sizes and their mix.

    ``sizes`` lists the packet sizes (token units, strictly increasing) and
    ``probs`` the probability of each size for an arriving packet.  ``rate``
    is the Poisson arrival intensity; zero is allowed and models a silenced
    source.
    """

    sizes: tuple[int, ...]
    probs: tuple[float, ...]
    rate: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.sizes:
            raise ValueError("traffic needs at least one packet size")
        if any(s < 1 for s in self.sizes):
            raise ValueError("packet sizes must be positive integers")
        if any(a >= b for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("packet sizes must be strictly increasing")
        if len(self.probs) != len(self.sizes):
            raise ValueError("probs must match sizes in length")
        if any(p <= 0 for p in self.probs):
            raise ValueError("size probabilities must be positive")
        if abs(sum(self.probs) - 1.0) > PROB_TOL:
            raise ValueError("size probabilities must sum to 1 within 1e-12")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError("arrival rate must be finite and non-negative")

    @property
    def n_classes(self) -> int:
        return len(self.sizes)

    @property
    def mean_size(self) -> float:
        return sum(s * p for s, p in zip(self.sizes, self.probs))

    def class_index(self, size: int) -> int:
        try:
            return self.sizes.index(size)
        except ValueError:
            raise ValueError(f"size {size} is not a traffic class") from None


@dataclass(frozen=True)
class FilterConfig:
    """Filter geometry: bucket capacity, buffer capacity, token period.

    A zero-capacity bucket is permitted; it models a filter that can never
    bank a token, so every packet has to queue.
    """

    bucket: int
    buffer: int
    period: float

    def __post_init__(self) -> None:
        if self.bucket < 0:
            raise ValueError("bucket capacity must be >= 0")
        if self.buffer < 1:
            raise ValueError("buffer capacity must be >= 1")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError("replenishment period must be positive and finite")


def _normalized_sizes(sizes: Iterable[int]) -> tuple[int, ...]:
    out = tuple(sorted(set(int(s) for s in sizes)))
    if not out:
        raise ValueError("alphabet of packet sizes must be nonempty")
    if out[0] < 1:
        raise ValueError("packet sizes must be positive integers")
    return out


def enumerate_strings(sizes: Iterable[int], limit: int) -> list[tuple[int, ...]]:
    """All buffer strings over ``sizes`` with total size at most ``limit``.

    Returned in lexicographic order: the empty string first, every prefix
    before its extensions, symbols compared numerically.
    """
    alphabet = _normalized_sizes(sizes)
    if limit < 0:
        raise ValueError("limit must be >= 0")
    out: list[tuple[int, ...]] = []

    def grow(prefix: tuple[int, ...], total: int) -> None:
        out.append(prefix)
        for s in alphabet:
            if total + s <= limit:
                grow(prefix + (s,), total + s)

    grow((), 0)
    return out


def count_strings(sizes: Iterable[int], limit: int) -> int:
    """Number of buffer strings with total size at most ``limit``.

    Counts by total size: one empty string, and every string of total n ends
    in some size s, leaving a string of total n - s.
    """
    alphabet = _normalized_sizes(sizes)
    if limit < 0:
        raise ValueError("limit must be >= 0")
    per_total = [0] * (limit + 1)
    per_total[0] = 1
    for n in range(1, limit + 1):
        per_total[n] = sum(per_total[n - s] for s in alphabet if s <= n)
    return sum(per_total)


def cardinality_bound(sizes: Iterable[int], limit: int) -> float:
    """Geometric growth estimate for the string count: |sizes|**(limit/min).

    An estimate of scale, not an exact bound for every alphabet; it is exact
    for singleton alphabets and dominates the count for the unit-size case.
    """
    alphabet = _normalized_sizes(sizes)
    if limit < 0:
        raise ValueError("limit must be >= 0")
    return float(len(alphabet)) ** (limit / alphabet[0])


def backlog(buf: tuple[int, ...]) -> int:
    """Token units held in the buffer: the sum of queued packet sizes."""
    return sum(buf)


def class_count(size: int, buf: tuple[int, ...]) -> int:
    """How many queued packets have the given size."""
    return buf.count(size)


class StateSpace:
    """Indexed product of token levels and buffer strings.

    States are ordered level-major: all strings at token level 0, then level
    1, and so on; within a level the strings sit in lexicographic order with
    the empty string first.  The index of ``(T, z)`` is ``T * n_strings +
    string_index[z]``, so each level occupies one contiguous slice whose
    first entry is the idle-buffer state for that level.
    """

    def __init__(self, traffic: TrafficSpec, config: FilterConfig):
        if max(traffic.sizes) > config.buffer:
            raise ValueError(
                f"largest packet size {max(traffic.sizes)} exceeds buffer "
                f"capacity {config.buffer}"
            )
        self.traffic = traffic
        self.config = config
        self.strings: tuple[tuple[int, ...], ...] = tuple(
            enumerate_strings(traffic.sizes, config.buffer)
        )
        self.string_index: dict[tuple[int, ...], int] = {
            z: j for j, z in enumerate(self.strings)
        }
        self.n_strings = len(self.strings)
        self.n_states = (config.bucket + 1) * self.n_strings
        self.string_backlogs = np.array([backlog(z) for z in self.strings])

    def index_of(self, state: SystemState) -> int:
        if not 0 <= state.tokens <= self.config.bucket:
            raise KeyError(f"token level {state.tokens} outside bucket range")
        try:
            j = self.string_index[state.buffer]
        except KeyError:
            raise KeyError(f"buffer {state.buffer} not in state space") from None
        return state.tokens * self.n_strings + j

    def state_at(self, index: int) -> SystemState:
        if not 0 <= index < self.n_states:
            raise IndexError(index)
        level, j = divmod(index, self.n_strings)
        return SystemState(level, self.strings[j])

    @cached_property
    def states(self) -> list[SystemState]:
        return [self.state_at(i) for i in range(self.n_states)]

    def level_slice(self, level: int) -> slice:
        """All states at one token level, idle-buffer state first."""
        if not 0 <= level <= self.config.bucket:
            raise IndexError(level)
        return slice(level * self.n_strings, (level + 1) * self.n_strings)

    def nonempty_slice(self, level: int) -> slice:
        """The occupied-buffer states of one token level."""
        if not 0 <= level <= self.config.bucket:
            raise IndexError(level)
        return slice(level * self.n_strings + 1, (level + 1) * self.n_strings)

    @cached_property
    def empty_indices(self) -> np.ndarray:
        """Indices of the idle-buffer state at each token level."""
        levels = np.arange(self.config.bucket + 1)
        return levels * self.n_strings

    @cached_property
    def token_of_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.config.bucket + 1), self.n_strings)

    @cached_property
    def backlog_of_state(self) -> np.ndarray:
        return np.tile(self.string_backlogs, self.config.bucket + 1)


def build_state_space(traffic: TrafficSpec, config: FilterConfig) -> StateSpace:
    """Enumerate and index every (token level, buffer string) pair."""
    return StateSpace(traffic, config)


def reachable_indices(space: StateSpace) -> np.ndarray:
    """Indices reachable from the full-bucket idle state.

    Optional pruning aid; the solvers run on the full enumerated space and
    simply leave zero mass on states the dynamics cannot reach.
    """
    from . import dynamics

    bucket = space.config.bucket
    buffer_cap = space.config.buffer
    start = space.index_of(SystemState(bucket, ()))
    seen = {start}
    frontier = [start]
    while frontier:
        idx = frontier.pop()
        state = space.state_at(idx)
        nexts = [dynamics.var_replenish(state, bucket)]
        for size in space.traffic.sizes:
            nxt, _ = dynamics.var_arrive(state, size, buffer_cap)
            nexts.append(nxt)
        for nxt in nexts:
            j = space.index_of(nxt)
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    return np.array(sorted(seen))
