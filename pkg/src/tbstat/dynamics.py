"""Transition functions for the token bucket filter.

Two views of the same device.  The unit-size view tracks (backlog, tokens)
when every packet costs one token; the variable-size view tracks the token
count plus the exact string of queued packet sizes.  Replenishment functions
apply one token grant, arrival functions apply one packet; both are pure and
total, so the Markov builders and the event simulator share them.

For the unit-size filter, at most one of backlog and tokens is ever positive
on any trajectory started from a valid state: a packet and a spare token
cannot coexist, because the packet would have consumed it.  That makes the
single coordinate ``backlog - tokens + bucket`` a faithful summary, and the
per-period recursions below evolve it directly.
"""

from __future__ import annotations

from typing import NamedTuple

from .statespace import SystemState, backlog as _backlog

__all__ = [
    "FixedState",
    "fixed_replenish",
    "fixed_arrive",
    "net_coord",
    "state_from_net_coord",
    "periodic_transfer_step",
    "md1_step",
    "var_replenish",
    "var_arrive",
]


class FixedState(NamedTuple):
    """Unit-size filter state: packets waiting, tokens banked."""

    backlog: int
    tokens: int


def fixed_replenish(state: FixedState, bucket: int) -> FixedState:
    """Grant one token: serve the head packet if any, else bank the token."""
    if state.backlog > 0:
        return FixedState(state.backlog - 1, state.tokens)
    return FixedState(0, min(bucket, state.tokens + 1))


def fixed_arrive(state: FixedState, buffer_cap: int) -> tuple[FixedState, bool]:
    """Admit one unit packet; returns the new state and whether it was kept.

    A banked token forwards the packet instantly; otherwise it queues unless
    the buffer is already full.
    """
    if state.tokens > 0:
        return FixedState(state.backlog, state.tokens - 1), True
    if state.backlog == buffer_cap:
        return state, False
    return FixedState(state.backlog + 1, state.tokens), True


def net_coord(state: FixedState, bucket: int) -> int:
    """Collapse (backlog, tokens) to backlog - tokens + bucket."""
    return state.backlog - state.tokens + bucket


def state_from_net_coord(coord: int, bucket: int) -> FixedState:
    """Invert net_coord on the valid set where backlog * tokens == 0."""
    net = coord - bucket
    return FixedState(max(0, net), -min(0, net))


def periodic_transfer_step(
    coord: int, arrivals: int, buffer_cap: int, bucket: int
) -> int:
    """One period of the net coordinate: batch the arrivals, grant a token.

    Arrivals pile up first, capped by the combined buffer-plus-bucket range,
    then the single token either serves a packet or joins the bucket.
    """
    cap = buffer_cap + bucket
    return max(0, min(cap, coord + arrivals) - 1)


def md1_step(coord: int, arrivals: int, buffer_cap: int, bucket: int) -> int:
    """One period of a finite M/D/1 queue with the same coordinate range.

    Differs from the token bucket only when the queue is empty: an idle
    server discards its slot instead of banking it, so from zero the new
    coordinate is just the capped arrival count.
    """
    cap = buffer_cap + bucket
    if coord > 0:
        return max(0, min(cap, coord + arrivals) - 1)
    return max(0, min(cap, arrivals))


def var_replenish(state: SystemState, bucket: int) -> SystemState:
    """Grant one token to the variable-size filter.

    If the grant completes the head packet's price, the packet departs and
    the change stays in the bucket.  Otherwise the token is banked, capped
    at the bucket size; overflow while a packet waits cannot happen on
    reachable states because the head would already have been served.
    """
    buf = state.buffer
    if buf:
        left = state.tokens - buf[0] + 1
        if left >= 0:
            return SystemState(left, buf[1:])
        return SystemState(min(bucket, state.tokens + 1), buf)
    return SystemState(min(bucket, state.tokens + 1), ())


def var_arrive(
    state: SystemState, size: int, buffer_cap: int
) -> tuple[SystemState, bool]:
    """Admit one packet of the given size; returns (state, kept).

    Service is strictly FCFS: with packets already waiting, a newcomer joins
    the tail (or is dropped when it would not fit) even if the bucket could
    pay for it.  With an idle buffer, a sufficiently funded packet passes
    straight through; otherwise it opens the queue.
    """
    buf = state.buffer
    if buf:
        if _backlog(buf) + size <= buffer_cap:
            return SystemState(state.tokens, buf + (size,)), True
        return state, False
    if state.tokens >= size:
        return SystemState(state.tokens - size, ()), True
    return SystemState(state.tokens, (size,)), True
