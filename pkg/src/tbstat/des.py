"""Event-driven simulator for the token bucket filter.

Drives the exact same transition functions as the Markov model: exponential
interarrival times, sizes drawn i.i.d. from the traffic mix, and one token
granted at every exact multiple of the period, with simultaneous events
resolved token first.  Arrival instants and packet sizes come from separate
seeded substreams, so changing the size mix never perturbs the arrival
clock.  Statistics are collected time-weighted after a warmup span and
partitioned into equal-time segments for batch-means confidence intervals.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .statespace import FilterConfig, SystemState, TrafficSpec, backlog
from .dynamics import var_arrive, var_replenish

__all__ = [
    "SimStats",
    "simulate",
    "batch_confidence",
    "InvariantChecker",
    "InvariantViolation",
    "InsufficientData",
]

_CHUNK = 1 << 16
_TRACE_LEN = 16


class InvariantViolation(AssertionError):
    """A simulated state broke a structural invariant."""

    def __init__(self, message: str, trace: list):
        tail = "\n".join(f"  {t:.6f} {kind} {detail}" for t, kind, detail in trace)
        super().__init__(f"{message}\nlast events:\n{tail}" if trace else message)
        self.trace = trace


class InsufficientData(RuntimeError):
    """Not enough post-warmup samples to form the requested estimate."""


class InvariantChecker:
    """Structural checks applied to every post-event state.

    The buffer can never hold more than its capacity, the bucket never more
    than its size, and a waiting head packet means the bucket cannot pay for
    it.  When every packet has unit size the last condition collapses to
    the classic rule that backlog and tokens are never both positive, which
    ``unit_size`` makes an explicit check.
    """

    def __init__(self, bucket: int, buffer_cap: int, unit_size: bool = False):
        self.bucket = bucket
        self.buffer_cap = buffer_cap
        self.unit_size = unit_size
        self.events_checked = 0

    def check(self, state: SystemState, trace: list) -> None:
        self.events_checked += 1
        if not 0 <= state.tokens <= self.bucket:
            raise InvariantViolation(
                f"token count {state.tokens} outside [0, {self.bucket}]", trace
            )
        queued = backlog(state.buffer)
        if queued > self.buffer_cap:
            raise InvariantViolation(
                f"backlog {queued} exceeds buffer capacity {self.buffer_cap}",
                trace,
            )
        if self.unit_size and queued * state.tokens != 0:
            raise InvariantViolation(
                f"backlog {queued} and tokens {state.tokens} both positive",
                trace,
            )
        if state.buffer and state.tokens >= state.buffer[0]:
            raise InvariantViolation(
                f"head packet of size {state.buffer[0]} left waiting with "
                f"{state.tokens} tokens banked",
                trace,
            )


@dataclass
class SimStats:
    """Time-weighted and per-event tallies from one simulation run.

    Count arrays are indexed by traffic class, in traffic.sizes order.
    Whole-run totals back the conservation identity; the windowed arrays
    cover only the post-warmup span, split into ``segments`` equal spans
    whose partial sums feed batch_confidence.
    """

    traffic: TrafficSpec
    config: FilterConfig
    horizon: int
    warmup: int
    seed: int
    segments: int
    elapsed: float
    events: int = 0
    occupancy_time: np.ndarray = field(default=None)
    embedded_counts: np.ndarray = field(default=None)
    arrivals: np.ndarray = field(default=None)
    losses: np.ndarray = field(default=None)
    departures: np.ndarray = field(default=None)
    wait_sum: np.ndarray = field(default=None)
    class_time: np.ndarray = field(default=None)
    arrivals_all: np.ndarray = field(default=None)
    losses_all: np.ndarray = field(default=None)
    departures_all: np.ndarray = field(default=None)
    final_state: SystemState = SystemState(0, ())
    seg_span: np.ndarray = field(default=None)
    seg_arrivals: np.ndarray = field(default=None)
    seg_losses: np.ndarray = field(default=None)
    seg_departures: np.ndarray = field(default=None)
    seg_wait: np.ndarray = field(default=None)
    seg_class_time: np.ndarray = field(default=None)
    invariants_checked: int = 0

    def occupancy_distribution(self) -> np.ndarray:
        """Time-averaged joint (token level, backlog) distribution."""
        return self.occupancy_time / self.elapsed

    def embedded_distribution(self) -> np.ndarray:
        """Post-grant empirical (token level, backlog) distribution."""
        total = self.embedded_counts.sum()
        return self.embedded_counts / total

    def loss_ratio(self, size: int) -> float:
        k = self.traffic.class_index(size)
        if self.arrivals[k] == 0:
            raise InsufficientData(f"no post-warmup arrivals of size {size}")
        return float(self.losses[k] / self.arrivals[k])

    def mean_wait(self, size: int) -> float:
        k = self.traffic.class_index(size)
        if self.departures[k] == 0:
            raise InsufficientData(f"no post-warmup departures of size {size}")
        return float(self.wait_sum[k] / self.departures[k])

    def mean_class_backlog(self, size: int) -> float:
        k = self.traffic.class_index(size)
        return float(self.class_time[k] / self.elapsed)

    def conservation_defect(self) -> np.ndarray:
        """Whole-run arrivals minus losses, departures and leftovers."""
        left = np.array(
            [self.final_state.buffer.count(s) for s in self.traffic.sizes]
        )
        return self.arrivals_all - self.losses_all - self.departures_all - left


def simulate(
    traffic: TrafficSpec,
    config: FilterConfig,
    horizon: int,
    seed: int = 0,
    warmup: int | None = None,
    check_invariants: bool = False,
    segments: int = 100,
) -> SimStats:
    """Run the filter for ``horizon`` replenishment periods.

    ``warmup`` periods (default 10% of the horizon) are simulated but not
    measured.  The run starts from an empty system with an empty bucket.
    With ``check_invariants`` every post-event state is validated and the
    first violation raises, carrying the most recent events.
    """
    if max(traffic.sizes) > config.buffer:
        raise ValueError("largest packet size exceeds buffer capacity")
    if horizon < 1:
        raise ValueError("horizon must be >= 1 period")
    if warmup is None:
        warmup = horizon // 10
    if not 0 <= warmup < horizon:
        raise ValueError("warmup must lie within the horizon")
    if segments < 1:
        raise ValueError("segments must be >= 1")

    bucket, buffer_cap, period = config.bucket, config.buffer, config.period
    lam = traffic.rate
    sizes = traffic.sizes
    n_classes = len(sizes)
    width = buffer_cap + 1

    seq_times, seq_sizes = np.random.SeedSequence(seed).spawn(2)
    rng_times = np.random.default_rng(seq_times)
    rng_sizes = np.random.default_rng(seq_sizes)
    probs = np.array(traffic.probs)

    end_t = horizon * period
    warm_t = warmup * period
    span = end_t - warm_t
    seg_len = span / segments
    last_seg = segments - 1

    occupancy = [[0.0] * width for _ in range(bucket + 1)]
    embedded = [[0] * width for _ in range(bucket + 1)]
    arrivals = [0] * n_classes
    losses = [0] * n_classes
    departures = [0] * n_classes
    wait_sum = [0.0] * n_classes
    class_time = [0.0] * n_classes
    arrivals_all = [0] * n_classes
    losses_all = [0] * n_classes
    departures_all = [0] * n_classes
    seg_span = [0.0] * segments
    seg_arrivals = [[0] * n_classes for _ in range(segments)]
    seg_losses = [[0] * n_classes for _ in range(segments)]
    seg_departures = [[0] * n_classes for _ in range(segments)]
    seg_wait = [[0.0] * n_classes for _ in range(segments)]
    seg_class_time = [[0.0] * n_classes for _ in range(segments)]

    state = SystemState(0, ())
    queue: deque[tuple[float, int]] = deque()
    counts = [0] * n_classes
    cur_backlog = 0

    checker = (
        InvariantChecker(bucket, buffer_cap, unit_size=sizes == (1,))
        if check_invariants
        else None
    )
    trace: deque = deque(maxlen=_TRACE_LEN)

    gaps: list[float] = []
    drawn: list[int] = []
    cursor = 0

    def refill() -> None:
        nonlocal gaps, drawn, cursor
        gaps = rng_times.exponential(1.0 / lam, _CHUNK).tolist()
        drawn = rng_sizes.choice(n_classes, _CHUNK, p=probs).tolist()
        cursor = 0

    if lam > 0:
        refill()
        next_arr = gaps[0]
        next_class = drawn[0]
        cursor = 1
    else:
        next_arr = math.inf
        next_class = -1

    rep_n = 1
    next_rep = period
    last_t = 0.0
    events = 0

    while True:
        take_token = rep_n <= horizon and next_rep <= next_arr
        if not take_token and next_arr >= end_t:
            break
        now = next_rep if take_token else next_arr

        measured = max(last_t, warm_t)
        if now > measured:
            dt = now - measured
            occupancy[state.tokens][cur_backlog] += dt
            seg = int((measured - warm_t) / seg_len)
            if seg > last_seg:
                seg = last_seg
            seg_span[seg] += dt
            row = seg_class_time[seg]
            for k in range(n_classes):
                c = counts[k]
                if c:
                    class_time[k] += c * dt
                    row[k] += c * dt
        last_t = now
        in_window = now >= warm_t
        events += 1

        if take_token:
            had = len(state.buffer)
            state = var_replenish(state, bucket)
            if len(state.buffer) < had:
                t_arr, k = queue.popleft()
                cur_backlog -= sizes[k]
                counts[k] -= 1
                departures_all[k] += 1
                if in_window:
                    departures[k] += 1
                    wait_sum[k] += now - t_arr
                    seg = int((now - warm_t) / seg_len)
                    if seg > last_seg:
                        seg = last_seg
                    seg_departures[seg][k] += 1
                    seg_wait[seg][k] += now - t_arr
            if in_window:
                embedded[state.tokens][cur_backlog] += 1
            rep_n += 1
            next_rep = rep_n * period
            if checker:
                trace.append((now, "token", f"-> {state}"))
                checker.check(state, list(trace))
        else:
            k = next_class
            size = sizes[k]
            arrivals_all[k] += 1
            seg = -1
            if in_window:
                arrivals[k] += 1
                seg = int((now - warm_t) / seg_len)
                if seg > last_seg:
                    seg = last_seg
                seg_arrivals[seg][k] += 1
            had = len(state.buffer)
            state, kept = var_arrive(state, size, buffer_cap)
            if not kept:
                losses_all[k] += 1
                if in_window:
                    losses[k] += 1
                    seg_losses[seg][k] += 1
            elif len(state.buffer) == had:
                departures_all[k] += 1
                if in_window:
                    departures[k] += 1
                    seg_departures[seg][k] += 1
            else:
                queue.append((now, k))
                cur_backlog += size
                counts[k] += 1
            if cursor == _CHUNK:
                refill()
            next_arr = now + gaps[cursor]
            next_class = drawn[cursor]
            cursor += 1
            if checker:
                trace.append((now, "arrival", f"size {size} -> {state}"))
                checker.check(state, list(trace))

    if end_t > max(last_t, warm_t):
        measured = max(last_t, warm_t)
        dt = end_t - measured
        occupancy[state.tokens][cur_backlog] += dt
        seg = int((measured - warm_t) / seg_len)
        if seg > last_seg:
            seg = last_seg
        seg_span[seg] += dt
        for k in range(n_classes):
            if counts[k]:
                class_time[k] += counts[k] * dt
                seg_class_time[seg][k] += counts[k] * dt

    return SimStats(
        traffic=traffic,
        config=config,
        horizon=horizon,
        warmup=warmup,
        seed=seed,
        segments=segments,
        elapsed=span,
        events=events,
        occupancy_time=np.array(occupancy),
        embedded_counts=np.array(embedded),
        arrivals=np.array(arrivals),
        losses=np.array(losses),
        departures=np.array(departures),
        wait_sum=np.array(wait_sum),
        class_time=np.array(class_time),
        arrivals_all=np.array(arrivals_all),
        losses_all=np.array(losses_all),
        departures_all=np.array(departures_all),
        final_state=state,
        seg_span=np.array(seg_span),
        seg_arrivals=np.array(seg_arrivals),
        seg_losses=np.array(seg_losses),
        seg_departures=np.array(seg_departures),
        seg_wait=np.array(seg_wait),
        seg_class_time=np.array(seg_class_time),
        invariants_checked=checker.events_checked if checker else 0,
    )


def batch_confidence(
    stats: SimStats,
    batches: int,
    metrics: tuple[str, ...] = ("loss", "wait", "backlog"),
) -> dict:
    """Batch-means 95% confidence intervals for the per-class metrics.

    Groups the run's segments into ``batches`` consecutive batches and
    returns ``{metric: {size: (mean, half_width)}}`` for the requested
    metrics (loss ratio, mean wait, mean backlog), using the normal 1.96
    half-width.  A batch with no samples for a requested metric raises
    InsufficientData; restricting ``metrics`` lets callers read loss bands
    from runs where some class saw too few departures to form wait bands.
    """
    if batches < 2:
        raise ValueError("need at least 2 batches")
    if batches > stats.segments:
        raise InsufficientData(
            f"{batches} batches requested but only {stats.segments} segments"
        )
    groups = np.array_split(np.arange(stats.segments), batches)
    sizes = stats.traffic.sizes
    pieces = {
        "loss": (stats.seg_losses, stats.seg_arrivals),
        "wait": (stats.seg_wait, stats.seg_departures),
        "backlog": (stats.seg_class_time, stats.seg_span[:, None]),
    }
    unknown = set(metrics) - set(pieces)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    out: dict = {}
    for name, (num, den) in pieces.items():
        if name not in metrics:
            continue
        den = np.broadcast_to(den, num.shape)
        per_class: dict = {}
        for k, size in enumerate(sizes):
            values = []
            for g in groups:
                d = den[g, k].sum()
                if d == 0:
                    raise InsufficientData(
                        f"a batch has no {name} samples for size {size}"
                    )
                values.append(num[g, k].sum() / d)
            values = np.array(values)
            mean = float(values.mean())
            half = float(1.96 * values.std(ddof=1) / math.sqrt(batches))
            per_class[size] = (mean, half)
        out[name] = per_class
    return out
