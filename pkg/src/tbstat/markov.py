"""Markov machinery for the token bucket filter.

Between token grants the variable-size filter is a continuous-time chain
driven by Poisson arrivals; each grant applies a deterministic jump.  This
module builds the pieces: the arrival rate matrix, the 0/1 replenishment
matrix, small per-period chains for the unit-size filter, and a partitioned
form of the rate matrix that exploits the block structure of the dynamics.
Matrix exponential actions use uniformization, and stationary distributions
come from power iteration on the embedded per-period operator, with a dense
linear solve kept as an independent cross-check for small chains.

Partitioned form.  Idle-buffer states evolve autonomously: between grants
the buffer can only gain packets, never lose them, so probability flows from
idle states into occupied ones and never back.  Occupied states at token
level T form a closed block fed only by the idle state at the same level.
The assembled generator for level T therefore acts on the idle block, the
level-T occupied block, and one explicit overflow coordinate that absorbs
the flow leaving idle states toward other levels' queues.  The overflow
coordinate keeps every row sum at zero, which the exponential kernels
require, without touching the dynamics of the tracked coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .statespace import StateSpace
from .dynamics import md1_step, periodic_transfer_step, var_replenish

__all__ = [
    "ArrivalDistribution",
    "build_replenishment_matrix",
    "build_rate_matrix",
    "PartitionedGenerator",
    "build_partitioned_generator",
    "build_periodic_transfer_chain",
    "build_md1_chain",
    "expm_action",
    "integrate_expm_action",
    "StationarySolve",
    "ConvergenceError",
    "stationary_power",
    "stationary_dense",
    "row_sum_defect",
]

GENERATOR_ROW_TOL = 1e-9

# Uniformization steps this many mean events at a time; larger horizons are
# split so the Poisson weights stay far from underflow.
_MAX_RATE_HORIZON = 128.0


@dataclass(frozen=True)
class ArrivalDistribution:
    """Truncated Poisson count distribution for arrivals in one period."""

    mean: float
    pmf: np.ndarray
    tail: float

    @classmethod
    def from_mean(cls, mean: float, tol: float = 1e-14) -> "ArrivalDistribution":
        if mean < 0 or not math.isfinite(mean):
            raise ValueError("mean arrival count must be finite and >= 0")
        if mean == 0:
            return cls(0.0, np.array([1.0]), 0.0)
        if math.exp(-mean) == 0.0:
            raise ValueError("mean arrival count too large for a dense pmf")
        terms = [math.exp(-mean)]
        cum = terms[0]
        k = 0
        cap = int(mean + 12 * math.sqrt(mean) + 60)
        while 1.0 - cum >= tol and k < cap:
            k += 1
            terms.append(terms[-1] * mean / k)
            cum += terms[-1]
        return cls(mean, np.array(terms), max(0.0, 1.0 - cum))


def build_replenishment_matrix(space: StateSpace) -> sp.csr_matrix:
    """Deterministic token-grant jump as a 0/1 stochastic matrix."""
    bucket = space.config.bucket
    cols = np.empty(space.n_states, dtype=np.int64)
    for i in range(space.n_states):
        cols[i] = space.index_of(var_replenish(space.state_at(i), bucket))
    rows = np.arange(space.n_states, dtype=np.int64)
    data = np.ones(space.n_states)
    return sp.csr_matrix((data, (rows, cols)), shape=(space.n_states,) * 2)


def build_rate_matrix(space: StateSpace) -> sp.csr_matrix:
    """Generator of the arrival process between token grants.

    From an idle buffer a packet either pays from the bucket and leaves, or
    opens the queue at the same token level.  From an occupied buffer a
    packet joins the tail when it fits; a drop leaves the state unchanged
    and so contributes nothing.  Each diagonal entry balances its row.
    """
    traffic = space.traffic
    lam = traffic.rate
    buffer_cap = space.config.buffer
    n_str = space.n_strings
    rows: list[int] = []
    cols: list[int] = []
    data: list[float] = []
    for level in range(space.config.bucket + 1):
        base = level * n_str
        for j, z in enumerate(space.strings):
            i = base + j
            out_rate = 0.0
            if j == 0:
                for size, prob in zip(traffic.sizes, traffic.probs):
                    rate = prob * lam
                    if level >= size:
                        target = (level - size) * n_str
                    else:
                        target = base + space.string_index[(size,)]
                    rows.append(i)
                    cols.append(target)
                    data.append(rate)
                    out_rate += rate
            else:
                room = buffer_cap - space.string_backlogs[j]
                for size, prob in zip(traffic.sizes, traffic.probs):
                    if size <= room:
                        rate = prob * lam
                        rows.append(i)
                        cols.append(base + space.string_index[z + (size,)])
                        data.append(rate)
                        out_rate += rate
            if out_rate != 0.0:
                rows.append(i)
                cols.append(i)
                data.append(-out_rate)
    mat = sp.csr_matrix(
        (data, (rows, cols)), shape=(space.n_states,) * 2
    )
    return mat


@dataclass
class PartitionedGenerator:
    """Blockwise view of the rate matrix.

    ``idle_block`` couples the idle-buffer states across token levels,
    ``queue_block`` couples occupied buffer strings (shared by every level),
    and ``coupling(level)`` injects idle-state probability into that level's
    queue.  ``gamma(level)`` assembles the three into one conservative
    generator with a trailing overflow coordinate; see the module docstring.
    """

    space: StateSpace
    idle_block: np.ndarray
    queue_block: sp.csr_matrix
    _couplings: list[sp.csr_matrix]
    _gammas: list[sp.csr_matrix] = field(default_factory=list)

    @property
    def n_idle(self) -> int:
        return self.space.config.bucket + 1

    @property
    def n_queue(self) -> int:
        return self.space.n_strings - 1

    @property
    def overflow_index(self) -> int:
        return self.n_idle + self.n_queue

    def coupling(self, level: int) -> sp.csr_matrix:
        return self._couplings[level]

    def gamma(self, level: int) -> sp.csr_matrix:
        return self._gammas[level]


def build_partitioned_generator(space: StateSpace) -> PartitionedGenerator:
    """Split the rate matrix into idle, queue and per-level coupling blocks."""
    traffic = space.traffic
    lam = traffic.rate
    bucket = space.config.bucket
    buffer_cap = space.config.buffer
    n_idle = bucket + 1
    n_queue = space.n_strings - 1

    idle = np.zeros((n_idle, n_idle))
    idle_out = np.zeros(n_idle)
    for level in range(n_idle):
        out_rate = 0.0
        for size, prob in zip(traffic.sizes, traffic.probs):
            rate = prob * lam
            if level >= size:
                idle[level, level - size] += rate
            out_rate += rate
        idle[level, level] = -out_rate
        idle_out[level] = out_rate

    q_rows: list[int] = []
    q_cols: list[int] = []
    q_data: list[float] = []
    for j in range(1, space.n_strings):
        z = space.strings[j]
        room = buffer_cap - space.string_backlogs[j]
        out_rate = 0.0
        for size, prob in zip(traffic.sizes, traffic.probs):
            if size <= room:
                rate = prob * lam
                q_rows.append(j - 1)
                q_cols.append(space.string_index[z + (size,)] - 1)
                q_data.append(rate)
                out_rate += rate
        if out_rate != 0.0:
            q_rows.append(j - 1)
            q_cols.append(j - 1)
            q_data.append(-out_rate)
    queue = sp.csr_matrix((q_data, (q_rows, q_cols)), shape=(n_queue, n_queue))

    couplings: list[sp.csr_matrix] = []
    for level in range(n_idle):
        c_cols: list[int] = []
        c_data: list[float] = []
        for size, prob in zip(traffic.sizes, traffic.probs):
            if level < size:
                c_cols.append(space.string_index[(size,)] - 1)
                c_data.append(prob * lam)
        rows = [level] * len(c_cols)
        couplings.append(
            sp.csr_matrix((c_data, (rows, c_cols)), shape=(n_idle, n_queue))
        )

    dim = n_idle + n_queue + 1
    gammas: list[sp.csr_matrix] = []
    for level in range(n_idle):
        g = sp.lil_matrix((dim, dim))
        g[:n_idle, :n_idle] = idle
        g[:n_idle, n_idle:-1] = couplings[level]
        g[n_idle:-1, n_idle:-1] = queue
        leak = -np.asarray(g.sum(axis=1)).ravel()
        for r in range(n_idle):
            if leak[r] != 0.0:
                g[r, dim - 1] = leak[r]
        gammas.append(g.tocsr())

    return PartitionedGenerator(space, idle, queue, couplings, gammas)


def _chain_from_step(
    step: Callable[[int, int], int], mean_arrivals: float, n_states: int
) -> np.ndarray:
    arr = ArrivalDistribution.from_mean(mean_arrivals)
    chain = np.zeros((n_states, n_states))
    saturating = n_states  # enough arrivals to pin the capped sum at its max
    for s in range(n_states):
        for a, p in enumerate(arr.pmf):
            chain[s, step(s, a)] += p
        chain[s, step(s, saturating)] += arr.tail
    return chain


def build_periodic_transfer_chain(
    mean_arrivals: float, buffer_cap: int, bucket: int
) -> np.ndarray:
    """Per-period chain of the unit-size filter's net coordinate."""
    n = buffer_cap + bucket + 1
    return _chain_from_step(
        lambda s, a: periodic_transfer_step(s, a, buffer_cap, bucket),
        mean_arrivals,
        n,
    )


def build_md1_chain(mean_arrivals: float, buffer_cap: int, bucket: int) -> np.ndarray:
    """Per-period chain of the finite M/D/1 contrast queue."""
    n = buffer_cap + bucket + 1
    return _chain_from_step(
        lambda s, a: md1_step(s, a, buffer_cap, bucket), mean_arrivals, n
    )


def row_sum_defect(mat) -> float:
    """Largest absolute row sum; zero for a conservative generator."""
    ones = np.ones(mat.shape[1])
    return float(np.abs(mat @ ones).max())


def _check_generator(gen) -> float:
    if gen.shape[0] != gen.shape[1]:
        raise ValueError("generator must be square")
    sums = np.asarray(gen.sum(axis=1)).ravel()
    excess = float(sums.max()) if sums.size else 0.0
    if excess > GENERATOR_ROW_TOL:
        raise ValueError(
            f"generator rows must not create probability mass "
            f"(excess {excess:.3e})"
        )
    rate = float(np.abs(gen.diagonal()).max()) if gen.shape[0] else 0.0
    return rate


def _uniformized_sum(gen, vec: np.ndarray, rate: float, t: float, tol: float,
                     weights: str) -> np.ndarray:
    """Shared Poisson-weighted power series for expm and its time average.

    ``weights='point'`` sums Poisson(rate*t) probabilities, giving the
    action of exp(gen*t); ``weights='average'`` sums scaled survival
    probabilities, giving the time average of the action over [0, t].
    """
    m = rate * t
    term = math.exp(-m)
    survival = 1.0 - term
    if weights == "point":
        w = term
        remaining = survival
    else:
        w = survival / m
        remaining = 1.0 - w
    power = vec.astype(float, copy=True)
    acc = w * power
    k = 0
    cap = int(m + 12 * math.sqrt(m) + 60)
    while remaining >= tol and k < cap:
        k += 1
        power = power + (power @ gen) / rate
        term = term * m / k
        survival -= term
        if weights == "point":
            w = term
        else:
            w = max(0.0, survival) / m
        acc += w * power
        remaining -= w
    return acc


def expm_action(gen, vec: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    """Propagate a row vector through exp(gen * t) by uniformization.

    Rows of ``gen`` may sum to zero (mass-conserving) or to a negative
    value (leaky, as in a killed process), but never to a positive one
    beyond 1e-9.  For a conserving generator the total mass of ``vec`` is
    preserved up to the truncation ``tol``.
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    rate = _check_generator(gen)
    out = np.asarray(vec, dtype=float).copy()
    if rate == 0.0 or t == 0.0:
        return out
    pieces = max(1, math.ceil(rate * t / _MAX_RATE_HORIZON))
    dt = t / pieces
    piece_tol = tol / pieces
    for _ in range(pieces):
        out = _uniformized_sum(gen, out, rate, dt, piece_tol, "point")
    return out


def integrate_expm_action(
    gen, vec: np.ndarray, horizon: float, tol: float = 1e-12
) -> np.ndarray:
    """Time average of ``vec @ exp(gen * s)`` for s in [0, horizon].

    The Poisson weights of uniformization integrate in closed form to scaled
    survival probabilities, so the average needs no quadrature grid.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rate = _check_generator(gen)
    start = np.asarray(vec, dtype=float).copy()
    if rate == 0.0:
        return start
    pieces = max(1, math.ceil(rate * horizon / _MAX_RATE_HORIZON))
    dt = horizon / pieces
    piece_tol = tol / (2 * pieces)
    acc = np.zeros_like(start)
    current = start
    for _ in range(pieces):
        acc += _uniformized_sum(gen, current, rate, dt, piece_tol, "average")
        current = _uniformized_sum(gen, current, rate, dt, piece_tol, "point")
    return acc / pieces


class StationarySolve(NamedTuple):
    pi: np.ndarray
    iterations: int
    residual: float


class ConvergenceError(RuntimeError):
    """Power iteration failed to reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def stationary_power(
    step: Callable[[np.ndarray], np.ndarray],
    dim: int,
    start: int = 0,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
) -> StationarySolve:
    """Fixed point of a stochastic map by power iteration.

    Returns the first iterate whose image moves it by at most ``tol`` in L1,
    along with the verified residual.  Periodic chains never settle: the
    residual stalls at a positive value until ``max_iters`` trips and a
    ConvergenceError carrying that residual is raised.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if not 0 <= start < dim:
        raise ValueError("start index outside state range")
    current = np.zeros(dim)
    current[start] = 1.0
    residual = math.inf
    for iteration in range(1, max_iters + 1):
        nxt = step(current)
        residual = float(np.abs(nxt - current).sum())
        if residual <= tol:
            return StationarySolve(current, iteration, residual)
        current = nxt
    raise ConvergenceError(
        f"no fixed point within {max_iters} iterations "
        f"(residual {residual:.3e}, tol {tol:.1e})",
        residual=residual,
        iterations=max_iters,
    )


def stationary_dense(chain: np.ndarray) -> np.ndarray:
    """Stationary row vector of a stochastic matrix by direct linear solve.

    Cross-check for modest sizes; replaces one balance equation with the
    normalization constraint.
    """
    chain = np.asarray(chain, dtype=float)
    n = chain.shape[0]
    system = chain.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(system, rhs)
    return pi / pi.sum()
