"""
Skorokhod reflection of drift-plus-jump paths on the nonnegative orthant.

Given a potential-content path X and routing Q, computes the least
nondecreasing regulator Y with Z = X + (I - Q^T) Y >= 0, where Y_i only
grows while Z_i = 0. The exact solver is event driven: between events every
path is linear, so each segment reduces to one complementarity problem on
the set of empty buffers.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fluidnet.network import FluidNetwork, ReflectionMatrix
from fluidnet.paths import (
    PathDomainError,
    PiecewiseLinearPath,
    StepDriftPath,
    VectorPath,
)

logger = logging.getLogger(__name__)

EMPTY_TOL = 1e-12
LCP_TOL = 1e-14
LCP_MAX_ITER = 100_000
MAX_EVENTS = 1_000_000
ORACLE_TOL = 1e-10
ORACLE_MAX_ITER = 1_000_000


class ReflectionError(RuntimeError):
    """Raised when an iteration that should converge for a validated network does not."""


@dataclass(frozen=True)
class ReflectionEvent:
    """Start of a linear segment and the buffers empty during it (0-based)."""

    time: float
    empty: frozenset[int]


@dataclass(frozen=True)
class ReflectionSolution:
    Y: VectorPath
    Z: VectorPath
    events: tuple[ReflectionEvent, ...] = ()
    method: str = "exact"

    def terminal(self) -> tuple[float, ...]:
        """Z(T)."""
        return self.Z.value(self.Z.horizon)

    def regulator_terminal(self) -> tuple[float, ...]:
        return self.Y.value(self.Y.horizon)


# Jump schedule: strictly increasing times, each with the (coordinate, size) jumps there.
Schedule = list[tuple[float, list[tuple[int, float]]]]


def as_reflection_matrix(obj: "ReflectionMatrix | FluidNetwork | Sequence") -> ReflectionMatrix:
    if isinstance(obj, ReflectionMatrix):
        return obj
    if isinstance(obj, FluidNetwork):
        return obj.reflection_matrix()
    return ReflectionMatrix.from_routing(obj)


def _minimal_regulator(
    qt_rows: tuple, rhs: Sequence[float], active: Sequence[int]
) -> list[float]:
    """Least y >= 0, supported on active, with y_i = max(0, (Q^T y)_i - rhs_i) there."""
    y = [0.0] * len(rhs)
    if not active:
        return y
    for _ in range(LCP_MAX_ITER):
        change = 0.0
        scale = 1.0
        for i in active:
            v = -rhs[i]
            for j, q in qt_rows[i]:
                v += q * y[j]
            new = v if v > 0.0 else 0.0
            if new - y[i] > change:
                change = new - y[i]
            y[i] = new
            if new > scale:
                scale = new
        if change <= LCP_TOL * scale:
            return y
    raise ReflectionError(
        f"complementarity iteration did not converge in {LCP_MAX_ITER} sweeps"
        " (is the spectral radius of Q below 1?)"
    )


def _net_rates(
    qt_rows: tuple, base: Sequence[float], y: Sequence[float], pinned: set[int]
) -> list[float]:
    """base + y - Q^T y, exactly 0 where y pushes and clamped at 0 on pinned coordinates."""
    out = []
    for i, b in enumerate(base):
        if y[i] > 0.0:
            out.append(0.0)
            continue
        inflow = 0.0
        for j, q in qt_rows[i]:
            inflow += q * y[j]
        rate = b - inflow
        if i in pinned and rate < 0.0:
            rate = 0.0
        out.append(rate)
    return out


@dataclass
class _Trace:
    knots: list[float]
    z_right: list[tuple[float, ...]]
    z_left: list[tuple[float, ...]]
    y_values: list[tuple[float, ...]]
    events: list[ReflectionEvent]


def _evolve(
    matrix: ReflectionMatrix,
    drifts: Sequence[float],
    start: Sequence[float],
    schedule: Schedule,
    horizon: float,
    record: bool,
) -> tuple[list[float], list[float], _Trace | None]:
    """Run the event loop from X(0) = start; jumps at time 0 must already be in start."""
    qt = matrix.qt_rows
    d = len(drifts)
    every = set(range(d))

    y = _minimal_regulator(qt, start, range(d))
    z = _net_rates(qt, start, y, every)

    trace = None
    if record:
        trace = _Trace([0.0], [tuple(z)], [tuple(z)], [tuple(y)], [])

    t = 0.0
    k = 0
    while k < len(schedule) and schedule[k][0] <= 0.0:
        k += 1

    for _ in range(MAX_EVENTS):
        if t >= horizon:
            break
        empty = [i for i in range(d) if z[i] <= EMPTY_TOL]
        for i in empty:
            z[i] = 0.0
        ydot = _minimal_regulator(qt, drifts, empty)
        zdot = _net_rates(qt, drifts, ydot, set(empty))

        t_next = schedule[k][0] if k < len(schedule) else horizon
        hits: list[tuple[float, int]] = []
        for i in range(d):
            if zdot[i] < 0.0 and z[i] > 0.0:
                hit = t + z[i] / -zdot[i]
                if hit <= t_next:
                    hits.append((hit, i))
                    t_next = hit
        dt = t_next - t
        for i in range(d):
            y[i] += ydot[i] * dt
            z[i] += zdot[i] * dt
            if z[i] < EMPTY_TOL and zdot[i] < 0.0:
                z[i] = 0.0
        for hit, i in hits:
            if hit == t_next:
                z[i] = 0.0

        if record:
            trace.events.append(ReflectionEvent(t, frozenset(empty)))
        t = t_next
        left = tuple(z)
        jumped = k < len(schedule) and schedule[k][0] == t
        if jumped:
            for i, size in schedule[k][1]:
                z[i] += size
            k += 1
        if record and (dt > 0.0 or jumped):
            if t == trace.knots[-1]:
                trace.z_right[-1] = tuple(z)
            else:
                trace.knots.append(t)
                trace.z_left.append(left)
                trace.z_right.append(tuple(z))
                trace.y_values.append(tuple(y))
    else:
        raise ReflectionError(f"more than {MAX_EVENTS} reflection events")

    return z, y, trace


def _schedule_from_paths(steps: Sequence[StepDriftPath]) -> Schedule:
    by_time: dict[float, list[tuple[int, float]]] = {}
    for i, p in enumerate(steps):
        for u, x in p.jumps:
            by_time.setdefault(u, []).append((i, x))
    return sorted(by_time.items())


def _check_dims(matrix: ReflectionMatrix, x: VectorPath) -> None:
    if x.dim != matrix.d:
        raise PathDomainError(f"path has {x.dim} coordinates, network has {matrix.d} nodes")


def reflect(net: "ReflectionMatrix | FluidNetwork", x: VectorPath) -> ReflectionSolution:
    """Exact reflection (Y, Z) of a drift-plus-jump vector path."""
    matrix = as_reflection_matrix(net)
    _check_dims(matrix, x)
    steps = x.steps()
    horizon = x.horizon
    start = [p.value(0.0) for p in steps]
    _, _, trace = _evolve(
        matrix, [p.drift for p in steps], start, _schedule_from_paths(steps), horizon, record=True
    )
    logger.debug(f"reflect: {len(trace.events)} segments on [0, {horizon:g}]")

    # left limit at 0 is the pre-jump origin, pushed by Y(0)
    jump0 = [p.value(0.0) - p.origin for p in steps]
    trace.z_left[0] = tuple(z - j for z, j in zip(trace.z_right[0], jump0))

    knots = tuple(trace.knots)
    y_coords = []
    z_coords = []
    for i in range(matrix.d):
        ys = tuple(v[i] for v in trace.y_values)
        y_coords.append(PiecewiseLinearPath(knots, ys, ys))
        z_coords.append(PiecewiseLinearPath(
            knots, tuple(v[i] for v in trace.z_right), tuple(v[i] for v in trace.z_left)
        ))
    return ReflectionSolution(
        Y=VectorPath(tuple(y_coords)),
        Z=VectorPath(tuple(z_coords)),
        events=tuple(trace.events),
        method="exact",
    )


def terminal_content(net: "ReflectionMatrix | FluidNetwork", x: VectorPath) -> tuple[float, ...]:
    """Z(T) of the reflection, without recording breakpoints."""
    matrix = as_reflection_matrix(net)
    _check_dims(matrix, x)
    steps = x.steps()
    z, _, _ = _evolve(
        matrix, [p.drift for p in steps], [p.value(0.0) for p in steps],
        _schedule_from_paths(steps), x.horizon, record=False,
    )
    return tuple(z)


def terminal_content_from_jumps(
    matrix: ReflectionMatrix,
    drifts: Sequence[float],
    horizon: float,
    jumps: Sequence[tuple[float, int, float]],
) -> list[float]:
    """
    Z(T) for X(t) = drifts*t plus the given (time, coordinate, size) jumps.

    Skips path construction; used by the optimizer and the simulator.
    Sizes must be nonnegative and times within [0, horizon].
    """
    start = [0.0] * len(drifts)
    by_time: dict[float, list[tuple[int, float]]] = {}
    for u, i, x in jumps:
        if x <= 0.0:
            continue
        if u <= 0.0:
            start[i] += x
        else:
            by_time.setdefault(u, []).append((i, x))
    z, _, _ = _evolve(matrix, drifts, start, sorted(by_time.items()), horizon, record=False)
    return z


def reflect_fixedpoint_oracle(
    net: "ReflectionMatrix | FluidNetwork", x: VectorPath, grid_n: int
) -> ReflectionSolution:
    """
    Grid approximation of (Y, Z) by iterating eta <- 0 v sup_{s<=t}(Q^T eta(s) - x(s)).

    Independent of the event-driven solver; used only to cross-check it.
    Jump epochs are added to the grid and their left limits sampled too.
    """
    if grid_n < 2:
        raise ValueError(f"grid_n must be at least 2, got {grid_n}")
    matrix = as_reflection_matrix(net)
    _check_dims(matrix, x)
    steps = x.steps()
    horizon = x.horizon

    jump_epochs = {u for p in steps for u in p.jump_times() if u > 0.0}
    times = sorted(set(np.linspace(0.0, horizon, grid_n + 1).tolist()) | jump_epochs)
    times[-1] = horizon

    rows: list[tuple[float, ...]] = []
    left_rows: dict[int, int] = {}
    right_rows: list[int] = []
    for t in times:
        if t in jump_epochs:
            left_rows[len(right_rows)] = len(rows)
            rows.append(x.left_limit(t))
        right_rows.append(len(rows))
        rows.append(x.value(t))
    xi = np.asarray(rows, dtype=float)
    q = matrix.Q

    eta = np.zeros_like(xi)
    for _ in range(ORACLE_MAX_ITER):
        new = np.maximum(np.maximum.accumulate(eta @ q - xi, axis=0), 0.0)
        done = float(np.max(np.abs(new - eta))) < ORACLE_TOL
        eta = new
        if done:
            break
    else:
        raise ReflectionError(f"fixed-point oracle did not converge in {ORACLE_MAX_ITER} steps")

    z = xi + eta - eta @ q
    knots = tuple(times)
    right = np.asarray(right_rows)
    left = np.asarray([left_rows.get(k, r) for k, r in enumerate(right_rows)])
    y_coords = []
    z_coords = []
    for i in range(matrix.d):
        ys = tuple(eta[right, i].tolist())
        y_coords.append(PiecewiseLinearPath(knots, ys, ys))
        z_coords.append(PiecewiseLinearPath(
            knots, tuple(z[right, i].tolist()), tuple(z[left, i].tolist())
        ))
    return ReflectionSolution(
        Y=VectorPath(tuple(y_coords)), Z=VectorPath(tuple(z_coords)), method="oracle"
    )


def tandem_z2_terminal(
    r: Sequence[float],
    mu: Sequence[float],
    x1: float,
    u1: float,
    x2: float,
    u2: float,
    horizon: float,
) -> float:
    """
    Node-2 content at the horizon of a two-node tandem with one jump per node.

    Nested infima: Y1 = (-inf X1)^+, W = X2 - Y1, Z2(T) = W(T) + (-inf W)^+,
    with X1 = (mu1 - r1)t + x1 1(t >= u1) and X2 = (mu2 - r2 + r1)t + x2 1(t >= u2).
    Every infimum is attained at 0, u1, u2, T or the time node 1 first drains
    below its pre-jump minimum, so the evaluation is exact.
    """
    if x1 < 0.0 or x2 < 0.0:
        raise ValueError("tandem jump sizes must be nonnegative")
    if not (0.0 <= u1 <= horizon and 0.0 <= u2 <= horizon):
        raise ValueError("tandem jump times must lie in [0, T]")
    a1 = mu[0] - r[0]
    a2 = mu[1] - r[1] + r[0]

    def x1_at(t: float, left: bool = False) -> float:
        jumped = t > u1 or (t == u1 and not left)
        return a1 * t + (x1 if jumped else 0.0)

    def y1_at(t: float) -> float:
        # X1 is linear off u1, so its running minimum is read at 0, u1-, and t
        low = min(x1_at(0.0), x1_at(t))
        if u1 <= t:
            low = min(low, x1_at(u1, left=True))
        return max(0.0, -low)

    def w_at(t: float, left: bool = False) -> float:
        jumped = t > u2 or (t == u2 and not left)
        return a2 * t + (x2 if jumped else 0.0) - y1_at(t)

    candidates = {0.0, u1, u2, horizon}
    if a1 < 0.0:
        drained = u1 + x1 / -a1
        if drained <= horizon:
            candidates.add(drained)
    low_w = min(
        min(w_at(t), w_at(t, left=True)) if t > 0.0 else w_at(t) for t in candidates
    )
    return w_at(horizon) + max(0.0, -low_w)


def consolidate_jumps(x: VectorPath) -> VectorPath:
    """Move each coordinate's total jump mass onto its last jump epoch."""
    coords = []
    for p in x.steps():
        if len(p.jumps) <= 1:
            coords.append(p)
            continue
        coords.append(p.with_jumps([(p.jumps[-1][0], math.fsum(p.jump_sizes()))]))
    return VectorPath(tuple(coords))


def append_terminal_jump(x: VectorPath, a: Sequence[float]) -> VectorPath:
    """Add jump a_i at the horizon of coordinate i."""
    if len(a) != x.dim:
        raise ValueError(f"a has {len(a)} entries for a {x.dim}-d path")
    if any(v < 0.0 for v in a):
        raise ValueError("terminal jumps must be nonnegative")
    horizon = x.horizon
    return VectorPath(tuple(
        p.with_jumps(p.jumps + ((horizon, float(v)),)) if v > 0.0 else p
        for p, v in zip(x.steps(), a)
    ))
