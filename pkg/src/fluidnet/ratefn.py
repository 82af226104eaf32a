"""
Rate functions and the overflow optimization.

V(y) = inf sum_{i in J} c_i x_i^alpha over one-jump-per-node inputs
(x_i at time u_i) whose reflected content satisfies b^T Z(T) >= y.
The general solver is a heuristic search (coarse grid, extreme points,
coordinate descent) whose witness is always re-verified by the exact
reflection; the two-node tandem has a closed form.
"""

import bisect
import itertools
import logging
import math
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fluidnet.network import FluidNetwork
from fluidnet.paths import PathDomainError, StepDriftPath, VectorPath
from fluidnet.reflection import ReflectionError, reflect, terminal_content_from_jumps

logger = logging.getLogger(__name__)

DRIFT_TOL = 1e-9
FEASIBILITY_TOL = 1e-9
WITNESS_TOL = 1e-6
BISECT_TOL = 1e-12
REFINE_TOL = 1e-8
DEFAULT_GRID = 41
DEFAULT_BUDGET = 20_000
DEFAULT_STARTS = 16


class OverflowProblem(BaseModel):
    """Minimize the rate subject to b^T Z(T) >= y on a network over [0, T]."""

    model_config = ConfigDict(frozen=True)

    net: FluidNetwork
    b: list[float]
    y: float = Field(gt=0.0)
    T: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_weights(self) -> "OverflowProblem":
        if len(self.b) != self.net.d:
            raise ValueError(f"b must have {self.net.d} entries")
        if any(v < 0.0 for v in self.b):
            raise ValueError("b must be nonnegative")
        if not self.active_nodes:
            logger.warning("No exogenous node has positive weight in b")
        return self

    @property
    def weighted_nodes(self) -> list[int]:
        return [i for i, v in enumerate(self.b) if v > 0.0]

    @property
    def active_nodes(self) -> list[int]:
        exo = set(self.net.exogenous)
        return [i for i in self.weighted_nodes if i in exo]

    def at(self, y: float) -> "OverflowProblem":
        """Same problem at another threshold; y is validated like the first one."""
        return type(self)(net=self.net, b=self.b, y=y, T=self.T)


class RateSolution(BaseModel):
    value: float
    x_star: list[float]
    u_star: list[float]
    feasible: bool
    method: Literal["grid", "extreme", "refine", "tandem-analytic"]
    achieved: float | None = None
    regime: int | None = None
    case: str | None = None
    evaluations: int = 0
    # false when no weighted node has exogenous input; V(y) then need not be the decay rate
    exogenous_weighted: bool = True

    @property
    def support(self) -> list[int]:
        return [i for i, x in enumerate(self.x_star) if x > 0.0]


def _jump_cost(c: float, alpha: float, sizes: Sequence[float]) -> float:
    return c * math.fsum(x**alpha for x in sizes)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= DRIFT_TOL * max(1.0, abs(a), abs(b))


def rate_of_path(net: FluidNetwork, x: VectorPath) -> float:
    """
    Rate of a potential-content path: sum over exogenous j of c_j sum (jumps)^alpha.

    Infinite unless every coordinate starts at 0, carries the fluid drift
    (mu - (I - Q^T) r)_j, and only exogenous coordinates jump.
    """
    if x.dim != net.d:
        return math.inf
    try:
        steps = x.steps()
    except PathDomainError:
        return math.inf
    expected = net.content_drifts()
    exo = set(net.exogenous)
    total = []
    for j, p in enumerate(steps):
        if p.origin != 0.0 or not _close(p.drift, float(expected[j])):
            return math.inf
        if j in exo:
            total.append(_jump_cost(net.c[j], net.alpha, p.jump_sizes()))
        elif p.jumps:
            return math.inf
    return math.fsum(total)


def input_rate(net: FluidNetwork, inputs: VectorPath) -> float:
    """Rate of an input path J: drift mu_j on exogenous nodes, identically zero elsewhere."""
    if inputs.dim != net.d:
        return math.inf
    try:
        steps = inputs.steps()
    except PathDomainError:
        return math.inf
    exo = set(net.exogenous)
    total = []
    for j, p in enumerate(steps):
        if p.origin != 0.0:
            return math.inf
        if j in exo:
            if not _close(p.drift, net.mu[j]):
                return math.inf
            total.append(_jump_cost(net.c[j], net.alpha, p.jump_sizes()))
        elif p.drift != 0.0 or p.jumps:
            return math.inf
    return math.fsum(total)


def one_jump_path(
    net: FluidNetwork, horizon: float, x: Sequence[float], u: Sequence[float]
) -> VectorPath:
    """Potential content with fluid drifts and one jump x_i at u_i per node."""
    drifts = net.content_drifts().tolist()
    return VectorPath(tuple(
        StepDriftPath(horizon, drift, ((ui, xi),) if xi > 0.0 else ())
        for drift, xi, ui in zip(drifts, x, u)
    ))


def terminal_functional(p: OverflowProblem, x: Sequence[float], u: Sequence[float]) -> float:
    """b^T Z(T) for one jump x_i at time u_i on each node (x_i = 0 off J)."""
    if len(x) != p.net.d or len(u) != p.net.d:
        raise ValueError(f"x and u must have {p.net.d} entries")
    exo = set(p.net.exogenous)
    for i, xi in enumerate(x):
        if xi < 0.0:
            raise ValueError(f"x[{i + 1}] is negative")
        if xi > 0.0 and i not in exo:
            raise ValueError(f"node {i + 1} has no exogenous input and cannot jump")
    z = terminal_content_from_jumps(
        p.net.reflection_matrix(), p.net.content_drifts().tolist(), p.T,
        [(ui, i, xi) for i, (xi, ui) in enumerate(zip(x, u))],
    )
    return math.fsum(bi * zi for bi, zi in zip(p.b, z))


def holder_bound(p: OverflowProblem, y1: float, y2: float) -> float:
    """max over weighted exogenous i of c_i / b_i^alpha, times |y1 - y2|^alpha."""
    if y1 <= 0.0 or y2 <= 0.0:
        raise ValueError("thresholds must be positive")
    if y1 == y2:
        return 0.0
    nodes = p.active_nodes
    if not nodes:
        return math.inf
    net = p.net
    constant = max(net.c[i] / p.b[i] ** net.alpha for i in nodes)
    return constant * abs(y1 - y2) ** net.alpha


class _Candidate:
    __slots__ = ("cost", "x", "u", "stage")

    def __init__(self, cost: float, x: tuple[float, ...], u: tuple[float, ...], stage: str):
        self.cost = cost
        self.x = x
        self.u = u
        self.stage = stage

    def key(self) -> tuple:
        return _tie_key(self.cost, self.x)


def _tie_key(cost: float, x: tuple[float, ...]) -> tuple:
    # ties go to fewer jumps, then to the lexicographically smaller x
    return (float(f"{cost:.10g}"), sum(1 for v in x if v > 0.0), x)


class _OverflowSearch:
    """Search state over (x_i, u_i) for the exogenous nodes, in sorted node order."""

    def __init__(self, p: OverflowProblem, grid: int, budget: int, starts: int):
        net = p.net
        self.p = p
        self.matrix = net.reflection_matrix()
        self.drifts = net.content_drifts().tolist()
        self.drains = net.drain_rates().tolist()
        self.nodes = sorted(net.exogenous)
        self.c = [net.c[i] for i in self.nodes]
        self.alpha = net.alpha
        self.horizon = p.T
        self.grid = max(grid, 3)
        self.budget = budget
        self.starts = starts
        weights = [1.0 / p.b[i] for i in p.weighted_nodes]
        self.x_max = (
            p.y * max(weights) + math.fsum(max(v, 0.0) for v in self.drains) * p.T
            if weights else 0.0
        )
        self.threshold = p.y - FEASIBILITY_TOL * max(1.0, p.y)
        self.evaluations = 0
        self.pool: list[_Candidate] = []

    def achieved(self, x: Sequence[float], u: Sequence[float]) -> float:
        self.evaluations += 1
        z = terminal_content_from_jumps(
            self.matrix, self.drifts, self.horizon,
            [(ui, i, xi) for i, xi, ui in zip(self.nodes, x, u)],
        )
        return math.fsum(bi * zi for bi, zi in zip(self.p.b, z))

    def feasible(self, x: Sequence[float], u: Sequence[float]) -> bool:
        return self.achieved(x, u) >= self.threshold

    def cost(self, x: Sequence[float]) -> float:
        return math.fsum(ci * xi**self.alpha for ci, xi in zip(self.c, x))

    def canonical(self, x: Sequence[float], u: Sequence[float]) -> tuple[tuple, tuple]:
        return tuple(x), tuple(self.horizon if xi == 0.0 else ui for xi, ui in zip(x, u))

    def offer(self, x: Sequence[float], u: Sequence[float], stage: str) -> None:
        """Add a feasible point to the pool of best starts."""
        x, u = self.canonical(x, u)
        cand = _Candidate(self.cost(x), x, u, stage)
        bisect.insort(self.pool, cand, key=_Candidate.key)
        del self.pool[self.starts:]

    def worst_pooled(self) -> float:
        return self.pool[-1].cost if len(self.pool) >= self.starts else math.inf

    def minimal_size(
        self, x: Sequence[float], u: Sequence[float], k: int, lo: float, hi: float
    ) -> tuple[float, ...] | None:
        """Least x_k in [lo, hi] that keeps (x, u) feasible, or None if hi does not."""
        x = list(x)
        x[k] = hi
        if not self.feasible(x, u):
            return None
        x[k] = lo
        if self.feasible(x, u):
            return tuple(x)
        tol = BISECT_TOL * max(self.x_max, 1.0)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            x[k] = mid
            if self.feasible(x, u):
                hi = mid
            else:
                lo = mid
        x[k] = hi
        return tuple(x)

    def grid_stage(self) -> None:
        k = len(self.nodes)
        m = min(self.grid, max(3, int(self.budget ** (1.0 / (2 * k)))))
        sizes = np.linspace(0.0, self.x_max, m).tolist()[1:]
        times = np.linspace(0.0, self.horizon, m).tolist()
        per_node = [(0.0, self.horizon)] + [(xv, uv) for xv in sizes for uv in times]
        for combo in itertools.product(per_node, repeat=k):
            x = tuple(xv for xv, _ in combo)
            if self.cost(x) > self.worst_pooled():
                continue
            u = tuple(uv for _, uv in combo)
            if self.feasible(x, u):
                self.offer(x, u, "grid")
        logger.info(f"Grid stage: {m} points per axis, {len(self.pool)} feasible starts kept")

    def extreme_stage(self) -> None:
        """Saturate all but one node of each support at its drain over [0, T]; solve the last."""
        k = len(self.nodes)
        times = np.linspace(0.0, self.horizon, self.grid).tolist()
        found = 0
        for size in range(1, k + 1):
            for support in itertools.combinations(range(k), size):
                for free in support:
                    base = [0.0] * k
                    u = [self.horizon] * k
                    saturable = True
                    for i in support:
                        if i == free:
                            continue
                        drain = self.drains[self.nodes[i]]
                        if drain <= 0.0:
                            saturable = False
                            break
                        base[i] = drain * self.horizon
                        u[i] = 0.0
                    if not saturable:
                        continue
                    for uf in times:
                        u[free] = uf
                        x = self.minimal_size(base, u, free, 0.0, self.x_max)
                        if x is not None:
                            self.offer(x, u, "extreme")
                            found += 1
        logger.info(f"Extreme-point stage: {found} feasible candidates")

    def refine(self, start: _Candidate) -> _Candidate:
        """Coordinate descent with halving steps; every accepted move stays feasible."""
        k = len(self.nodes)
        x, u = list(start.x), list(start.u)
        best = self.cost(x)
        step_x = self.x_max / (self.grid - 1)
        step_u = self.horizon / (self.grid - 1)
        improved_any = False

        def accept(nx: list[float], nu: list[float]) -> bool:
            nonlocal x, u, best, improved_any
            c = self.cost(nx)
            if c < best and self.feasible(nx, nu):
                x, u, best, improved_any = nx, nu, c, True
                return True
            return False

        # drop one jump and let another absorb it
        for i, j in itertools.permutations(range(k), 2):
            if x[i] > 0.0:
                nx = list(x)
                nx[i] = 0.0
                nu = list(u)
                nu[i] = self.horizon
                raised = self.minimal_size(nx, nu, j, nx[j], self.x_max)
                if raised is not None and self.cost(raised) < best:
                    x, u, best, improved_any = list(raised), nu, self.cost(raised), True

        while step_x > REFINE_TOL * max(self.x_max, 1.0) or step_u > REFINE_TOL * self.horizon:
            moved = False
            for i in range(k):
                if x[i] <= 0.0:
                    continue
                smaller = max(x[i] - step_x, 0.0)
                for du in (0.0, -step_u, step_u):
                    nu = list(u)
                    nu[i] = min(max(u[i] + du, 0.0), self.horizon)
                    nx = list(x)
                    nx[i] = smaller
                    if accept(nx, nu):
                        moved = True
                        break
            for i, j in itertools.permutations(range(k), 2):
                if x[i] <= 0.0:
                    continue
                shift = min(step_x, x[i])
                nx = list(x)
                nx[i] -= shift
                nx[j] += shift
                if accept(nx, list(u)):
                    moved = True
            if not moved:
                step_x *= 0.5
                step_u *= 0.5

        for i in range(k):
            if x[i] > 0.0:
                x = list(self.minimal_size(x, u, i, 0.0, x[i]))
        x_t, u_t = self.canonical(x, u)
        cost = self.cost(x_t)
        stage = "refine" if improved_any and cost < start.cost else start.stage
        return _Candidate(cost, x_t, u_t, stage)


def _expand(nodes: Sequence[int], d: int, values: Sequence[float], fill: float) -> list[float]:
    out = [fill] * d
    for i, v in zip(nodes, values):
        out[i] = float(v)
    return out


def _infeasible(p: OverflowProblem, evaluations: int = 0) -> RateSolution:
    d = p.net.d
    return RateSolution(value=math.inf, x_star=[0.0] * d, u_star=[p.T] * d,
                        feasible=False, method="grid", evaluations=evaluations,
                        exogenous_weighted=bool(p.active_nodes))


def solve_overflow(
    p: OverflowProblem,
    grid: int = DEFAULT_GRID,
    budget: int = DEFAULT_BUDGET,
    starts: int = DEFAULT_STARTS,
) -> RateSolution:
    """
    Approximate V(y) with a certified-feasible witness.

    Stages: the zero input, a coarse grid over (x_i, u_i), extreme points that
    saturate all but one node of a support, then coordinate descent from the
    best feasible starts. The chosen witness is re-checked with reflect().
    """
    search = _OverflowSearch(p, grid, budget, starts)
    d = p.net.d
    k = len(search.nodes)
    zeros = (0.0,) * k
    idle = (p.T,) * k

    if search.feasible(zeros, idle):
        solution = RateSolution(value=0.0, x_star=[0.0] * d, u_star=[p.T] * d, feasible=True,
                                method="grid", evaluations=search.evaluations)
        return _verified(p, solution)
    if k == 0 or search.x_max <= 0.0:
        logger.info("Overflow infeasible: no exogenous jumps can reach the threshold")
        return _infeasible(p, search.evaluations)

    search.grid_stage()
    search.extreme_stage()
    if not search.pool:
        logger.info(f"Overflow infeasible: y = {p.y:.9g} unreached, jumps <= {search.x_max:.6g}")
        return _infeasible(p, search.evaluations)

    finals = [search.refine(cand) for cand in list(search.pool)]
    best = min(finals + search.pool, key=_Candidate.key)
    logger.info(
        f"Overflow y = {p.y:.9g}: value {best.cost:.9g} via {best.stage}"
        f" ({search.evaluations} evaluations)"
    )
    solution = RateSolution(
        value=best.cost,
        x_star=_expand(search.nodes, d, best.x, 0.0),
        u_star=_expand(search.nodes, d, best.u, p.T),
        feasible=True,
        method=best.stage,
        evaluations=search.evaluations,
    )
    return _verified(p, solution)


def _verified(p: OverflowProblem, solution: RateSolution) -> RateSolution:
    """Recompute b^T Z(T) of the witness with the recording solver."""
    z = reflect(p.net.reflection_matrix(), one_jump_path(p.net, p.T, solution.x_star,
                                                         solution.u_star)).terminal()
    achieved = math.fsum(bi * zi for bi, zi in zip(p.b, z))
    if achieved < p.y - WITNESS_TOL * max(1.0, p.y):
        raise ReflectionError(
            f"witness reaches b^T Z(T) = {achieved:.9g}, below y = {p.y:.9g}"
        )
    return solution.model_copy(
        update={"achieved": achieved, "exogenous_weighted": bool(p.active_nodes)}
    )


def strict_overflow(p: OverflowProblem, eps: float, **kwargs) -> RateSolution:
    """Optimum over {b^T Z(T) > y}, approximated on {b^T Z(T) >= y + eps}."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return solve_overflow(p.at(p.y + eps), **kwargs)


def overflow_sweep(p: OverflowProblem, ys: Sequence[float], **kwargs) -> list[RateSolution]:
    """Solve at each threshold; tandem problems use the closed form."""
    if is_tandem_problem(p):
        return [tandem_rate(p.at(y)) for y in ys]
    return [solve_overflow(p.at(y), **kwargs) for y in ys]


def is_tandem_problem(p: OverflowProblem) -> bool:
    net = p.net
    return (
        net.is_tandem
        and sorted(net.exogenous) == [0, 1]
        and p.b[0] == 0.0
        and p.b[1] > 0.0
    )


def tandem_rate(p: OverflowProblem) -> RateSolution:
    """
    Closed form for the two-node tandem with b = (0, b2).

    With s = r1 - mu1 and a = r1 + mu2 - r2 (the rate at which node 2 fills
    while node 1 drains a backlog), and y scaled to y / b2:
      a <= 0:        c2 y^alpha                          (jump at node 2 at T)
      y <= a T:      min(c1 (y s / a)^alpha, c2 y^alpha)
      y >  a T:      min(c2 y^alpha, c1 (s T)^alpha + c2 (y - a T)^alpha)
    """
    if not is_tandem_problem(p):
        raise ValueError("tandem_rate needs a two-node tandem, both nodes exogenous, b = (0, b2)")
    net = p.net
    r1, r2 = net.r
    mu1, mu2 = net.mu
    c1, c2 = net.c
    alpha = net.alpha
    horizon = p.T
    y = p.y / p.b[1]
    s = r1 - mu1
    a = r1 + mu2 - r2
    if s <= 0.0:
        raise ValueError(f"node 1 does not drain: r1 - mu1 = {s:.9g}")

    # (cost, case, x, u)
    direct = (c2 * y**alpha, "i", (0.0, y), (horizon, horizon))
    if a <= 0.0:
        regime = 1
        candidates = [direct]
    elif y <= a * horizon:
        regime = 2
        x1 = y * s / a
        candidates = [direct, (c1 * x1**alpha, "ii", (x1, 0.0), (horizon - x1 / s, horizon))]
    else:
        regime = 3
        x1 = s * horizon
        x2 = y - a * horizon
        candidates = [direct, (c1 * x1**alpha + c2 * x2**alpha, "iii", (x1, x2), (0.0, horizon))]

    cost, case, x, u = min(candidates, key=lambda cand: _tie_key(cand[0], cand[2]))
    logger.info(f"Tandem regime {regime}, case ({case}): value {cost:.9g}")
    solution = RateSolution(value=cost, x_star=list(x), u_star=list(u), feasible=True,
                            method="tandem-analytic", regime=regime, case=case)
    return _verified(p, solution)
