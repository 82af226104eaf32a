"""
Drift-plus-jump paths on [0, T].

Exact, grid-free representation of the cadlag paths that feed the reflection
map, plus the uniform distance and certified J1 upper bounds used by the
continuity checks. Every path is evaluated in closed form on its breakpoints.
"""

import itertools
import math
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Iterator, Protocol, Sequence

# Jumps smaller than this are dropped at construction.
JUMP_EPS = 1e-12

# Cap on order-preserving jump matchings tried per direction in j1_distance_upper.
MAX_MATCHINGS = 256


class PathDomainError(ValueError):
    """Raised for evaluations or constructions outside the supported path space."""


class Path(Protocol):
    """What the metrics and the reflection engine need from a coordinate path."""

    @property
    def horizon(self) -> float: ...

    def value(self, t: float) -> float: ...

    def left_limit(self, t: float) -> float: ...

    def breakpoints(self) -> tuple[float, ...]: ...

    def jump_times(self) -> tuple[float, ...]: ...


def _check_time(t: float, horizon: float) -> None:
    if not 0.0 <= t <= horizon:
        raise PathDomainError(f"time {t!r} outside [0, {horizon!r}]")


def _cancel_terms(terms: tuple[float, ...]) -> tuple[float, ...]:
    """Drop exact opposite pairs so repeated shifts do not grow the addend list."""
    kept: list[float] = []
    for term in terms:
        if -term in kept and term != 0.0:
            kept.remove(-term)
        else:
            kept.append(term)
    return tuple(kept) or (0.0,)


@dataclass(frozen=True, slots=True)
class StepDriftPath:
    """
    origin + drift*t + sum of nonnegative jumps, on [0, horizon].

    The drift is stored as exact addends (summed with fsum) so that
    drift shifts compose without rounding.
    """

    horizon: float
    drift: float = 0.0
    jumps: tuple[tuple[float, float], ...] = ()
    origin: float = 0.0
    drift_terms: tuple[float, ...] = field(default=(), compare=False, repr=False)
    _times: tuple[float, ...] = field(default=(), init=False, compare=False, repr=False)
    _cumulative: tuple[float, ...] = field(default=(), init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        horizon = float(self.horizon)
        if not horizon >= 0.0 or not math.isfinite(horizon):
            raise PathDomainError(f"horizon must be nonnegative and finite, got {self.horizon!r}")

        merged: dict[float, float] = {}
        for u, x in self.jumps:
            u, x = float(u), float(x)
            if not 0.0 <= u <= horizon:
                raise PathDomainError(f"jump time {u!r} outside [0, {horizon!r}]")
            if x < -JUMP_EPS:
                raise PathDomainError(f"negative jump {x!r} at time {u!r}")
            merged[u] = merged.get(u, 0.0) + x
        jumps = tuple((u, x) for u, x in sorted(merged.items()) if x >= JUMP_EPS)

        terms = tuple(float(v) for v in self.drift_terms) or (float(self.drift),)
        terms = _cancel_terms(terms)

        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "origin", float(self.origin))
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "drift_terms", terms)
        object.__setattr__(self, "drift", math.fsum(terms))
        object.__setattr__(self, "_times", tuple(u for u, _ in jumps))
        object.__setattr__(self, "_cumulative", tuple(itertools.accumulate(x for _, x in jumps)))

    def _jump_mass(self, count: int) -> float:
        return self._cumulative[count - 1] if count > 0 else 0.0

    def value(self, t: float) -> float:
        """Right-continuous value at t."""
        _check_time(t, self.horizon)
        return self.origin + self.drift * t + self._jump_mass(bisect_right(self._times, t))

    def left_limit(self, t: float) -> float:
        """Value at t-; at t = 0 this is the origin."""
        _check_time(t, self.horizon)
        return self.origin + self.drift * t + self._jump_mass(bisect_left(self._times, t))

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted({0.0, self.horizon, *self._times}))

    def jump_times(self) -> tuple[float, ...]:
        return self._times

    def jump_sizes(self) -> tuple[float, ...]:
        return tuple(x for _, x in self.jumps)

    def total_jump(self) -> float:
        return self._jump_mass(len(self._times))

    def with_jumps(self, jumps: Sequence[tuple[float, float]]) -> "StepDriftPath":
        return StepDriftPath(self.horizon, jumps=tuple(jumps), origin=self.origin,
                             drift_terms=self.drift_terms)

    def as_piecewise(self) -> "PiecewiseLinearPath":
        knots = self.breakpoints()
        return PiecewiseLinearPath(
            knots=knots,
            values=tuple(self.value(t) for t in knots),
            left_values=tuple(self.left_limit(t) for t in knots),
        )


@dataclass(frozen=True, slots=True)
class PiecewiseLinearPath:
    """
    Path that is linear between knots and may jump at them.

    values[k] is the value at knots[k]; left_values[k] is the left limit there
    (left_values[0] is the value just before time 0).
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    left_values: tuple[float, ...]

    def __post_init__(self) -> None:
        knots = tuple(float(t) for t in self.knots)
        if len(knots) < 2 or knots[0] != 0.0:
            raise PathDomainError("piecewise path needs knots starting at 0 and ending at T")
        if any(b <= a for a, b in itertools.pairwise(knots)):
            raise PathDomainError("knots must be strictly increasing")
        if not len(self.values) == len(self.left_values) == len(knots):
            raise PathDomainError("knots, values and left_values must have equal length")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "left_values", tuple(float(v) for v in self.left_values))

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    def _interior(self, k: int, t: float) -> float:
        t0, t1 = self.knots[k], self.knots[k + 1]
        v0, v1 = self.values[k], self.left_values[k + 1]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def value(self, t: float) -> float:
        _check_time(t, self.horizon)
        k = bisect_right(self.knots, t) - 1
        if self.knots[k] == t:
            return self.values[k]
        return self._interior(k, t)

    def left_limit(self, t: float) -> float:
        _check_time(t, self.horizon)
        k = bisect_left(self.knots, t)
        if k < len(self.knots) and self.knots[k] == t:
            return self.left_values[k]
        return self._interior(k - 1, t)

    def breakpoints(self) -> tuple[float, ...]:
        return self.knots

    def jump_times(self) -> tuple[float, ...]:
        return tuple(
            t for t, v, w in zip(self.knots, self.values, self.left_values)
            if abs(v - w) > JUMP_EPS
        )

    def jump_sizes(self) -> tuple[float, ...]:
        return tuple(
            v - w for v, w in zip(self.values, self.left_values) if abs(v - w) > JUMP_EPS
        )

    def is_nondecreasing(self, tol: float = 1e-9) -> bool:
        if any(v < w - tol for v, w in zip(self.values, self.left_values)):
            return False
        return all(
            self.left_values[k + 1] >= self.values[k] - tol for k in range(len(self.knots) - 1)
        )


CoordinatePath = StepDriftPath | PiecewiseLinearPath


@dataclass(frozen=True, slots=True)
class VectorPath:
    """d coordinate paths sharing one horizon."""

    coords: tuple[CoordinatePath, ...]

    def __post_init__(self) -> None:
        coords = tuple(self.coords)
        if not coords:
            raise PathDomainError("a vector path needs at least one coordinate")
        horizon = coords[0].horizon
        for i, p in enumerate(coords):
            if p.horizon != horizon:
                raise PathDomainError(
                    f"coordinate {i + 1} has horizon {p.horizon!r}, expected {horizon!r}"
                )
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_steps(
        cls,
        horizon: float,
        drifts: Sequence[float],
        jumps: Sequence[Sequence[tuple[float, float]]] | None = None,
        origins: Sequence[float] | None = None,
    ) -> "VectorPath":
        d = len(drifts)
        jumps = jumps if jumps is not None else [()] * d
        origins = origins if origins is not None else [0.0] * d
        if not len(jumps) == len(origins) == d:
            raise PathDomainError("drifts, jumps and origins must have equal length")
        return cls(tuple(
            StepDriftPath(horizon, drift, tuple(js), origin)
            for drift, js, origin in zip(drifts, jumps, origins)
        ))

    @property
    def horizon(self) -> float:
        return self.coords[0].horizon

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self) -> Iterator[CoordinatePath]:
        return iter(self.coords)

    def __getitem__(self, i: int) -> CoordinatePath:
        return self.coords[i]

    def value(self, t: float) -> tuple[float, ...]:
        return tuple(p.value(t) for p in self.coords)

    def left_limit(self, t: float) -> tuple[float, ...]:
        return tuple(p.left_limit(t) for p in self.coords)

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted({t for p in self.coords for t in p.breakpoints()}))

    def steps(self) -> tuple[StepDriftPath, ...]:
        """Coordinates as StepDriftPaths; raises for piecewise-linear coordinates."""
        for i, p in enumerate(self.coords):
            if not isinstance(p, StepDriftPath):
                raise PathDomainError(f"coordinate {i + 1} is not a drift-plus-jump path")
        return self.coords  # type: ignore[return-value]


@dataclass(frozen=True, slots=True)
class TimeDeformation:
    """Piecewise-linear increasing homeomorphism of [0, T] given by (s, lambda(s)) points."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        points = tuple((float(s), float(v)) for s, v in self.points)
        if len(points) < 2 or points[0] != (0.0, 0.0):
            raise PathDomainError("time deformation must start at (0, 0)")
        horizon = points[-1][0]
        if points[-1][1] != horizon:
            raise PathDomainError("time deformation must fix the horizon")
        for (s0, v0), (s1, v1) in itertools.pairwise(points):
            if s1 <= s0 or v1 <= v0:
                raise PathDomainError("time deformation must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def identity(cls, horizon: float) -> "TimeDeformation":
        return cls(((0.0, 0.0), (horizon, horizon)))

    @classmethod
    def through(
        cls, horizon: float, pairs: Sequence[tuple[float, float]]
    ) -> "TimeDeformation | None":
        """Deformation through interior (s, lambda(s)) pairs, or None if not increasing."""
        try:
            return cls(((0.0, 0.0), *pairs, (horizon, horizon)))
        except PathDomainError:
            return None

    @property
    def horizon(self) -> float:
        return self.points[-1][0]

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.points)

    def __call__(self, s: float) -> float:
        xs = self.breakpoints()
        k = bisect_right(xs, s) - 1
        if k >= len(xs) - 1:
            return self.points[-1][1]
        s0, v0 = self.points[k]
        if s == s0:
            return v0
        s1, v1 = self.points[k + 1]
        return v0 + (v1 - v0) * (s - s0) / (s1 - s0)

    def inverse(self) -> "TimeDeformation":
        return TimeDeformation(tuple((v, s) for s, v in self.points))

    def distance_to_identity(self) -> float:
        return max(abs(v - s) for s, v in self.points)


def _coordinate_sup(a: CoordinatePath, b: CoordinatePath) -> float:
    if a.horizon != b.horizon:
        raise PathDomainError("paths have different horizons")
    grid = sorted(set(a.breakpoints()) | set(b.breakpoints()))
    return max(
        max(abs(a.value(t) - b.value(t)), abs(a.left_limit(t) - b.left_limit(t)))
        for t in grid
    )


def _check_same_shape(a: VectorPath, b: VectorPath) -> None:
    if a.dim != b.dim:
        raise PathDomainError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.horizon != b.horizon:
        raise PathDomainError(f"horizon mismatch: {a.horizon!r} vs {b.horizon!r}")


def evaluate(path: CoordinatePath, t: float) -> float:
    return path.value(t)


def left_limit(path: CoordinatePath, t: float) -> float:
    return path.left_limit(t)


def drift_shift(path: VectorPath, kappa: Sequence[float]) -> VectorPath:
    """t -> path(t) - kappa*t, coordinate-wise; jumps are unchanged."""
    if len(kappa) != path.dim:
        raise PathDomainError(f"kappa has {len(kappa)} entries for a {path.dim}-d path")
    return VectorPath(tuple(
        StepDriftPath(p.horizon, jumps=p.jumps, origin=p.origin,
                      drift_terms=p.drift_terms + (-float(k),))
        for p, k in zip(path.steps(), kappa)
    ))


def terminal(path: VectorPath) -> tuple[float, ...]:
    return path.value(path.horizon)


def uniform_distance(a: VectorPath, b: VectorPath) -> float:
    """Exact sup-norm distance, max over coordinates."""
    _check_same_shape(a, b)
    return max(_coordinate_sup(p, q) for p, q in zip(a, b))


def _deformed_sup(a: CoordinatePath, b: CoordinatePath, lam: TimeDeformation) -> float:
    """Exact sup |a(lambda(s)) - b(s)| over [0, T]."""
    inverse = lam.inverse()
    # grid point -> exact time at which to read a
    grid: dict[float, float] = {s: lam(s) for s in lam.breakpoints()}
    for s in b.breakpoints():
        grid.setdefault(s, lam(s))
    for t in a.breakpoints():
        grid[inverse(t)] = t
    return max(
        max(abs(a.value(t) - b.value(s)), abs(a.left_limit(t) - b.left_limit(s)))
        for s, t in grid.items()
    )


def _candidate_deformations(
    a: CoordinatePath, b: CoordinatePath
) -> Iterator[TimeDeformation]:
    """Identity plus deformations sending jump epochs of b onto jump epochs of a."""
    horizon = a.horizon
    yield TimeDeformation.identity(horizon)

    ta = [t for t in a.jump_times() if 0.0 < t < horizon]
    tb = [t for t in b.jump_times() if 0.0 < t < horizon]
    for u in ta:
        for v in tb:
            if u != v:
                lam = TimeDeformation.through(horizon, [(v, u)])
                if lam is not None:
                    yield lam

    m = min(len(ta), len(tb))
    if m < 2:
        return
    matchings = itertools.product(
        itertools.combinations(ta, m), itertools.combinations(tb, m)
    )
    for us, vs in itertools.islice(matchings, MAX_MATCHINGS):
        lam = TimeDeformation.through(horizon, list(zip(vs, us)))
        if lam is not None:
            yield lam


def _directed_j1(a: CoordinatePath, b: CoordinatePath) -> float:
    best = math.inf
    for lam in _candidate_deformations(a, b):
        slack = lam.distance_to_identity()
        if slack >= best:
            continue
        best = min(best, max(_deformed_sup(a, b, lam), slack))
    return best


def j1_distance_upper(a: CoordinatePath, b: CoordinatePath) -> float:
    """
    Certified upper bound on the J1 distance between two coordinate paths.

    Minimum of ||a o lambda - b|| v ||lambda - e|| over a finite family of
    deformations built from both paths' jump epochs (so the bound is symmetric).
    """
    if a.horizon != b.horizon:
        raise PathDomainError("paths have different horizons")
    return min(_directed_j1(a, b), _directed_j1(b, a))


def product_j1_upper(a: VectorPath, b: VectorPath) -> float:
    """Sum of per-coordinate J1 upper bounds."""
    _check_same_shape(a, b)
    return math.fsum(j1_distance_upper(p, q) for p, q in zip(a, b))


# Plain-text literals: a "T=<v>" header, then one line per coordinate.
_PAIR_RE = re.compile(r"\(\s*([^,()\s]+)\s*,\s*([^,()\s]+)\s*\)")
_JUMPS_RE = re.compile(rf"(?:{_PAIR_RE.pattern}(?:\s*,\s*{_PAIR_RE.pattern})*)?")
_PATH_KEYS = ("drift", "origin", "jumps")


def format_paths(path: VectorPath) -> str:
    lines = [f"T={path.horizon!r}"]
    for p in path.steps():
        jumps = ",".join(f"({u!r},{x!r})" for u, x in p.jumps)
        lines.append(f"drift={p.drift!r}; origin={p.origin!r}; jumps={jumps}")
    return "\n".join(lines) + "\n"


def _parse_horizon(value: str, lineno: int) -> float:
    try:
        horizon = float(value)
    except ValueError:
        raise PathDomainError(f"line {lineno}: bad horizon {value.strip()!r}") from None
    if not horizon > 0.0 or not math.isfinite(horizon):
        raise PathDomainError(f"line {lineno}: horizon must be positive, got {value.strip()}")
    return horizon


def _parse_jumps(value: str, lineno: int) -> list[tuple[float, float]]:
    if not _JUMPS_RE.fullmatch(value):
        raise PathDomainError(
            f"line {lineno}: jumps must be a comma-separated list of (time,size), got {value!r}"
        )
    try:
        return [(float(u), float(x)) for u, x in _PAIR_RE.findall(value)]
    except ValueError as e:
        raise PathDomainError(f"line {lineno}: {e}") from None


def parse_paths(text: str) -> VectorPath:
    """Parse the literal written by format_paths (blank lines and # comments allowed)."""
    horizon: float | None = None
    coords: list[StepDriftPath] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if horizon is None:
            key, _, value = line.partition("=")
            if key.strip() != "T":
                raise PathDomainError(f"line {lineno}: expected header 'T=<value>'")
            horizon = _parse_horizon(value, lineno)
            continue

        fields: dict[str, str] = {}
        for part in line.split(";"):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep:
                raise PathDomainError(f"line {lineno}: expected key=value, got {part.strip()!r}")
            if key not in _PATH_KEYS:
                raise PathDomainError(
                    f"line {lineno}: unknown key {key!r}, expected one of {', '.join(_PATH_KEYS)}"
                )
            if key in fields:
                raise PathDomainError(f"line {lineno}: {key} given twice")
            fields[key] = value.strip()
        jumps = _parse_jumps(fields.get("jumps", ""), lineno)
        try:
            drift = float(fields.get("drift", "0"))
            origin = float(fields.get("origin", "0"))
            coords.append(StepDriftPath(horizon, drift, tuple(jumps), origin))
        except ValueError as e:
            raise PathDomainError(f"line {lineno}: {e}") from None

    if horizon is None or not coords:
        raise PathDomainError("path literal needs a 'T=' header and at least one coordinate")
    return VectorPath(tuple(coords))
