"""
Monte Carlo for scaled fluid networks.

Inputs are compound Poisson with unit-rate arrivals and Weibull-type jump
sizes P(J >= x) = exp(-c L(x) x^alpha). Each replication draws from its own
counter-based stream keyed by (seed, n, rep), so estimates do not depend on
how replications are spread over workers.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import brentq
from scipy.stats import norm

from fluidnet.network import FluidNetwork, SlowlyVarying
from fluidnet.paths import StepDriftPath, VectorPath, drift_shift
from fluidnet.reflection import terminal_content

logger = logging.getLogger(__name__)

BISECT_STEPS = 60
CHUNKS_PER_WORKER = 4


class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_values: list[int] = Field(min_length=1)
    reps: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2**64)
    b: list[float]
    y: float = Field(ge=0.0)
    T: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_scales(self) -> "McConfig":
        if any(n < 1 for n in self.n_values):
            raise ValueError("every n must be at least 1")
        if any(v < 0.0 for v in self.b):
            raise ValueError("b must be nonnegative")
        return self


class McEstimate(BaseModel):
    n: int
    reps: int
    hits: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    decay: float
    lower_bound: bool = False

    @property
    def ci95(self) -> tuple[float, float]:
        return self.ci_lo, self.ci_hi


def replication_rng(seed: int, n: int, rep: int) -> np.random.Generator:
    """Independent Philox stream for replication rep at scale n."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(n, rep))))


def sample_jump(c: float, alpha: float, slowly: SlowlyVarying, urand: float) -> float:
    """Solve c L(x) x^alpha = -log(urand) for x."""
    target = -math.log(urand)
    if slowly.is_constant:
        return (target / c) ** (1.0 / alpha)

    def excess(x: float) -> float:
        return c * slowly(x) * x**alpha - target

    hi = 1.0
    while excess(hi) < 0.0:
        hi *= 2.0
    return brentq(excess, 0.0, hi, xtol=1e-300)


def sample_jumps(c: float, alpha: float, slowly: SlowlyVarying, urand: np.ndarray) -> np.ndarray:
    """Vectorized sample_jump; bisection on every draw at once."""
    target = -np.log(np.asarray(urand, dtype=float))
    if slowly.is_constant:
        return (target / c) ** (1.0 / alpha)
    hi = np.ones_like(target)
    short = c * slowly(hi) * hi**alpha < target
    while np.any(short):
        hi[short] *= 2.0
        short = c * slowly(hi) * hi**alpha < target
    lo = np.zeros_like(target)
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        below = c * slowly(mid) * mid**alpha < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_input_path(net: FluidNetwork, horizon: float, rng: np.random.Generator) -> VectorPath:
    """Compound Poisson input J on [0, horizon]; zero paths off the exogenous nodes."""
    exo = set(net.exogenous)
    coords = []
    for i in range(net.d):
        if i not in exo or horizon <= 0.0:
            coords.append(StepDriftPath(horizon))
            continue
        count = rng.poisson(horizon)
        times = np.sort(rng.uniform(0.0, horizon, count))
        # 1 - U lies in (0, 1], keeping -log finite
        sizes = sample_jumps(net.c[i], net.alpha, net.L, 1.0 - rng.random(count))
        coords.append(StepDriftPath(horizon, jumps=tuple(zip(times.tolist(), sizes.tolist()))))
    return VectorPath(tuple(coords))


def simulate_content(
    net: FluidNetwork, n: int, horizon: float, rng: np.random.Generator
) -> tuple[float, ...]:
    """Z_n(T) = Z(nT) / n for X = J - (I - Q^T) r t started empty."""
    inputs = sample_input_path(net, n * horizon, rng)
    service = (np.eye(net.d) - net.routing.T) @ np.asarray(net.r, dtype=float)
    x = drift_shift(inputs, service.tolist())
    return tuple(z / n for z in terminal_content(net, x))


def wilson_interval(hits: int, reps: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if reps <= 0:
        raise ValueError("reps must be positive")
    z = float(norm.ppf(0.5 + level / 2.0))
    z2 = z * z
    p = hits / reps
    denom = 1.0 + z2 / reps
    center = (p + z2 / (2.0 * reps)) / denom
    margin = z * math.sqrt(p * (1.0 - p) / reps + z2 / (4.0 * reps * reps)) / denom
    return max(0.0, min(center - margin, p)), min(1.0, max(center + margin, p))


def _count_hits(
    net: FluidNetwork, b: Sequence[float], y: float, n: int, horizon: float,
    seed: int, start: int, stop: int,
) -> int:
    hits = 0
    for rep in range(start, stop):
        z = simulate_content(net, n, horizon, replication_rng(seed, n, rep))
        if math.fsum(bi * zi for bi, zi in zip(b, z)) >= y:
            hits += 1
    return hits


def _chunks(reps: int, pieces: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, reps, min(pieces, reps) + 1).astype(int).tolist()
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def _estimate(net: FluidNetwork, n: int, reps: int, hits: int) -> McEstimate:
    p_hat = hits / reps
    lo, hi = wilson_interval(hits, reps)
    speed = float(net.L(float(n))) * n**net.alpha
    if hits > 0:
        return McEstimate(n=n, reps=reps, hits=hits, p_hat=p_hat, ci_lo=lo, ci_hi=hi,
                          decay=0.0 - math.log(p_hat) / speed)
    logger.warning(f"n = {n}: no overflow in {reps} replications; decay is a lower bound")
    return McEstimate(n=n, reps=reps, hits=0, p_hat=0.0, ci_lo=lo, ci_hi=hi,
                      decay=0.0 - math.log(hi) / speed, lower_bound=True)


def estimate_overflow(
    net: FluidNetwork, mc: McConfig, workers: int = 1
) -> list[McEstimate]:
    """Crude Monte Carlo estimate of P(b^T Z_n(T) >= y) and its decay rate per n."""
    if len(mc.b) != net.d:
        raise ValueError(f"b must have {net.d} entries")
    exo = set(net.exogenous)
    if not any(mc.b[i] > 0.0 for i in exo):
        raise ValueError("b must weight at least one node with exogenous input")

    estimates = []
    for n in mc.n_values:
        if workers <= 1:
            hits = _count_hits(net, mc.b, mc.y, n, mc.T, mc.seed, 0, mc.reps)
        else:
            chunks = _chunks(mc.reps, workers * CHUNKS_PER_WORKER)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_count_hits, net, mc.b, mc.y, n, mc.T, mc.seed, start, stop)
                    for start, stop in chunks
                ]
                hits = sum(f.result() for f in futures)
        est = _estimate(net, n, mc.reps, hits)
        logger.info(f"n = {n}: {hits}/{mc.reps} hits, decay {est.decay:.6g}")
        estimates.append(est)
    return estimates
