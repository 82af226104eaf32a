"""Randomized invariants of the reflection map on small networks."""

import numpy as np
import pytest

from fluidnet.network import FluidNetwork, ReflectionMatrix, spectral_radius, validate
from fluidnet.paths import JUMP_EPS, VectorPath, product_j1_upper, uniform_distance
from fluidnet.reflection import (
    consolidate_jumps,
    reflect,
    reflect_fixedpoint_oracle,
    tandem_z2_terminal,
    terminal_content,
)

CASES = 1000
ORACLE_NETWORKS = 200


def random_routing(rng, d):
    """Zero-diagonal routing whose column sums stay at or below 1/2."""
    q = rng.uniform(0.0, 1.0, (d, d)) * (rng.uniform(size=(d, d)) < 0.6)
    np.fill_diagonal(q, 0.0)
    cols = q.sum(axis=0)
    q = q * np.where(cols > 0.5, 0.5 / np.maximum(cols, 1e-300), 1.0)
    return q


def random_substochastic(rng, d):
    """Zero-diagonal routing with every row sum below 0.98."""
    q = rng.uniform(0.0, 1.0, (d, d)) * (rng.uniform(size=(d, d)) < 0.7)
    np.fill_diagonal(q, 0.0)
    rows = q.sum(axis=1)
    scale = rng.uniform(0.0, 0.98, d) / np.maximum(rows, 1e-300)
    return q * np.where(rows > 0.0, scale, 0.0)[:, None]


def random_network(rng):
    """A network that passes validate(), with rates for the oracle bound."""
    while True:
        d = int(rng.integers(1, 5))
        net = FluidNetwork(
            d=d,
            Q=random_substochastic(rng, d).tolist(),
            r=rng.uniform(1.0, 4.0, d).tolist(),
            mu=rng.uniform(0.0, 1.0, d).tolist(),
            exogenous=list(range(d)),
            c=[1.0] * d,
            alpha=0.5,
        )
        if validate(net).ok:
            return net


def random_path(rng, d, horizon=1.0, max_jumps=5):
    drifts = rng.uniform(-2.0, 1.0, d).tolist()
    jumps = []
    for _ in range(d):
        count = int(rng.integers(0, max_jumps + 1))
        times = rng.uniform(0.0, horizon, count).round(6)
        sizes = rng.uniform(0.05, 2.0, count)
        jumps.append(list(zip(times.tolist(), sizes.tolist())))
    return VectorPath.from_steps(horizon, drifts, jumps)


def perturb(rng, x, scale=0.2):
    """Same jump epochs, nearby drifts and sizes."""
    drifts = [p.drift + rng.uniform(-scale, scale) for p in x.steps()]
    jumps = [
        [(u, max(s + rng.uniform(-scale, scale), 0.01)) for u, s in p.jumps]
        for p in x.steps()
    ]
    return VectorPath.from_steps(x.horizon, drifts, jumps)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def test_routing_generator_is_contractive(rng):
    for _ in range(CASES):
        q = random_routing(rng, int(rng.integers(1, 5)))
        assert q.sum(axis=0).max() <= 0.5 + 1e-12
        assert spectral_radius(q) < 1.0


def test_content_is_nonnegative_and_complementary(rng):
    for _ in range(CASES):
        d = int(rng.integers(1, 5))
        q = random_substochastic(rng, d)
        sol = reflect(q, random_path(rng, d))
        for i in range(d):
            z, y = sol.Z[i], sol.Y[i]
            assert min(z.values) >= -1e-12
            assert y.is_nondecreasing()
            # Y only grows on segments that start with buffer i empty
            ends = [e.time for e in sol.events[1:]] + [z.horizon]
            for event, end in zip(sol.events, ends):
                if y.value(end) - y.value(event.time) > 1e-12:
                    assert i in event.empty


def test_substochastic_generator(rng):
    for _ in range(CASES):
        q = random_substochastic(rng, int(rng.integers(1, 5)))
        assert np.all(q >= 0.0)
        assert np.all(np.diag(q) == 0.0)
        assert q.sum(axis=1).max() < 0.98
        assert spectral_radius(q) < 0.98


def test_oracle_agrees(rng):
    grid_n = 1000
    for _ in range(ORACLE_NETWORKS):
        net = random_network(rng)
        drifts = net.content_drifts().tolist()
        jumps = [list(p.jumps) for p in random_path(rng, net.d).steps()]
        x = VectorPath.from_steps(1.0, drifts, jumps)
        exact = reflect(net, x)
        oracle = reflect_fixedpoint_oracle(net, x, grid_n)
        constant = 4.0 * (max(abs(v) for v in drifts) + max(net.r)) * x.horizon
        assert uniform_distance(exact.Z, oracle.Z) <= constant / grid_n + 1e-9


def test_monotone_regulator(rng):
    for _ in range(CASES):
        d = int(rng.integers(1, 5))
        q = random_substochastic(rng, d)
        x = random_path(rng, d)
        extra = random_path(rng, d, max_jumps=2)
        bigger = VectorPath.from_steps(
            x.horizon,
            [p.drift + rng.uniform(0.0, 0.5) for p in x.steps()],
            [list(p.jumps) + list(e.jumps) for p, e in zip(x.steps(), extra.steps())],
        )
        small, large = reflect(q, x), reflect(q, bigger)
        for t in sorted(set(small.Y.breakpoints()) | set(large.Y.breakpoints())):
            assert all(a >= b - 1e-9 for a, b in zip(small.Y.value(t), large.Y.value(t)))


def test_jumps_propagate_exactly(rng):
    for _ in range(CASES):
        d = int(rng.integers(1, 5))
        q = random_substochastic(rng, d)
        x = random_path(rng, d)
        sol = reflect(q, x)
        for p, z in zip(x.steps(), sol.Z):
            assert z.jump_times() == p.jump_times()
            assert z.jump_sizes() == pytest.approx(p.jump_sizes(), abs=1e-9)


def test_uniform_lipschitz(rng):
    # column sums <= 1/2 make Y a 2-Lipschitz map, so Z is at most 4-Lipschitz
    for _ in range(CASES):
        d = int(rng.integers(1, 5))
        q = random_routing(rng, d)
        x = random_path(rng, d)
        x2 = perturb(rng, x)
        gap = uniform_distance(x, x2)
        if gap <= JUMP_EPS:
            continue
        moved = uniform_distance(reflect(q, x).Z, reflect(q, x2).Z)
        assert moved <= 4.0 * gap + 1e-9


def jitter_epochs(rng, x, scale=0.02):
    """Same sizes up to a small change, jump epochs moved by at most scale."""
    jumps = [
        [(min(max(u + rng.uniform(-scale, scale), 1e-3), x.horizon - 1e-3),
          s * rng.uniform(0.95, 1.05)) for u, s in p.jumps]
        for p in x.steps()
    ]
    return VectorPath.from_steps(x.horizon, [p.drift for p in x.steps()], jumps)


def test_single_queue_j1_lipschitz(rng):
    # reflection commutes with time changes and Z keeps the input jump epochs
    for _ in range(CASES):
        x = random_path(rng, 1, max_jumps=3)
        x2 = jitter_epochs(rng, x)
        before = product_j1_upper(x, x2)
        after = product_j1_upper(reflect([[0.0]], x).Z, reflect([[0.0]], x2).Z)
        assert after <= 2.0 * before + 1e-9


def test_tandem_late_jump_is_close_in_j1(tandem):
    x = VectorPath.from_steps(1.0, [-2.0, 1.0], [[(0.3, 1.0)], []])
    late = VectorPath.from_steps(1.0, [-2.0, 1.0], [[(0.35, 1.0)], []])
    z, z_late = reflect(tandem, x).Z, reflect(tandem, late).Z
    assert uniform_distance(z, z_late) == pytest.approx(1.0)
    assert product_j1_upper(x, late) <= 0.1 + 1e-12
    assert product_j1_upper(z, z_late) <= 4.0 * product_j1_upper(x, late)


def test_consolidation_dominates(rng):
    # the merged path lies below x with the same endpoint, so the regulator and
    # (I - Q^T)^-1 Z(T) can only grow; Z(T) itself may not
    for _ in range(CASES):
        d = int(rng.integers(1, 4))
        matrix = ReflectionMatrix.from_routing(random_substochastic(rng, d))
        x = random_path(rng, d)
        before = reflect(matrix, x)
        after = reflect(matrix, consolidate_jumps(x))
        assert all(
            a >= b - 1e-9
            for a, b in zip(after.regulator_terminal(), before.regulator_terminal())
        )
        gain = matrix.Qcal_inv @ (np.array(after.terminal()) - np.array(before.terminal()))
        assert np.all(gain >= -1e-8)


def test_tandem_closed_form_matches_solver(rng, tandem):
    for _ in range(CASES):
        x1, x2 = rng.uniform(0.0, 3.0, 2).tolist()
        u1, u2 = rng.uniform(0.0, 1.0, 2).round(6).tolist()
        x = VectorPath.from_steps(1.0, [-2.0, 1.0], [[(u1, x1)], [(u2, x2)]])
        expected = terminal_content(tandem, x)[1]
        got = tandem_z2_terminal((3.0, 3.0), (1.0, 1.0), x1, u1, x2, u2, 1.0)
        assert got == pytest.approx(expected, abs=1e-9)
