"""
Fluid network model: routing, service rates, inputs and their tails.

Holds the (J, r, Q, X(0)) description of the network, the reflection matrix
I - Q^T with its nonnegative inverse, and the checks that decide whether a
configuration is usable (substochastic routing, Q^n -> 0, stability).
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
SPECTRAL_TOL = 1e-12
SPECTRAL_MAX_ITER = 10_000


class SlowlyVarying(BaseModel):
    """The slowly varying factor L(x) of the jump tail: 1 or (log(e + x))^gamma."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["const", "loggamma"] = "const"
    gamma: float = Field(default=0.0, ge=0.0)

    @classmethod
    def parse(cls, text: str) -> "SlowlyVarying":
        """Parse 'const' or 'loggamma:<gamma>'."""
        text = text.strip()
        if text == "const":
            return cls()
        kind, sep, gamma = text.partition(":")
        if kind.strip() != "loggamma" or not sep:
            raise ValueError(f"L must be 'const' or 'loggamma:<gamma>', got {text!r}")
        return cls(kind="loggamma", gamma=float(gamma))

    @property
    def is_constant(self) -> bool:
        return self.kind == "const" or self.gamma == 0.0

    def __call__(self, x):
        if self.is_constant:
            return np.ones_like(x, dtype=float) if isinstance(x, np.ndarray) else 1.0
        return np.log(np.e + x) ** self.gamma

    def __str__(self) -> str:
        return "const" if self.kind == "const" else f"loggamma:{self.gamma!r}"


class FluidNetwork(BaseModel):
    """
    d-node fluid network.

    Q[i][j] is the fraction of node i's output routed to node j; exogenous
    holds 0-based indices of nodes with a compound Poisson input.
    """

    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    Q: list[list[float]]
    r: list[float]
    mu: list[float]
    exogenous: list[int]
    c: list[float]
    alpha: float
    L: SlowlyVarying = Field(default_factory=SlowlyVarying)

    @model_validator(mode="after")
    def _check_shapes(self) -> "FluidNetwork":
        d = self.d
        if len(self.Q) != d or any(len(row) != d for row in self.Q):
            raise ValueError(f"Q must be {d}x{d}")
        for name in ("r", "mu", "c"):
            if len(getattr(self, name)) != d:
                raise ValueError(f"{name} must have {d} entries")
        if len(set(self.exogenous)) != len(self.exogenous):
            raise ValueError("exogenous nodes must be distinct")
        if any(not 0 <= i < d for i in self.exogenous):
            raise ValueError(f"exogenous nodes must lie in 1..{d}")
        return self

    @classmethod
    def tandem(
        cls,
        r: tuple[float, float],
        mu: tuple[float, float],
        c: tuple[float, float],
        alpha: float,
        exogenous: tuple[int, ...] = (0, 1),
    ) -> "FluidNetwork":
        """Two nodes in series: all of node 1's output goes to node 2."""
        return cls(d=2, Q=[[0.0, 1.0], [0.0, 0.0]], r=list(r), mu=list(mu),
                   exogenous=list(exogenous), c=list(c), alpha=alpha)

    @property
    def routing(self) -> np.ndarray:
        return np.asarray(self.Q, dtype=float)

    @property
    def is_tandem(self) -> bool:
        return self.d == 2 and self.Q == [[0.0, 1.0], [0.0, 0.0]]

    def reflection_matrix(self) -> "ReflectionMatrix":
        return ReflectionMatrix.from_routing(self.Q)

    def drain_rates(self) -> np.ndarray:
        """(I - Q^T) r - mu; minus the drift of the potential content per node."""
        return stability_kella(self)

    def content_drifts(self) -> np.ndarray:
        """mu - (I - Q^T) r, the drift of the potential content X."""
        return -self.drain_rates()


@dataclass(frozen=True)
class ReflectionMatrix:
    """The reflection matrix I - Q^T, its inverse, and Q^T in row form for the solver."""

    Q: np.ndarray
    Qcal: np.ndarray
    Qcal_inv: np.ndarray
    qt_rows: tuple[tuple[tuple[int, float], ...], ...]

    @classmethod
    def from_routing(cls, routing) -> "ReflectionMatrix":
        q = np.asarray(routing, dtype=float)
        d = q.shape[0]
        qcal = np.eye(d) - q.T
        qcal_inv = np.linalg.inv(qcal)
        # sparse rows of Q^T: (Q^T y)_i = sum_j q_ji y_j
        qt_rows = tuple(
            tuple((j, float(q[j, i])) for j in range(d) if q[j, i] != 0.0) for i in range(d)
        )
        return cls(Q=q, Qcal=qcal, Qcal_inv=qcal_inv, qt_rows=qt_rows)

    @property
    def d(self) -> int:
        return self.Q.shape[0]


def spectral_radius(routing, tol: float = SPECTRAL_TOL, max_iter: int = SPECTRAL_MAX_ITER) -> float:
    """
    Spectral radius of a nonnegative matrix by power iteration on I + Q.

    Uses Collatz-Wielandt bounds; the returned value is the tightest upper bound
    reached. Nilpotent matrices return exactly 0.
    """
    q = np.abs(np.asarray(routing, dtype=float))
    d = q.shape[0]
    if not np.any(np.linalg.matrix_power(q, d)):
        return 0.0

    m = np.eye(d) + q
    x = np.ones(d)
    lo, hi = 0.0, math.inf
    for _ in range(max_iter):
        y = m @ x
        ratios = y / x
        lo, hi_new = max(lo, float(ratios.min())), min(hi, float(ratios.max()))
        converged = hi_new - lo < tol or hi - hi_new < tol * 1e-3
        hi = hi_new
        if converged:
            break
        x = np.maximum(y / y.max(), 1e-300)
    return max(hi - 1.0, 0.0)


def neumann_inverse(routing, tol: float = 1e-15, max_terms: int = 100_000) -> np.ndarray:
    """I + Q + Q^2 + ... truncated once the terms fall below tol."""
    q = np.asarray(routing, dtype=float)
    rho = spectral_radius(q)
    if rho >= 1.0:
        raise ValueError(f"Neumann series diverges: spectral radius {rho:.9g} >= 1")
    d = q.shape[0]
    if rho > 0.0:
        # ||Q^n|| ~ rho^n up to polynomial factors; the cap leaves room for them
        max_terms = min(max_terms, 2 * d + 4 * math.ceil(math.log(tol) / math.log(rho)))
    total = np.eye(d)
    term = np.eye(d)
    for _ in range(max_terms):
        term = term @ q
        total += term
        if not np.any(np.abs(term) > tol):
            break
    return total


def stability_kella(net: FluidNetwork) -> np.ndarray:
    """(I - Q^T) r - mu; stable in Kella's sense iff every margin is positive."""
    r = np.asarray(net.r, dtype=float)
    return (np.eye(net.d) - net.routing.T) @ r - np.asarray(net.mu, dtype=float)


def stability_throughput(net: FluidNetwork) -> np.ndarray:
    """r - (I - Q^T)^{-1} mu: service rate minus effective arrival rate per node."""
    effective = np.linalg.solve(np.eye(net.d) - net.routing.T, np.asarray(net.mu, dtype=float))
    return np.asarray(net.r, dtype=float) - effective


class ValidationCheck(BaseModel):
    name: str
    status: Literal["pass", "warn", "fail", "skip"]
    detail: str


class ValidationReport(BaseModel):
    checks: list[ValidationCheck]

    @property
    def ok(self) -> bool:
        return all(check.status != "fail" for check in self.checks)

    def failures(self) -> list[ValidationCheck]:
        return [check for check in self.checks if check.status == "fail"]

    def status_of(self, name: str) -> str:
        return next(check.status for check in self.checks if check.name == name)


def _fmt(values) -> str:
    return "(" + ", ".join(f"{v:.9g}" for v in values) + ")"


def _check(name: str, problems: list[str], ok_detail: str = "OK") -> ValidationCheck:
    if problems:
        return ValidationCheck(name=name, status="fail", detail="; ".join(problems))
    return ValidationCheck(name=name, status="pass", detail=ok_detail)


def validate(net: FluidNetwork) -> ValidationReport:
    """Check every model constraint; offending entries are named 1-based."""
    q = net.routing
    d = net.d
    exo = set(net.exogenous)
    checks: list[ValidationCheck] = []

    checks.append(_check("Diagonal", [
        f"q[{i + 1},{i + 1}] = {q[i, i]:.9g}" for i in range(d) if q[i, i] != 0.0
    ]))
    checks.append(_check("Nonnegative routing", [
        f"q[{i + 1},{j + 1}] = {q[i, j]:.9g}" for i in range(d) for j in range(d) if q[i, j] < 0.0
    ]))
    row_sums = q.sum(axis=1)
    checks.append(_check("Substochastic", [
        f"row {i + 1} sums to {row_sums[i]:.9g}" for i in range(d)
        if row_sums[i] > 1.0 + ROW_SUM_TOL
    ]))

    rho = spectral_radius(q)
    spectral_ok = rho < 1.0 - SPECTRAL_TOL
    checks.append(ValidationCheck(
        name="Spectral radius",
        status="pass" if spectral_ok else "fail",
        detail=f"rho(Q) = {rho:.9g}" + ("" if spectral_ok else " (Q^n does not vanish)"),
    ))

    checks.append(_check("Service rates", [
        f"r[{i + 1}] = {net.r[i]:.9g}" for i in range(d) if net.r[i] < 0.0
    ]))
    checks.append(_check("Input means", [
        f"mu[{i + 1}] = {net.mu[i]:.9g}" for i in range(d) if net.mu[i] < 0.0
    ] + [
        f"mu[{i + 1}] = {net.mu[i]:.9g} but node {i + 1} has no exogenous input"
        for i in range(d) if i not in exo and net.mu[i] != 0.0
    ]))
    checks.append(_check("Tail coefficients", [
        f"c[{i + 1}] = {net.c[i]:.9g}" for i in sorted(exo) if not net.c[i] > 0.0
    ]))
    checks.append(_check("Shape", [] if 0.0 < net.alpha < 1.0 else [
        f"alpha = {net.alpha:.9g} not in (0, 1)"
    ], ok_detail=f"alpha = {net.alpha:.9g}"))

    if not spectral_ok:
        checks.append(ValidationCheck(name="Stability", status="skip",
                                      detail="needs rho(Q) < 1"))
    else:
        kella = stability_kella(net)
        throughput = stability_throughput(net)
        if np.all(kella > 0.0):
            checks.append(ValidationCheck(name="Stability", status="pass",
                                          detail=f"(I-Q^T)r - mu = {_fmt(kella)}"))
        elif np.all(throughput > 0.0):
            logger.warning(f"Network is throughput-stable but (I-Q^T)r - mu = {_fmt(kella)}")
            checks.append(ValidationCheck(
                name="Stability", status="warn",
                detail=f"(I-Q^T)r - mu = {_fmt(kella)}; r - (I-Q^T)^-1 mu = {_fmt(throughput)}",
            ))
        else:
            checks.append(ValidationCheck(
                name="Stability", status="fail",
                detail=f"r - (I-Q^T)^-1 mu = {_fmt(throughput)}",
            ))

    return ValidationReport(checks=checks)
