"""Martingale tail bounds and their Monte-Carlo validation.

Three bound templates are evaluated in closed form and checked against
simulated martingales:

* the bounded-increment tail ``2 exp(-a^2 / (2(a+b)))``,
* the MGF-hypothesis variant ``exp(-min(a^2/(4Cb), c~ a/2))`` for
  martingales with ``E exp(lambda Y_t) <= exp(C lambda^2 V_t)`` on
  ``0 <= lambda <= c~``,
* the chaos-sum variant ``2 exp(-min(a^2/(4Cb), c a/(2 c'^2)))`` for
  filtration-dependent sums of quadratic forms ``r^T A_t r`` with
  ``A_t = M_t^T M_t`` and ``||M_t^T|| <= c'``.

The validator simulates each scenario, fits/verifies the chaos MGF
constant ``C`` by exact enumeration over the Rademacher cube, and flags
any grid point whose empirical frequency exceeds the bound plus
statistical slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TailQuery",
    "ConcScenario",
    "GridPoint",
    "ValidationReport",
    "freedman_bound",
    "modified_freedman_bound",
    "hw_martingale_bound",
    "mc_tail_validate",
    "default_scenario",
]

MIN_TRIALS = 10_000
_BATCH = 20_000


@dataclass(frozen=True)
class TailQuery:
    """One (deviation, variance-budget) query with its distribution constants."""

    a: float
    b: float
    C: float = 2.0
    c: float = 0.5
    c_tilde: float = 1.0
    c_prime: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be non-negative")
        for name in ("C", "c", "c_tilde", "c_prime"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def freedman_bound(a: float, b: float) -> float:
    """Tail bound ``min(1, 2 exp(-a^2 / (2(a+b))))`` for |increments| <= 1."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    if a == 0 and b == 0:
        raise ValueError("a and b must not both be zero")
    return min(1.0, 2.0 * math.exp(-(a**2) / (2.0 * (a + b))))


def modified_freedman_bound(a: float, b: float, C: float, c_tilde: float) -> float:
    """Tail bound ``min(1, exp(-min(a^2/(4Cb), c~ a / 2)))`` for ``0 < a <= b``."""
    if not (0 < a):
        raise ValueError("a must be positive")
    if a > b:
        raise ValueError(f"a = {a} exceeds b = {b}: outside the stated range")
    if C <= 0 or c_tilde <= 0:
        raise ValueError("C and c_tilde must be positive")
    return min(1.0, math.exp(-min(a**2 / (4.0 * C * b), c_tilde * a / 2.0)))


def hw_martingale_bound(a: float, b: float, C: float, c: float, c_prime: float) -> float:
    """Tail bound ``min(1, 2 exp(-min(a^2/(4Cb), c a/(2 c'^2))))`` for ``0 < a <= b``."""
    if not (0 < a):
        raise ValueError("a must be positive")
    if a > b:
        raise ValueError(f"a = {a} exceeds b = {b}: outside the stated range")
    if C <= 0 or c <= 0 or c_prime <= 0:
        raise ValueError("C, c and c_prime must be positive")
    return min(1.0, 2.0 * math.exp(-min(a**2 / (4.0 * C * b), c * a / (2.0 * c_prime**2))))


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class ConcScenario:
    """A simulated martingale plus the (a, b) grid to test it on.

    ``kind`` selects the path law: ``rademacher`` walks with unit
    increments (variance ``V_t = t``); ``chaos`` sums centered quadratic
    forms ``r^T A_l r - tr(A_l)`` over a fixed cycle of matrices.
    """

    name: str
    kind: str
    T: int
    a_grid: tuple[float, ...]
    b_grid: tuple[float, ...]
    dim: int = 8
    n_matrices: int = 4
    matrix_seed: int = 1234

    def matrices(self) -> list[np.ndarray]:
        """The fixed ``M_l`` factors of the chaos scenario."""
        if self.kind != "chaos":
            return []
        gen = np.random.Generator(np.random.Philox(key=[self.matrix_seed, 11]))
        out = []
        for _ in range(self.n_matrices):
            M = gen.standard_normal((self.dim, self.dim))
            M /= np.linalg.norm(M, 2)  # ||M|| = 1 exactly up to rounding
            out.append(M)
        return out


def default_scenario(which: str) -> ConcScenario:
    if which == "freedman":
        return ConcScenario(
            name="freedman",
            kind="rademacher",
            T=100,
            a_grid=(10.0, 14.0, 18.0, 24.0, 30.0),
            b_grid=(20.0, 40.0, 60.0, 80.0, 100.0),
        )
    if which == "mfreedman":
        return ConcScenario(
            name="mfreedman",
            kind="rademacher",
            T=100,
            a_grid=(10.0, 14.0, 18.0, 24.0, 30.0),
            b_grid=(20.0, 40.0, 60.0, 80.0, 100.0),
        )
    if which == "hw":
        # a/b grids are filled in against the realized variance budget.
        return ConcScenario(
            name="hw",
            kind="chaos",
            T=64,
            a_grid=(),
            b_grid=(),
        )
    raise ValueError(f"unknown scenario {which!r}")


@dataclass(frozen=True)
class GridPoint:
    a: float
    b: float
    empirical: float
    bound: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "empirical": self.empirical,
            "bound": self.bound,
            "slack": self.slack,
            "passed": self.passed,
        }


@dataclass
class ValidationReport:
    which: str
    trials: int
    seed: int
    fitted: dict = field(default_factory=dict)
    grid: list[GridPoint] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(p.passed for p in self.grid)

    def to_dict(self) -> dict:
        return {
            "which": self.which,
            "trials": self.trials,
            "seed": self.seed,
            "fitted": dict(self.fitted),
            "all_passed": self.all_passed,
            "grid": [p.to_dict() for p in self.grid],
        }


# ---------------------------------------------------------------------------
# Exact chaos MGF fitting (Lemma-style criterion)


def _enumerate_chaos_mgf(A: np.ndarray, lam: float) -> float:
    """Exact ``E exp(lam (r^T A r - tr A))`` over the Rademacher cube."""
    D = A.shape[0]
    if D > 16:
        raise ValueError("exact enumeration limited to dimension <= 16")
    signs = np.array(
        [[1.0 if (i >> j) & 1 else -1.0 for j in range(D)] for i in range(2**D)]
    )
    vals = np.einsum("ij,jk,ik->i", signs, A, signs) - np.trace(A)
    return float(np.mean(np.exp(lam * vals)))


def fit_chaos_constant(
    matrices: list[np.ndarray],
    c: float = 0.5,
    C_default: float = 2.0,
    n_lambda: int = 12,
) -> dict:
    """Verify/fit ``C`` in ``E exp(lam Y) <= exp(C lam^2 ||A||_F^2)``.

    Scans ``0 < lam <= c / ||A||`` for both tails (``+-Y``) by exact
    enumeration and returns the smallest valid ``C`` together with the
    ``C`` actually used (never below the default).
    """
    worst = 0.0
    for M in matrices:
        A = M.T @ M
        a_op = float(np.linalg.norm(A, 2))
        frob_sq = float(np.sum(A**2))
        for lam in np.linspace(c / a_op / n_lambda, c / a_op, n_lambda):
            for sign in (1.0, -1.0):
                mgf = _enumerate_chaos_mgf(A, sign * lam)
                worst = max(worst, math.log(mgf) / (lam**2 * frob_sq))
    c_prime = max(float(np.linalg.norm(M, 2)) for M in matrices)
    return {
        "C_fitted": float(worst),
        "C_used": float(max(C_default, worst)),
        "c": float(c),
        "c_prime": c_prime,
        "mgf_criterion_met_at_default": bool(worst <= C_default),
    }


# ---------------------------------------------------------------------------
# Monte-Carlo validation


def _simulate_rademacher_maxima(
    T: int, trials: int, seed: int, cutoffs: np.ndarray, one_sided: bool
) -> np.ndarray:
    """Per-(cutoff, trial) running extrema of a +-1 random walk.

    Returns an array of shape (len(cutoffs), trials) holding
    ``max_{t <= cutoff} |S_t|`` (or ``max S_t`` one-sided).
    """
    out = np.empty((len(cutoffs), trials))
    done = 0
    batch_idx = 0
    while done < trials:
        b = min(_BATCH, trials - done)
        gen = np.random.Generator(np.random.Philox(key=[seed, batch_idx]))
        steps = gen.integers(0, 2, size=(b, T), dtype=np.int8) * 2 - 1
        S = np.cumsum(steps, axis=1, dtype=np.int32)
        path = S if one_sided else np.abs(S)
        running = np.maximum.accumulate(path, axis=1)
        for ci, cut in enumerate(cutoffs):
            out[ci, done : done + b] = running[:, cut - 1] if cut >= 1 else 0.0
        done += b
        batch_idx += 1
    return out


def _chaos_variance_cumsum(scenario: ConcScenario) -> np.ndarray:
    """Deterministic cumulative variance budget ``V_t = sum ||A_t||_F^2``."""
    A = [M.T @ M for M in scenario.matrices()]
    series = np.array([float(np.sum(A[t % len(A)] ** 2)) for t in range(scenario.T)])
    return np.cumsum(series)


def _simulate_chaos_maxima(
    scenario: ConcScenario, trials: int, seed: int, cutoffs: np.ndarray
) -> np.ndarray:
    """Running max of |S_t| for the centered chaos sum at the given cutoffs."""
    mats = scenario.matrices()
    A = [M.T @ M for M in mats]
    D = scenario.dim
    T = scenario.T
    out = np.empty((len(cutoffs), trials))
    done = 0
    batch_idx = 0
    while done < trials:
        b = min(_BATCH, trials - done)
        gen = np.random.Generator(np.random.Philox(key=[seed, 2**32 + batch_idx]))
        S = np.zeros(b)
        running = np.zeros((b, T))
        for t in range(T):
            r = (gen.integers(0, 2, size=(b, D), dtype=np.int8) * 2 - 1).astype(np.float64)
            At = A[t % len(A)]
            Y = np.einsum("ij,jk,ik->i", r, At, r) - np.trace(At)
            S = S + Y
            running[:, t] = np.abs(S) if t == 0 else np.maximum(running[:, t - 1], np.abs(S))
        for ci, cut in enumerate(cutoffs):
            out[ci, done : done + b] = running[:, cut - 1] if cut >= 1 else 0.0
        done += b
        batch_idx += 1
    return out


def _statistical_slack(bound: float, trials: int) -> float:
    return 3.0 * math.sqrt(max(bound * (1.0 - bound), 0.0) / trials) + 10.0 / trials


def mc_tail_validate(
    which: str,
    scenario: ConcScenario | None = None,
    trials: int = 100_000,
    seed: int = 0,
) -> ValidationReport:
    """Simulate a scenario and compare event frequencies to the tail bounds.

    The tested event is ``exists t <= T: S_t > a (or |S_t| > a) and
    V_t <= b``; a grid point passes when the empirical frequency is at
    most ``bound + 3 sigma + 10/trials``.
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be at least {MIN_TRIALS}")
    if scenario is None:
        scenario = default_scenario(which)
    report = ValidationReport(which=which, trials=trials, seed=seed)

    if which in ("freedman", "mfreedman"):
        one_sided = which == "mfreedman"
        T = scenario.T
        # V_t = t exactly for unit Rademacher increments.
        b_grid = list(scenario.b_grid)
        cutoffs = np.array([min(T, int(math.floor(b))) for b in b_grid], dtype=int)
        maxima = _simulate_rademacher_maxima(T, trials, seed, cutoffs, one_sided)
        if which == "mfreedman":
            # cosh(lam) <= exp(lam^2 / 2) for all lam: C = 1/2, any c~ works.
            report.fitted = {"C": 0.5, "c_tilde": 1.0}
        for bi, b in enumerate(b_grid):
            for a in scenario.a_grid:
                emp = float(np.mean(maxima[bi] > a))
                if which == "freedman":
                    bound = freedman_bound(a, b)
                else:
                    bound = modified_freedman_bound(min(a, b), b, C=0.5, c_tilde=1.0)
                slack = _statistical_slack(bound, trials)
                report.grid.append(
                    GridPoint(a, b, emp, bound, slack, emp <= bound + slack)
                )
        return report

    if which == "hw":
        fitted = fit_chaos_constant(scenario.matrices())
        report.fitted = fitted
        V_cum = _chaos_variance_cumsum(scenario)
        a_grid = scenario.a_grid
        b_grid = scenario.b_grid
        if not b_grid:
            # Build the default grid against the deterministic variance budget.
            V_total = float(V_cum[-1])
            b_grid = tuple(V_total * f for f in (0.2, 0.4, 0.6, 0.8, 1.0))
            a_grid = tuple(math.sqrt(V_total) * f for f in (1.0, 1.5, 2.0, 3.0, 4.0))
        cutoffs = np.array(
            [int(np.searchsorted(V_cum, b + 1e-12, side="right")) for b in b_grid],
            dtype=int,
        )
        maxima = _simulate_chaos_maxima(scenario, trials, seed, np.maximum(cutoffs, 1))
        for bi, b in enumerate(b_grid):
            for a in a_grid:
                if cutoffs[bi] < 1:
                    emp = 0.0
                else:
                    emp = float(np.mean(maxima[bi] > a))
                bound = hw_martingale_bound(
                    min(a, b), b, C=fitted["C_used"], c=fitted["c"], c_prime=fitted["c_prime"]
                )
                slack = _statistical_slack(bound, trials)
                report.grid.append(
                    GridPoint(float(a), float(b), emp, bound, slack, emp <= bound + slack)
                )
        return report

    raise ValueError(f"unknown scenario {which!r}")
