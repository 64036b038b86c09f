"""Local mean squared discrepancy over row covers.

The walk is reconfigured for a unit-column matrix ``M``: the active
window is capped at ``ceil(delta' * n)`` columns, large singular
directions of the active submatrix are constrained away, rows whose
active mass exceeds a threshold are pinned exactly, and the usual
discrepancy-orthogonality constraints are kept.  The output is scored by
``sum_{i in F} (e_i^T M x)^2`` over every set ``F`` of a row cover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import (
    ConstraintSet,
    assemble_constraint_set,
    build_ortho_constraints,
    constraint_budget,
)
from .core import Coloring, Instance, RunConfig, WalkState
from .errors import MalformedFile, NumericalFailure
from .metrics import DiagnosticsTrace, local_mean_sq_discrepancy
from .walk import _run_walk

__all__ = [
    "RowCover",
    "load_cover",
    "disjoint_cover",
    "build_komlos_constraints",
    "komlos_active_set",
    "run_komlos",
]


@dataclass(frozen=True)
class RowCover:
    """A family of row-index sets jointly covering all rows of ``M``."""

    sets: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "sets", tuple(np.asarray(s, dtype=np.intp) for s in self.sets)
        )

    @property
    def width(self) -> int:
        return min((len(s) for s in self.sets), default=0)

    def validate(self, m: int, n: int, max_sets: int | None = None) -> None:
        """Check coverage, width >= ceil(ln n), and the size bound (default n^3)."""
        if not self.sets:
            raise ValueError("row cover has no sets")
        limit = max_sets if max_sets is not None else n**3
        if len(self.sets) > limit:
            raise ValueError(f"row cover has {len(self.sets)} sets, limit {limit}")
        covered = np.zeros(m, dtype=bool)
        for f, rows in enumerate(self.sets):
            if len(rows) == 0:
                raise ValueError(f"cover set {f} is empty")
            if rows.min() < 0 or rows.max() >= m:
                raise IndexError(f"cover set {f} has row indices outside [0, {m})")
            covered[rows] = True
        if not covered.all():
            missing = int(np.flatnonzero(~covered)[0])
            raise ValueError(f"row {missing} is not covered by any set")
        need = math.ceil(math.log(n)) if n > 1 else 1
        if self.width < need:
            raise ValueError(f"cover width {self.width} below ceil(ln n) = {need}")


def load_cover(path) -> RowCover:
    """Read a cover file: one set per line, space-separated 0-based row indices."""
    sets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows = np.array([int(tok) for tok in line.split()], dtype=np.intp)
            except ValueError as exc:
                raise MalformedFile(f"{path}:{lineno}: non-integer row index") from exc
            sets.append(rows)
    if not sets:
        raise MalformedFile(f"{path}: no cover sets found")
    return RowCover(tuple(sets))


def save_cover(cover: RowCover, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rows in cover.sets:
            fh.write(" ".join(str(int(r)) for r in rows) + "\n")


def disjoint_cover(m: int, width: int) -> RowCover:
    """Consecutive disjoint blocks of ``width`` rows (last block absorbs the tail)."""
    if width < 1 or width > m:
        raise ValueError(f"width {width} not in [1, {m}]")
    edges = list(range(0, m - m % width, width))
    sets = [np.arange(e, min(e + width, m)) for e in edges]
    if m % width:
        sets[-1] = np.arange(sets[-1][0], m)
    return RowCover(tuple(sets))


def komlos_active_set(state: WalkState, config: RunConfig) -> np.ndarray:
    """Least-indexed alive columns capped at ``ceil(delta' * n)``."""
    cap = math.ceil(config.delta_prime * state.n)
    return state.alive_indices()[:cap]


def _global_singular_constraints(
    M: Instance, active: np.ndarray, config: RunConfig, max_count: int | None
) -> list[np.ndarray]:
    """Right singular vectors of the active submatrix with ``sigma^2 > 1/delta'``.

    At most ``delta' |A|`` such directions exist because the active
    submatrix has Frobenius norm squared at most ``|A|``.
    """
    sub = M.B[:, active]
    try:
        _, s, vt = np.linalg.svd(sub, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("SVD failed for the active submatrix") from exc
    threshold = 1.0 / config.delta_prime
    out: list[tuple[float, np.ndarray]] = []
    for l in range(len(s)):
        sig_sq = float(s[l] ** 2)
        if sig_sq > threshold:
            v = np.zeros(M.n)
            v[active] = vt[l]
            out.append((sig_sq, v))
    out.sort(key=lambda p: -p[0])
    if max_count is not None:
        out = out[: max(0, max_count)]
    return [v for _, v in out]


def _heavy_row_constraints(
    M: Instance, active: np.ndarray, config: RunConfig
) -> list[np.ndarray]:
    """Rows with active mass ``sum_j m_ij^2 > c_heavy``, restricted to the window."""
    sub = M.B[:, active]
    mass = np.einsum("ij,ij->i", sub, sub)
    out = []
    for i in np.flatnonzero(mass > config.c_heavy):
        v = np.zeros(M.n)
        v[active] = M.B[i, active]
        out.append(v)
    return out


def build_komlos_constraints(M: Instance, state: WalkState, config: RunConfig) -> ConstraintSet:
    """The full per-step constraint set for the row-cover walk."""
    cs, _ = _komlos_builder(M, config)(state)
    return cs


def _komlos_builder(M: Instance, config: RunConfig):
    from .walk import StepConstraints, _restrict

    cache_key: bytes | None = None
    cache_sing: list[np.ndarray] = []
    cache_heavy: list[np.ndarray] = []

    def build(state: WalkState) -> StepConstraints:
        nonlocal cache_key, cache_sing, cache_heavy
        active = komlos_active_set(state, config)
        key = active.tobytes()
        if key != cache_key:
            cache_sing = _global_singular_constraints(M, active, config, max_count=None)
            cache_heavy = _heavy_row_constraints(M, active, config)
            cache_key = key
        budget = constraint_budget(len(active), config)
        heavy = cache_heavy[: min(len(cache_heavy), budget)]
        orthos = build_ortho_constraints(M, active, state, config)
        keep = min(len(orthos), budget - len(heavy))
        dropped_orthos = len(orthos) - keep
        orthos = orthos[:keep]
        sing = cache_sing[: max(0, budget - len(heavy) - len(orthos))]
        extra = [("heavy_row", v) for v in heavy] + [("global_singular", v) for v in sing]
        cs = assemble_constraint_set([], [], orthos, active, config, extra=extra)
        return StepConstraints(
            cs=cs,
            dropped_orthos=dropped_orthos,
            static_restricted=_restrict(heavy + sing, active),
            dynamic_restricted=_restrict(orthos, active),
            trimmed=(
                dropped_orthos > 0
                or len(sing) < len(cache_sing)
                or len(heavy) < len(cache_heavy)
            ),
        )

    return build


def run_komlos(
    M: Instance,
    cover: RowCover,
    config: RunConfig,
) -> tuple[Coloring, list[dict], DiagnosticsTrace]:
    """Walk ``M`` under the row-cover constraints and score every cover set.

    Returns the rounded coloring, one ``{"rows", "sum", "ratio"}`` record
    per cover set (``ratio = sum / (ln n + |F|)``), and the diagnostics
    trace.  Deterministic in ``config.seed``.
    """
    cover.validate(M.d, M.n)
    coloring, trace = _run_walk(M, config, _komlos_builder(M, config))
    x = coloring.signs.astype(np.float64)
    sums, ratios = local_mean_sq_discrepancy(M, x, list(cover.sets))
    per_set = [
        {"rows": [int(r) for r in rows], "sum": float(s), "ratio": float(rat)}
        for rows, s, rat in zip(cover.sets, sums, ratios)
    ]
    return coloring, per_set, trace
