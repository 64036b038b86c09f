"""Per-step constraint sets for the walk.

Three families restrict the step covariance on the active coordinates:
row constraints pin every row-discrepancy of the active window, singular
constraints remove the large singular directions of prefix submatrices,
and orthogonality constraints keep the discrepancy increment orthogonal
to the accumulated discrepancy on prefix blocks.  A corruption log tracks
which columns were ever moved without such protection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Instance, RunConfig, WalkState
from .errors import ConstraintBudgetExceeded, NumericalFailure

__all__ = [
    "ConstraintSet",
    "CorruptionLog",
    "compute_active_set",
    "build_row_constraints",
    "build_singular_constraints",
    "build_ortho_constraints",
    "assemble_constraint_set",
    "constraint_budget",
    "update_corruption",
    "ortho_block_count",
]

ZERO_NORM_TOL = 1e-12

FAMILIES = ("row", "singular", "ortho", "heavy_row", "global_singular", "support_drop")


@dataclass(frozen=True)
class ConstraintSet:
    """The constraints ``Y(t)`` for one step, tagged by family.

    ``vectors`` holds one length-``n`` constraint per row with support
    inside ``active``.  After assembly the count respects the
    constraint-to-active budget (see :func:`constraint_budget`).
    """

    vectors: np.ndarray  # (m, n)
    family: tuple[str, ...]
    active: np.ndarray  # sorted active indices

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def family_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for f in self.family:
            out[f] = out.get(f, 0) + 1
        return out

    def restricted(self) -> np.ndarray:
        """Constraint rows restricted to the active coordinates, shape (m, k)."""
        if self.count == 0:
            return np.zeros((0, len(self.active)))
        return self.vectors[:, self.active]


def compute_active_set(state: WalkState, instance: Instance, config: RunConfig) -> np.ndarray:
    """The ``min(|alive|, ceil(d/delta'))`` least-indexed alive coordinates."""
    alive = state.alive_indices()
    cap = config.active_cap(instance.d)
    return alive[:cap]


def build_row_constraints(instance: Instance, active: np.ndarray, config: RunConfig) -> list[np.ndarray]:
    """One constraint per matrix row, restricted to the active window.

    Rows fire only when the active set is at full capacity
    ``ceil(d/delta')``; a smaller window sets no row constraints.
    """
    cap = config.active_cap(instance.d)
    if len(active) != cap:
        return []
    out = []
    for j in range(instance.d):
        v = np.zeros(instance.n)
        v[active] = instance.B[j, active]
        if np.linalg.norm(v) >= ZERO_NORM_TOL:
            out.append(v)
    return out


def _singular_block_sizes(k: int, d: int, alpha1: float) -> tuple[int, int]:
    m_b = max(1, math.floor(alpha1 * math.sqrt(d)))
    block = math.ceil(k / m_b)
    return m_b, block


def build_singular_constraints(
    instance: Instance,
    active: np.ndarray,
    config: RunConfig,
    max_count: int | None = None,
) -> list[np.ndarray]:
    """Right singular vectors of active prefix submatrices with ``sigma^2 > sqrt(d)``.

    The active window is cut into ``max(1, floor(alpha1*sqrt(d)))``
    contiguous blocks; for each block the prefix submatrix (all active
    columns up to the block's end) contributes every right singular vector
    whose squared singular value exceeds ``sqrt(d)``.

    ``max_count`` caps the emission, keeping the vectors with the largest
    singular values; callers use it to hold the per-step constraint budget
    at small active-set sizes where emitting everything above the
    threshold would overflow it.
    """
    k = len(active)
    if k == 0:
        return []
    d = instance.d
    m_b, block = _singular_block_sizes(k, d, config.alpha1)
    threshold = math.sqrt(d)
    found: list[tuple[float, np.ndarray]] = []
    for j in range(1, m_b + 1):
        cols = active[: min(j * block, k)]
        sub = instance.B[:, cols]
        if not np.all(np.isfinite(sub)):
            raise NumericalFailure("non-finite entries in prefix submatrix")
        try:
            _, s, vt = np.linalg.svd(sub, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"SVD failed on block {j}") from exc
        for l in range(len(s)):
            sig_sq = float(s[l] ** 2)
            if sig_sq > threshold:
                v = np.zeros(instance.n)
                v[cols] = vt[l]
                found.append((sig_sq, v))
    found.sort(key=lambda p: -p[0])
    if max_count is not None:
        found = found[: max(0, max_count)]
    return [v for _, v in found]


def ortho_block_count(k: int, config: RunConfig) -> int:
    """Number of discrepancy-orthogonality prefix blocks for ``k`` active."""
    if k == 0:
        return 0
    return math.ceil(k / math.ceil(1.0 / config.alpha2))


def build_ortho_constraints(
    instance: Instance,
    active: np.ndarray,
    state: WalkState,
    config: RunConfig,
) -> list[np.ndarray]:
    """Discrepancy-orthogonality vectors ``w_j = B_j^T B_j x`` per prefix block.

    ``B_j`` is the submatrix over the first ``min(block*j, k)`` active
    columns with block size ``ceil(1/alpha2)``.  Near-zero vectors
    (norm below 1e-12) are dropped; at most ``ceil(alpha2*k)`` are emitted.
    """
    k = len(active)
    if k == 0:
        return []
    block = math.ceil(1.0 / config.alpha2)
    nblocks = ortho_block_count(k, config)
    out = []
    prefix_sum = np.zeros(instance.d)
    prev_end = 0
    for j in range(1, nblocks + 1):
        end = min(block * j, k)
        cols_new = active[prev_end:end]
        prefix_sum = prefix_sum + instance.B[:, cols_new] @ state.x[cols_new]
        prev_end = end
        cols = active[:end]
        w = np.zeros(instance.n)
        w[cols] = instance.B[:, cols].T @ prefix_sum
        if np.linalg.norm(w) >= ZERO_NORM_TOL:
            out.append(w)
    return out


def constraint_budget(k: int, config: RunConfig) -> int:
    """Largest admissible ``|Y(t)|`` for ``k`` active variables.

    ``floor(delta*k)`` in the standard regime.  Below one orthogonality
    block (``k < ceil(1/alpha2)``) the binding restriction is the vector
    coloring's mass floor ``(1-delta-beta)k``, so the budget relaxes to
    ``k - ceil((1-delta-beta)k)``; with the default constants this admits
    the single orthogonality constraint down to ``k = 2`` and forces an
    unconstrained final step at ``k = 1``.
    """
    if k == 0:
        return 0
    small = math.ceil(1.0 / config.alpha2)
    if k >= small:
        return math.floor(config.delta * k + 1e-9)
    return max(0, k - math.ceil((1.0 - config.delta - config.beta) * k - 1e-9))


def assemble_constraint_set(
    rows: list[np.ndarray],
    singulars: list[np.ndarray],
    orthos: list[np.ndarray],
    active: np.ndarray,
    config: RunConfig,
    extra: list[tuple[str, np.ndarray]] | None = None,
) -> ConstraintSet:
    """Concatenate the families, tag them, and enforce the budget.

    Raises :class:`ConstraintBudgetExceeded` with per-family counts when
    the total exceeds :func:`constraint_budget`.
    """
    k = len(active)
    tagged: list[tuple[str, np.ndarray]] = []
    tagged += [("row", v) for v in rows]
    tagged += [("singular", v) for v in singulars]
    tagged += [("ortho", v) for v in orthos]
    if extra:
        tagged += list(extra)

    n = None
    active_mask = None
    for fam, v in tagged:
        if fam not in FAMILIES:
            raise ValueError(f"unknown constraint family {fam!r}")
        if n is None:
            n = v.shape[0]
            active_mask = np.zeros(n, dtype=bool)
            active_mask[active] = True
        if np.linalg.norm(v) < ZERO_NORM_TOL:
            raise ValueError(f"constraint of family {fam!r} has near-zero norm")
        if np.any(v[~active_mask] != 0.0):
            raise ValueError(f"constraint of family {fam!r} has support outside the active set")

    count = len(tagged)
    budget = constraint_budget(k, config)
    if count > budget:
        counts: dict[str, int] = {}
        for fam, _ in tagged:
            counts[fam] = counts.get(fam, 0) + 1
        raise ConstraintBudgetExceeded(counts, k, budget)

    if count:
        vectors = np.stack([v for _, v in tagged], axis=0)
    else:
        vectors = np.zeros((0, 0))
    return ConstraintSet(
        vectors=vectors,
        family=tuple(fam for fam, _ in tagged),
        active=np.asarray(active, dtype=np.intp),
    )


# ---------------------------------------------------------------------------
# Corruption tracking


@dataclass
class CorruptionLog:
    """Which columns were ever active without protection, per monitored prefix.

    A column is protected at a step exactly when row constraints are
    present and the whole active window sits inside the prefix; it joins
    the corrupted set the first time it is active with no protection at
    any step so far.  The check is conservative: it recognizes the
    single-constraint row witnesses the builders actually construct, not
    arbitrary linear combinations.
    """

    n: int
    prefixes: tuple[int, ...]
    corrupted: dict[int, np.ndarray] = field(default_factory=dict)
    protected_ever: dict[int, np.ndarray] = field(default_factory=dict)
    first_corruption_t: dict[int, int | None] = field(default_factory=dict)

    def __post_init__(self):
        for i in self.prefixes:
            if not (1 <= i <= self.n):
                raise ValueError(f"monitored prefix {i} outside [1, {self.n}]")
            self.corrupted.setdefault(i, np.zeros(self.n, dtype=bool))
            self.protected_ever.setdefault(i, np.zeros(self.n, dtype=bool))
            self.first_corruption_t.setdefault(i, None)

    def corrupted_indices(self, prefix: int) -> np.ndarray:
        return np.flatnonzero(self.corrupted[prefix])

    def corrupted_count(self, prefix: int) -> int:
        return int(self.corrupted[prefix].sum())


def update_corruption(
    log: CorruptionLog,
    constraint_set: ConstraintSet,
    instance: Instance,
    t: int,
) -> CorruptionLog:
    """Fold step ``t``'s constraint set into the corruption log."""
    active = constraint_set.active
    if len(active) == 0:
        return log
    has_rows = "row" in constraint_set.family
    max_active = int(active.max())
    for i in log.prefixes:
        # Prefix of length i covers 0-based column indices < i.
        if has_rows and max_active < i:
            log.protected_ever[i][active] = True
            continue
        in_prefix = active[active < i]
        if len(in_prefix) == 0:
            continue
        newly = in_prefix[~log.protected_ever[i][in_prefix] & ~log.corrupted[i][in_prefix]]
        if len(newly):
            log.corrupted[i][newly] = True
            if log.first_corruption_t[i] is None:
                log.first_corruption_t[i] = t
    return log
