"""The random-walk engine: step updates, freezing, termination.

Each step draws a Rademacher vector on the active coordinates and moves
the fractional coloring by ``gamma * U_t r_t`` where ``U_t`` is a
certified vector coloring for the step's constraint set.  Coordinates
freeze on reaching ``1 - 1/n`` in absolute value; a step that would leave
the unit box is retried with a halved step size (same draw).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .constraints import (
    ConstraintSet,
    CorruptionLog,
    assemble_constraint_set,
    build_ortho_constraints,
    build_row_constraints,
    build_singular_constraints,
    compute_active_set,
    constraint_budget,
    update_corruption,
)
from .core import (
    Coloring,
    Instance,
    RunConfig,
    WalkState,
    freeze_threshold,
    round_coloring,
)
from .errors import MaxStepsExceeded, StepOverflow, UvcInfeasible
from .metrics import (
    DiagnosticsTrace,
    VerificationRecord,
    b_op_constant,
    decompose_increments,
    max_prefix_discrepancy,
    operator_norm_sq_power,
)
from .uvc import IncrementalProjector, VectorColoring, construct_uvc, verify_uvc

__all__ = ["StepSample", "walk_step", "run_signed_series", "rademacher_vector"]

MAX_HALVINGS = 20
ORTHO_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class StepSample:
    """One step's randomness and displacement.

    ``r`` is ``+-1`` on the active set and 0 elsewhere; ``delta_x`` equals
    ``gamma_used * U_t r`` where ``gamma_used`` is the configured step
    size after any box-retry halvings.
    """

    r: np.ndarray
    delta_x: np.ndarray
    gamma_used: float
    u_frob_sq: float
    halvings: int = 0


def rademacher_vector(n: int, seed: int, t: int) -> np.ndarray:
    """Counter-based +-1 draw: entry ``i`` is a pure function of (seed, t, i)."""
    bg = np.random.Philox(key=[int(seed) % 2**64, int(t) % 2**64])
    gen = np.random.Generator(bg)
    return (gen.integers(0, 2, size=n, dtype=np.int8) * 2 - 1).astype(np.int8)


def walk_step(state: WalkState, uvc: VectorColoring, config: RunConfig) -> tuple[WalkState, StepSample]:
    """Advance the walk one step under a certified vector coloring.

    The box invariant ``|x_t(i)| <= 1`` is enforced by rejecting the step
    and halving gamma (for this step only, same draw) up to 20 times;
    :class:`StepOverflow` past that signals misconfiguration.
    """
    n = state.n
    t = state.t + 1
    active = uvc.active
    r_full = rademacher_vector(n, state.seed, t)
    r = np.zeros(n, dtype=np.int8)
    r[active] = r_full[active]
    base = uvc.U_active @ r_full[active].astype(np.float64) if uvc.k else np.zeros(0)

    gamma = config.gamma
    halvings = 0
    while True:
        moved = state.x[active] + gamma * base
        if len(moved) == 0 or np.abs(moved).max() <= 1.0:
            break
        if halvings >= MAX_HALVINGS:
            raise StepOverflow(
                f"step {t}: box violation persists after {MAX_HALVINGS} gamma halvings"
            )
        gamma /= 2.0
        halvings += 1

    x_new = state.x.copy()
    x_new[active] = moved
    delta_x = np.zeros(n)
    delta_x[active] = gamma * base
    frozen_new = state.frozen | (np.abs(x_new) >= freeze_threshold(n))
    new_state = WalkState(x=x_new, frozen=frozen_new, t=t, seed=state.seed)
    sample = StepSample(
        r=r,
        delta_x=delta_x,
        gamma_used=gamma,
        u_frob_sq=uvc.frob_sq(),
        halvings=halvings,
    )
    return new_state, sample


# ---------------------------------------------------------------------------
# Constraint assembly for the signed-series mode


@dataclass
class StepConstraints:
    """One step's assembled constraints plus the pieces the fast path needs."""

    cs: ConstraintSet
    dropped_orthos: int
    static_restricted: np.ndarray  # rows+singulars over active coordinates
    dynamic_restricted: np.ndarray  # orthogonality vectors over active coordinates
    trimmed: bool  # True when the budget cut anything structural


def _restrict(vectors: list[np.ndarray], active: np.ndarray) -> np.ndarray:
    if not vectors:
        return np.zeros((0, len(active)))
    return np.stack([v[active] for v in vectors], axis=0)


def _signed_series_builder(instance: Instance, config: RunConfig):
    """Per-step constraint builder with a single-entry singular-spectrum cache."""
    cache_key: bytes | None = None
    cache_rows: list[np.ndarray] = []
    cache_sing: list[np.ndarray] = []

    def build(state: WalkState) -> StepConstraints:
        nonlocal cache_key, cache_rows, cache_sing
        active = compute_active_set(state, instance, config)
        key = active.tobytes()
        if key != cache_key:
            cache_rows = build_row_constraints(instance, active, config)
            # Full spectrum above the threshold; trimmed to budget below.
            cache_sing = build_singular_constraints(instance, active, config, max_count=None)
            cache_key = key
        rows = cache_rows
        orthos = build_ortho_constraints(instance, active, state, config)
        budget = constraint_budget(len(active), config)
        keep = min(len(orthos), budget - len(rows))
        dropped_orthos = len(orthos) - keep
        orthos = orthos[:keep]
        n_sing = max(0, budget - len(rows) - len(orthos))
        sing = cache_sing[:n_sing]
        cs = assemble_constraint_set(rows, sing, orthos, active, config)
        return StepConstraints(
            cs=cs,
            dropped_orthos=dropped_orthos,
            static_restricted=_restrict(rows + sing, active),
            dynamic_restricted=_restrict(orthos, active),
            trimmed=dropped_orthos > 0 or len(sing) < len(cache_sing),
        )

    return build


# ---------------------------------------------------------------------------
# Shared run loop


def _active_prefix_positions(active: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Positions (into the active block) of active coords inside a column mask."""
    return np.flatnonzero(mask[active])


_SHED_ORDER = ("singular", "global_singular", "ortho", "heavy_row", "row")


def _shed_one_constraint(cs: ConstraintSet) -> ConstraintSet | None:
    """Drop the lowest-priority constraint (last of its family), or None if empty.

    Removing a constraint can only enlarge the null-space projector, so
    repeated shedding always reaches a feasible (possibly unconstrained)
    step.  Singular directions go first: they sharpen constants but are
    not load-bearing for the walk's safety invariants.
    """
    if cs.count == 0:
        return None
    for fam in _SHED_ORDER:
        hits = [j for j, f in enumerate(cs.family) if f == fam]
        if hits:
            keep = [j for j in range(cs.count) if j != hits[-1]]
            return ConstraintSet(
                vectors=cs.vectors[keep] if keep else np.zeros((0, 0)),
                family=tuple(cs.family[j] for j in keep),
                active=cs.active,
            )
    return None


def _construct_with_shedding(cs: ConstraintSet, config: RunConfig):
    """Construct the step's vector coloring, relaxing constraints if needed."""
    shed = {"singular": 0, "global_singular": 0, "ortho": 0, "heavy_row": 0, "row": 0}
    while True:
        try:
            return construct_uvc(cs, config), cs, shed
        except UvcInfeasible:
            smaller = _shed_one_constraint(cs)
            if smaller is None:
                raise
            for fam, before in cs.family_counts().items():
                after = smaller.family_counts().get(fam, 0)
                if after < before:
                    shed[fam] += before - after
            cs = smaller


def _verification_checks(
    instance: Instance,
    config: RunConfig,
    state: WalkState,
    uvc: VectorColoring,
    corr: CorruptionLog,
    report,
    t: int,
) -> VerificationRecord:
    rec = VerificationRecord(
        t=t,
        kernel_residual=report.kernel_residual,
        spectral_margin=report.spectral_margin,
        max_row_norm=report.max_row_norm,
        mass=report.mass,
        mass_floor=report.mass_floor,
        op_norm_sq=report.op_norm_sq,
        passed=report.passed,
    )
    frob = uvc.frob_sq()
    if frob <= 0.0:
        return rec
    active = uvc.active
    for i in corr.prefixes:
        mask = corr.corrupted[i]
        if not mask.any():
            continue
        pos = _active_prefix_positions(active, mask)
        if len(pos) == 0:
            continue
        cols = active[pos]
        W = instance.B[:, cols] @ uvc.U_active[pos, :]  # nonzero block of B_S U_t
        val = operator_norm_sq_power(W)
        rec.lemma5_value[i] = val
        rec.lemma5_bound[i] = b_op_constant(instance.d, config) * report.op_norm_sq
        rec.frob_ratio[i] = float(np.sum(W**2)) * config.beta / frob
        corr_idx = np.flatnonzero(mask)
        s = instance.B[:, corr_idx] @ state.x[corr_idx]  # B_S x_{t-1}
        lin = s @ W
        rec.cl_ratio[i] = float(lin @ lin) * config.beta / frob
        u_lin = uvc.U_active[pos, :].T @ state.x[cols]
        rec.ltilde_ratio[i] = float(u_lin @ u_lin) / frob
    return rec


def _run_walk(
    instance: Instance,
    config: RunConfig,
    builder,
) -> tuple[Coloring, DiagnosticsTrace]:
    n = instance.n
    started = time.perf_counter()
    max_steps = config.resolved_max_steps(n)
    prefixes = config.resolved_prefixes(n)
    state = WalkState.initial(n, config.seed)
    trace = DiagnosticsTrace.create(instance, config, prefixes)
    corr = CorruptionLog(n=n, prefixes=prefixes)
    projector = IncrementalProjector(config)
    last_drop_verify = -(10**9)

    while state.alive_count > 0:
        if state.t >= max_steps:
            trace.finalize(instance, state, started, corr)
            raise MaxStepsExceeded(state, trace)
        t = state.t + 1
        step_cs = builder(state)
        cs = step_cs.cs
        uvc = None
        if not step_cs.trimmed and config.uvc_method == "projection":
            if not projector.matches(cs.active):
                projector.set_active(cs.active, step_cs.static_restricted)
            uvc = projector.step(cs, step_cs.dynamic_restricted, n)
        if uvc is not None:
            shed = {"ortho": 0}
        else:
            uvc, cs, shed = _construct_with_shedding(cs, config)
        trace.ortho_blocks_unenforced += step_cs.dropped_orthos + shed["ortho"]
        update_corruption(corr, cs, instance, t)

        # Full certification at cadence, on the first step, and after
        # support drops (rate-limited: at moderate dimension a small dip
        # below beta is routine, and every step already carries the exact
        # sufficient certificate from construction).
        drop_verify = uvc.n_drops > 0 and (t - last_drop_verify) >= config.verify_every
        do_verify = t == 1 or drop_verify or (t % config.verify_every == 0)
        if do_verify:
            if uvc.n_drops > 0:
                last_drop_verify = t
            report = verify_uvc(uvc, cs, config)
            rec = _verification_checks(instance, config, state, uvc, corr, report, t)
            trace.verifications.append(rec)
            if not report.passed:
                raise UvcInfeasible(
                    f"step {t}: verification failed (kernel={report.kernel_residual:.3g}, "
                    f"margin={report.spectral_margin:.3g}, mass={report.mass:.6g})"
                )

        prev_state = state
        state, sample = walk_step(state, uvc, config)
        trace.halvings_total += sample.halvings
        trace.box_max = max(trace.box_max, float(np.abs(state.x).max()))
        # Residual of the enforced orthogonality constraints on this step.
        ortho_rows = [j for j, fam in enumerate(cs.family) if fam == "ortho"]
        if ortho_rows:
            resid = cs.vectors[ortho_rows] @ sample.delta_x / sample.gamma_used
            trace.ortho_residual_max = max(trace.ortho_residual_max, float(np.abs(resid).max()))
        decompose_increments(trace, instance, prev_state, sample, corr)
        if t % config.record_every == 0:
            disc, _ = max_prefix_discrepancy(instance, state.x)
            trace.record_row(t, state.alive_count, disc, corr)

    trace.finalize(instance, state, started, corr)
    trace.record_row(state.t, 0, trace.final_max_prefix_disc, corr)
    coloring = round_coloring(state)
    return coloring, trace


def run_signed_series(instance: Instance, config: RunConfig) -> tuple[Coloring, DiagnosticsTrace]:
    """Run the full constrained walk on a signed-series instance.

    Deterministic in ``config.seed``.  Raises :class:`MaxStepsExceeded`
    (with partial state and trace attached) if alive variables remain at
    the step budget; propagates :class:`UvcInfeasible`,
    :class:`~l2disc.errors.ConstraintBudgetExceeded` and
    :class:`StepOverflow`.
    """
    builder = _signed_series_builder(instance, config)
    return _run_walk(instance, config, builder)
