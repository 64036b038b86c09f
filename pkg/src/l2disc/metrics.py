"""Discrepancy measurement and diagnostic decompositions.

For a monitored prefix the squared discrepancy growth over the corrupted
columns splits exactly into a quadratic and a linear part,

  ``||B_S x_t||^2 - ||B_S x_0||^2 = Q_t + 2 L_t``,

and similarly for the plain squared coordinate mass over the corrupted
set (``Qt``/``Lt`` below).  The trace records these cumulatively together
with the received energy ``V_B = sum_t gamma^2 ||U_t||_F^2`` and sampled
prefix discrepancies.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import CorruptionLog
from .core import Instance, RunConfig, WalkState

__all__ = [
    "DiagnosticsTrace",
    "VerificationRecord",
    "max_prefix_discrepancy",
    "decompose_increments",
    "local_mean_sq_discrepancy",
    "operator_norm_sq_power",
    "b_op_constant",
]


def max_prefix_discrepancy(instance: Instance, x: np.ndarray) -> tuple[float, int]:
    """Largest l2 norm over prefix sums ``sum_{j<=i} x_j v_j``.

    Returns ``(value, argmax)`` with ``argmax`` the 1-based prefix length
    attaining the maximum (first one on ties).  Single running-sum pass,
    O(nd).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (instance.n,):
        raise ValueError(f"coloring has shape {x.shape}, expected ({instance.n},)")
    prefixes = np.cumsum(instance.B * x[None, :], axis=1)
    norms_sq = np.einsum("ij,ij->j", prefixes, prefixes)
    arg = int(np.argmax(norms_sq))
    return float(math.sqrt(norms_sq[arg])), arg + 1


def local_mean_sq_discrepancy(
    M: Instance,
    x: np.ndarray,
    cover: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Sum of squared row discrepancies over each row set of a cover.

    Returns ``(sums, ratios)`` where ``sums[f] = sum_{i in F_f} (e_i^T M x)^2``
    and ``ratios[f] = sums[f] / (ln n + |F_f|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    Mx = M.B @ x
    sums = np.empty(len(cover))
    ratios = np.empty(len(cover))
    logn = math.log(M.n)
    for f, rows in enumerate(cover):
        rows = np.asarray(rows, dtype=np.intp)
        if len(rows) == 0:
            raise ValueError(f"cover set {f} is empty")
        if rows.min() < 0 or rows.max() >= M.d:
            raise IndexError(f"cover set {f} has row indices outside [0, {M.d})")
        sums[f] = float(np.sum(Mx[rows] ** 2))
        ratios[f] = sums[f] / (logn + len(rows))
    return sums, ratios


def operator_norm_sq_power(W: np.ndarray, iters: int = 100, tol: float = 1e-12) -> float:
    """Squared operator norm of ``W`` by power iteration on ``W W^T``."""
    d = W.shape[0]
    if W.size == 0:
        return 0.0
    v = np.ones(d) + 1e-3 * np.arange(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = W @ (W.T @ v)
        nrm = np.linalg.norm(u)
        if nrm < 1e-300:
            return 0.0
        u /= nrm
        lam_new = float(u @ (W @ (W.T @ u)))
        if abs(lam_new - lam) <= tol * max(lam_new, 1.0):
            return lam_new
        lam, v = lam_new, u
    return lam


def b_op_constant(d: int, config: RunConfig) -> float:
    """The operator-norm budget ``4 sqrt(d) / (alpha1 delta')``."""
    return 4.0 * math.sqrt(d) / (config.alpha1 * config.delta_prime)


@dataclass
class VerificationRecord:
    """Snapshot of the certificate and lemma spot-checks at one step."""

    t: int
    kernel_residual: float
    spectral_margin: float
    max_row_norm: float
    mass: float
    mass_floor: float
    op_norm_sq: float
    passed: bool
    # per monitored prefix: {prefix: value}
    lemma5_value: dict[int, float] = field(default_factory=dict)
    lemma5_bound: dict[int, float] = field(default_factory=dict)
    frob_ratio: dict[int, float] = field(default_factory=dict)
    cl_ratio: dict[int, float] = field(default_factory=dict)
    ltilde_ratio: dict[int, float] = field(default_factory=dict)


@dataclass
class DiagnosticsTrace:
    """Time series and counters collected over one run."""

    n: int
    d: int
    prefixes: tuple[int, ...]
    gamma: float
    config_snapshot: dict = field(default_factory=dict)
    Q: dict[int, float] = field(default_factory=dict)
    L: dict[int, float] = field(default_factory=dict)
    Qt: dict[int, float] = field(default_factory=dict)
    Lt: dict[int, float] = field(default_factory=dict)
    V_B: float = 0.0
    steps: int = 0
    rows: list[dict] = field(default_factory=list)
    verifications: list[VerificationRecord] = field(default_factory=list)
    box_max: float = 0.0
    ortho_residual_max: float = 0.0
    ortho_blocks_unenforced: int = 0
    halvings_total: int = 0
    u_frob_history: list[float] | None = None
    wall_time: float = 0.0
    final_max_prefix_disc: float = float("nan")
    argmax_prefix: int = 0
    frozen_count: int = 0
    fitted: dict = field(default_factory=dict)
    final_x: np.ndarray | None = None
    corrupted_final: dict[int, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def create(instance: Instance, config: RunConfig, prefixes: tuple[int, ...]) -> "DiagnosticsTrace":
        tr = DiagnosticsTrace(
            n=instance.n,
            d=instance.d,
            prefixes=prefixes,
            gamma=config.gamma,
            config_snapshot={
                "gamma": config.gamma,
                "beta": config.beta,
                "delta": config.delta,
                "delta_prime": config.delta_prime,
                "alpha1": config.alpha1,
                "alpha2": config.alpha2,
                "seed": config.seed,
                "uvc_method": config.uvc_method,
                "verify_every": config.verify_every,
                "max_steps": config.resolved_max_steps(instance.n),
                "monitored_prefixes": list(prefixes),
            },
        )
        for i in prefixes:
            tr.Q[i] = tr.L[i] = tr.Qt[i] = tr.Lt[i] = 0.0
        if config.record_unorms:
            tr.u_frob_history = []
        return tr

    def record_row(
        self,
        t: int,
        alive: int,
        max_disc: float,
        corr: CorruptionLog,
    ) -> None:
        for i in self.prefixes:
            self.rows.append(
                {
                    "t": t,
                    "alive": alive,
                    "V_B": self.V_B,
                    "max_prefix_disc": max_disc,
                    "prefix_i": i,
                    "Q": self.Q[i],
                    "L": self.L[i],
                    "Qt": self.Qt[i],
                    "Lt": self.Lt[i],
                    "corr_size": corr.corrupted_count(i),
                }
            )

    def finalize(
        self,
        instance: Instance,
        state: WalkState,
        started: float,
        corr: CorruptionLog | None = None,
    ) -> None:
        self.wall_time = time.perf_counter() - started
        self.steps = state.t
        self.frozen_count = int(state.frozen.sum())
        self.final_x = state.x.copy()
        if corr is not None:
            self.corrupted_final = {i: corr.corrupted_indices(i) for i in self.prefixes}
        disc, arg = max_prefix_discrepancy(instance, state.x)
        self.final_max_prefix_disc = disc
        self.argmax_prefix = arg
        self.fitted.setdefault("K1_hat", disc / math.sqrt(self.d + math.log(self.n) ** 2))
        cl = [v for rec in self.verifications for v in rec.cl_ratio.values()]
        if cl:
            self.fitted.setdefault("C_L_hat", max(cl))
        lt = [v for rec in self.verifications for v in rec.ltilde_ratio.values()]
        if lt:
            self.fitted.setdefault("Ltilde_var_ratio_max", max(lt))
        l5 = [
            rec.lemma5_value[i] - rec.lemma5_bound[i]
            for rec in self.verifications
            for i in rec.lemma5_value
        ]
        if l5:
            self.fitted.setdefault("lemma5_max_excess", max(l5))

    def summary_dict(self) -> dict:
        return {
            "max_prefix_discrepancy": self.final_max_prefix_disc,
            "argmax_prefix": self.argmax_prefix,
            "steps": self.steps,
            "frozen_count": self.frozen_count,
            "fitted_constants": dict(self.fitted),
            "config": dict(self.config_snapshot),
            "V_B": self.V_B,
            "box_max": self.box_max,
            "ortho_residual_max": self.ortho_residual_max,
            "ortho_blocks_unenforced": self.ortho_blocks_unenforced,
            "wall_time_s": self.wall_time,
        }

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary_dict(), fh, indent=2)
            fh.write("\n")

    CSV_COLUMNS = ("t", "alive", "V_B", "max_prefix_disc", "prefix_i", "Q", "L", "Qt", "Lt", "corr_size")

    def to_csv(self, path) -> None:
        """One row per monitored prefix per recorded step."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.CSV_COLUMNS) + "\n")
            for row in self.rows:
                fields = []
                for col in self.CSV_COLUMNS:
                    v = row[col]
                    fields.append(f"{v:.17g}" if isinstance(v, float) else str(v))
                fh.write(",".join(fields) + "\n")


def decompose_increments(
    trace: DiagnosticsTrace,
    instance: Instance,
    state_before: WalkState,
    step_sample,
    corruption_log: CorruptionLog,
) -> DiagnosticsTrace:
    """Fold one step's increments into the cumulative decompositions.

    For each monitored prefix ``S`` with ``B_S`` the corrupted-column
    selection of the instance matrix and ``I_S`` the coordinate selector:
    ``dQ = ||B_S dx||^2``, ``dL = <B_S x, B_S dx>``, ``dQt = ||I_S dx||^2``,
    ``dLt = <I_S x, I_S dx>``; the received energy grows by
    ``gamma^2 ||U_t||_F^2`` (at the step's effective gamma).
    """
    dx = step_sample.delta_x
    x = state_before.x
    moved = np.flatnonzero(dx != 0.0)
    for i in trace.prefixes:
        mask = corruption_log.corrupted[i]
        if not mask.any():
            continue
        act = moved[mask[moved]]
        if len(act):
            d_seg = dx[act]
            trace.Qt[i] += float(d_seg @ d_seg)
            trace.Lt[i] += float(x[act] @ d_seg)
            Bd = instance.B[:, act] @ d_seg
            trace.Q[i] += float(Bd @ Bd)
            corr_idx = np.flatnonzero(mask)
            s = instance.B[:, corr_idx] @ x[corr_idx]
            trace.L[i] += float(s @ Bd)
    trace.V_B += step_sample.gamma_used**2 * step_sample.u_frob_sq
    if trace.u_frob_history is not None:
        trace.u_frob_history.append(step_sample.u_frob_sq)
    return trace
