"""Construction and certification of the step-covariance vector coloring.

For an active set ``A`` and constraints ``Y`` the goal is an ``n x n``
matrix ``U`` (nonzero only on ``A``) with rows ``u_i`` satisfying

  (i)   ``v^T U = 0`` for every constraint ``v`` in ``Y``,
  (ii)  ``||sum_i w_i u_i||^2 <= (1/beta) sum_i w_i^2 ||u_i||^2`` for all w,
  (iii) ``||u_i|| <= 1`` and ``sum_i ||u_i||^2 >= (1 - delta - beta)|A|``.

The default construction projects onto the constraint null space and
drops coordinates whose projector diagonal falls below ``beta``
(re-projecting after each drop); the resulting symmetric idempotent U
satisfies (ii) because ``U U^T = U <= I <= (1/beta) Diag(U)`` on the
support.  A Gram-matrix feasibility solver backs the
``certified_feasibility`` method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet
from .core import RunConfig
from .errors import NumericalFailure, UvcInfeasible

__all__ = ["VectorColoring", "CertReport", "construct_uvc", "verify_uvc"]

KERNEL_TOL = 1e-8
SPECTRAL_TOL = 1e-6
ROW_NORM_TOL = 1e-9
MASS_TOL = 1e-6

_MAX_DROP_ROUNDS = 64


@dataclass(frozen=True)
class CertReport:
    """Certificate data for one vector coloring.

    ``spectral_margin`` is the smallest eigenvalue of
    ``(1/beta) Diag(UU^T) - UU^T`` on the support; ``margin_kind`` records
    whether it was computed exactly (``"eig"``) or as a cheap valid lower
    bound (``"bound"``, from the min-diagonal certificate).
    """

    kernel_residual: float
    spectral_margin: float
    max_row_norm: float
    mass: float
    mass_floor: float
    passed: bool
    margin_kind: str = "eig"
    op_norm_sq: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "kernel_residual": self.kernel_residual,
            "spectral_margin": self.spectral_margin,
            "max_row_norm": self.max_row_norm,
            "mass": self.mass,
            "mass_floor": self.mass_floor,
            "passed": self.passed,
            "margin_kind": self.margin_kind,
            "op_norm_sq": self.op_norm_sq,
        }


def _passed(kernel: float, margin: float, row: float, mass: float, floor: float) -> bool:
    return (
        kernel <= KERNEL_TOL
        and margin >= -SPECTRAL_TOL
        and row <= 1.0 + ROW_NORM_TOL
        and mass >= floor - MASS_TOL
    )


@dataclass(frozen=True)
class VectorColoring:
    """A vector coloring stored as its nonzero block.

    ``U_active`` is the ``k x k`` block over ``active``; rows and columns
    outside the active set are zero in the conceptual ``n x n`` matrix,
    which :meth:`dense` materializes for small problems.
    """

    U_active: np.ndarray
    active: np.ndarray
    n: int
    certificate: CertReport
    method: str = "projection"
    n_drops: int = 0

    @property
    def k(self) -> int:
        return len(self.active)

    def dense(self) -> np.ndarray:
        U = np.zeros((self.n, self.n))
        if self.k:
            U[np.ix_(self.active, self.active)] = self.U_active
        return U

    def row_norms_sq(self) -> np.ndarray:
        """Squared row norms over the active block."""
        return np.einsum("ij,ij->i", self.U_active, self.U_active)

    @property
    def support(self) -> np.ndarray:
        """Indices (into ``[n]``) of rows with positive norm."""
        return self.active[self.row_norms_sq() > 0.0]

    def frob_sq(self) -> float:
        return float(np.sum(self.U_active**2))

    def apply(self, r: np.ndarray) -> np.ndarray:
        """``U r`` for a full-length vector ``r``, returned full-length."""
        out = np.zeros(self.n)
        if self.k:
            out[self.active] = self.U_active @ r[self.active]
        return out


def _orthonormal_basis(columns: np.ndarray, tol: float = 1e-11) -> np.ndarray:
    """Orthonormal basis of the column space, rank-revealed by SVD."""
    if columns.shape[1] == 0:
        return np.zeros((columns.shape[0], 0))
    try:
        q, s, _ = np.linalg.svd(columns, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("orthonormalization breakdown") from exc
    if not np.all(np.isfinite(s)):
        raise NumericalFailure("orthonormalization produced non-finite singular values")
    keep = s > tol * max(s[0], 1.0)
    return q[:, keep]


def construct_uvc(constraint_set: ConstraintSet, config: RunConfig) -> VectorColoring:
    """Build a certified vector coloring for one step.

    Projection method: orthonormalize the constraints restricted to the
    active coordinates, set ``U`` to the orthogonal projector onto their
    null space, and while any support diagonal stays below ``beta`` add
    the offending coordinate vectors as ``support_drop`` constraints and
    re-project.  Raises :class:`UvcInfeasible` when the drops would push
    the mass below ``(1 - delta - beta)|A|`` (the certified-feasibility
    solver may still succeed there) and :class:`NumericalFailure` on
    linear-algebra breakdown.
    """
    active = np.asarray(constraint_set.active, dtype=np.intp)
    k = len(active)
    n = max(constraint_set.vectors.shape[1], int(active.max()) + 1 if k else 0)
    beta, delta = config.beta, config.delta
    floor = (1.0 - delta - beta) * k
    if k == 0:
        cert = CertReport(0.0, 0.0, 0.0, 0.0, 0.0, True, margin_kind="bound", op_norm_sq=0.0)
        return VectorColoring(np.zeros((0, 0)), active, n, cert, method="projection")

    V = constraint_set.restricted()  # (m, k)
    try:
        P, dropped = _project_with_drops(V, k, beta, floor)
    except UvcInfeasible:
        if config.uvc_method == "certified_feasibility":
            return _certified_feasibility(constraint_set, config, n)
        raise

    if dropped:
        # The projector is exactly zero on dropped coordinates; flush the
        # orthonormalization noise so support detection stays clean.
        P[dropped, :] = 0.0
        P[:, dropped] = 0.0
    mass = float(np.trace(P))
    kernel = _kernel_residual(V, P)
    row_sq = np.einsum("ij,ij->i", P, P)
    max_row = float(np.sqrt(row_sq.max())) if k else 0.0
    kept = np.ones(k, dtype=bool)
    kept[dropped] = False
    if np.any(kept):
        min_diag = float(P.diagonal()[kept].min())
        margin = min_diag / beta - 1.0  # valid: UU^T = P <= ||P|| I with ||P|| = 1
        op_sq = 1.0
    else:
        margin, op_sq = 0.0, 0.0
    cert = CertReport(
        kernel_residual=kernel,
        spectral_margin=margin,
        max_row_norm=max_row,
        mass=mass,
        mass_floor=floor,
        passed=_passed(kernel, margin, max_row, mass, floor),
        margin_kind="bound",
        op_norm_sq=op_sq,
    )
    uvc = VectorColoring(P, active, n, cert, method="projection", n_drops=len(dropped))
    if not cert.passed:
        if config.uvc_method == "certified_feasibility":
            return _certified_feasibility(constraint_set, config, n)
        raise UvcInfeasible(
            f"projection certificate failed: kernel={kernel:.3g}, margin={margin:.3g}, "
            f"max_row={max_row:.6g}, mass={mass:.6g} < floor {floor:.6g}"
        )
    return uvc


def _project_with_drops(V: np.ndarray, k: int, beta: float, floor: float):
    """Null-space projector with the drop-and-reproject loop."""
    eye = np.eye(k)
    drop_cols: list[int] = []
    for _ in range(_MAX_DROP_ROUNDS):
        cols = V.T
        if drop_cols:
            cols = np.concatenate([cols, eye[:, drop_cols]], axis=1)
        Q = _orthonormal_basis(cols)
        P = eye - Q @ Q.T
        P = (P + P.T) / 2.0
        if float(np.trace(P)) < floor - MASS_TOL:
            raise UvcInfeasible(
                f"drop budget exhausted: mass {np.trace(P):.6g} below floor {floor:.6g}"
            )
        diag = P.diagonal()
        supp = np.ones(k, dtype=bool)
        supp[drop_cols] = False
        bad = np.flatnonzero(supp & (diag < beta))
        if len(bad) == 0:
            return P, drop_cols
        drop_cols.extend(int(b) for b in bad)
    raise UvcInfeasible("drop-and-reproject failed to stabilize")


def _kernel_residual(V: np.ndarray, U: np.ndarray) -> float:
    if V.shape[0] == 0:
        return 0.0
    norms = np.linalg.norm(V, axis=1)
    res = np.linalg.norm(V @ U, axis=1)
    return float((res / norms).max())


def verify_uvc(
    uvc: VectorColoring,
    constraint_set: ConstraintSet,
    config: RunConfig,
    tol: float = KERNEL_TOL,
) -> CertReport:
    """Direct linear-algebra certificate; failures are reported, not raised.

    The spectral property is checked as the smallest eigenvalue of
    ``(1/beta) Diag(UU^T) - UU^T`` on the support subspace, which is
    equivalent to property (ii) for all ``w``.
    """
    beta, delta = config.beta, config.delta
    k = uvc.k
    floor = (1.0 - delta - beta) * k
    if k == 0:
        return CertReport(0.0, 0.0, 0.0, 0.0, 0.0, True, op_norm_sq=0.0)
    U = uvc.U_active
    V = constraint_set.restricted()
    kernel = _kernel_residual(V, U)
    G = U @ U.T
    g = G.diagonal().copy()
    max_row = float(np.sqrt(g.max()))
    mass = float(g.sum())
    supp = np.flatnonzero(g > 1e-20)
    if len(supp):
        Gs = G[np.ix_(supp, supp)]
        M = np.diag(g[supp]) / beta - Gs
        M = (M + M.T) / 2.0
        try:
            margin = float(np.linalg.eigvalsh(M)[0])
            op_sq = float(np.linalg.eigvalsh(Gs)[-1])
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("eigendecomposition failed in verification") from exc
    else:
        margin, op_sq = 0.0, 0.0
    passed = (
        kernel <= tol
        and margin >= -SPECTRAL_TOL
        and max_row <= 1.0 + ROW_NORM_TOL
        and mass >= floor - MASS_TOL
    )
    return CertReport(
        kernel_residual=kernel,
        spectral_margin=margin,
        max_row_norm=max_row,
        mass=mass,
        mass_floor=floor,
        passed=passed,
        margin_kind="eig",
        op_norm_sq=op_sq,
    )


# ---------------------------------------------------------------------------
# Incremental projector for the walk's hot loop


class IncrementalProjector:
    """Null-space projector split into a cached static part and a per-step part.

    Row and singular constraints change only when the active set changes;
    orthogonality constraints change every step.  Caching the static
    orthonormal basis ``Q_s`` and its projector ``P_s`` makes the per-step
    work one small QR plus two rank-limited updates instead of a full
    re-orthonormalization.  Falls back to ``None`` (caller reverts to
    :func:`construct_uvc`) whenever a support drop or certificate issue
    appears, so the fast path never weakens certification.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self._key: bytes | None = None
        self._k = 0
        self._Q_s: np.ndarray | None = None
        self._P_s: np.ndarray | None = None
        self._static_resid = 0.0

    def set_active(self, active: np.ndarray, static_restricted: np.ndarray) -> None:
        """Install the static constraints (rows restricted to ``active``)."""
        self._key = active.tobytes()
        k = len(active)
        self._k = k
        Q = _orthonormal_basis(static_restricted.T)
        P = np.eye(k) - Q @ Q.T
        P = (P + P.T) / 2.0
        self._Q_s = Q
        self._P_s = P
        if static_restricted.shape[0]:
            norms = np.linalg.norm(static_restricted, axis=1)
            self._static_resid = float(
                (np.linalg.norm(static_restricted @ P, axis=1) / norms).max()
            )
        else:
            self._static_resid = 0.0

    def matches(self, active: np.ndarray) -> bool:
        return self._key == active.tobytes()

    def step(
        self,
        constraint_set: ConstraintSet,
        dynamic_restricted: np.ndarray,
        n: int,
    ) -> VectorColoring | None:
        """Build this step's certified coloring, or None to take the slow path."""
        if self._P_s is None:
            return None
        k = self._k
        beta, delta = self.config.beta, self.config.delta
        floor = (1.0 - delta - beta) * k
        Q_s, P_s = self._Q_s, self._P_s
        if dynamic_restricted.shape[0]:
            # Orthogonalize the step constraints against the static basis
            # (twice, for numerical orthogonality), then among themselves.
            W = dynamic_restricted.T
            if Q_s.shape[1]:
                W = W - Q_s @ (Q_s.T @ W)
                W = W - Q_s @ (Q_s.T @ W)
            Q_d = _orthonormal_basis(W)
            P = P_s - Q_d @ Q_d.T
            P = (P + P.T) / 2.0
            cross = float(np.linalg.norm(Q_s.T @ Q_d)) if Q_s.shape[1] else 0.0
            norms = np.linalg.norm(dynamic_restricted, axis=1)
            dyn_resid = float(
                (np.linalg.norm(dynamic_restricted @ P, axis=1) / norms).max()
            )
        else:
            P = P_s.copy()
            cross = 0.0
            dyn_resid = 0.0
        kernel = max(self._static_resid + cross, dyn_resid)

        # Support drops as rank-1 projector downdates: removing coordinate i
        # replaces P by P - (Pe_i)(Pe_i)^T / P_ii, the projector onto
        # range(P) orthogonal to e_i.  Each drop lowers the mass by one.
        dropped: list[int] = []
        kept = np.ones(k, dtype=bool)
        while True:
            diag = P.diagonal().copy()
            diag[~kept] = 1.0
            i = int(np.argmin(diag))
            if diag[i] >= beta:
                break
            p = P[:, i].copy()
            if p[i] > 1e-12:
                if np.trace(P) - 1.0 < floor - MASS_TOL:
                    return None  # drop would break the mass floor: generic path
                P -= np.outer(p, p) / p[i]
            # else: the coordinate is already annihilated; just flush noise.
            P[i, :] = 0.0
            P[:, i] = 0.0
            P = (P + P.T) / 2.0
            kept[i] = False
            dropped.append(i)
        if dropped:
            # Drops move the projector; re-measure the kernel residual exactly.
            V = constraint_set.restricted()
            kernel = _kernel_residual(V, P)

        mass = float(np.trace(P))
        if mass < floor - MASS_TOL:
            return None
        row_sq = np.einsum("ij,ij->i", P, P)
        max_row = float(np.sqrt(row_sq.max()))
        diag = P.diagonal()
        margin = (float(diag[kept].min()) / beta - 1.0) if kept.any() else 0.0
        cert = CertReport(
            kernel_residual=kernel,
            spectral_margin=margin,
            max_row_norm=max_row,
            mass=mass,
            mass_floor=floor,
            passed=_passed(kernel, margin, max_row, mass, floor),
            margin_kind="bound",
            op_norm_sq=1.0,
        )
        if not cert.passed:
            return None
        return VectorColoring(
            U_active=P,
            active=constraint_set.active,
            n=n,
            certificate=cert,
            method="projection",
            n_drops=len(dropped),
        )


# ---------------------------------------------------------------------------
# Certified-feasibility fallback: Gram-matrix alternating projections


def _psd_clip(X: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh((X + X.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (Q * w) @ Q.T


def _certified_feasibility(
    constraint_set: ConstraintSet,
    config: RunConfig,
    n: int,
    max_iter: int = 400,
) -> VectorColoring:
    """Solve the Gram feasibility problem and take a symmetric square root.

    Seeks PSD ``X`` with ``X v = 0`` for all constraints,
    ``(1/beta) Diag(X) - X >= 0``, ``X_ii <= 1`` and
    ``trace(X) >= (1 - delta - beta)|A|`` by cyclic projections (the
    spectral condition is handled through the invertible linear map
    ``X -> (1/beta) Diag(X) - X``).  The output is certified exactly; an
    unconverged iterate raises :class:`UvcInfeasible`.
    """
    active = np.asarray(constraint_set.active, dtype=np.intp)
    k = len(active)
    beta, delta = config.beta, config.delta
    floor = (1.0 - delta - beta) * k
    V = constraint_set.restricted()
    Q = _orthonormal_basis(V.T)
    Pnull = np.eye(k) - Q @ Q.T

    X = Pnull.copy()
    for _ in range(max_iter):
        # Constraint kernel (both sides, preserves symmetry).
        X = Pnull @ X @ Pnull
        X = (X + X.T) / 2.0
        # PSD cone.
        X = _psd_clip(X)
        # Diagonal cap via congruence (stays PSD, keeps the kernel).
        d = X.diagonal()
        scale = np.where(d > 1.0, 1.0 / np.sqrt(d, where=d > 0.0, out=np.ones_like(d)), 1.0)
        X = X * np.outer(scale, scale)
        # Spectral condition through the linear map and its inverse.
        M = np.diag(X.diagonal()) / beta - X
        M = _psd_clip(M)
        X_off = -M
        diag = M.diagonal() * beta / (1.0 - beta)
        np.fill_diagonal(X_off, diag)
        X = (X_off + X_off.T) / 2.0
        # Trace floor: push mass along the null projector.
        tr_p = float(np.trace(Pnull))
        tr_x = float(np.trace(X))
        if tr_x < floor and tr_p > 1e-12:
            X = X + ((floor - tr_x) / tr_p) * Pnull
        if _gram_feasible(X, V, beta, floor):
            break
    else:
        raise UvcInfeasible("certified-feasibility iteration did not converge")

    w, R = np.linalg.eigh((X + X.T) / 2.0)
    U = (R * np.sqrt(np.clip(w, 0.0, None))) @ R.T
    # Exact kernel: the square root only attains the iterate's residual
    # tolerance at sqrt scale, so pin U to the constraint null space.
    U = Pnull @ U @ Pnull
    U = (U + U.T) / 2.0
    uvc = VectorColoring(
        U_active=U,
        active=active,
        n=n,
        certificate=CertReport(0, 0, 0, 0, 0, False),
        method="certified_feasibility",
    )
    cert = verify_uvc(uvc, constraint_set, config)
    uvc = VectorColoring(
        U_active=U,
        active=active,
        n=n,
        certificate=cert,
        method="certified_feasibility",
    )
    if not cert.passed:
        raise UvcInfeasible(
            f"certified-feasibility output failed verification: kernel="
            f"{cert.kernel_residual:.3g}, margin={cert.spectral_margin:.3g}, "
            f"mass={cert.mass:.6g} < floor {cert.mass_floor:.6g}"
        )
    return uvc


def _gram_feasible(X: np.ndarray, V: np.ndarray, beta: float, floor: float) -> bool:
    if V.shape[0]:
        norms = np.linalg.norm(V, axis=1)
        if (np.linalg.norm(V @ X, axis=1) / norms).max() > 0.3 * KERNEL_TOL:
            return False
    d = X.diagonal()
    if d.max() > 1.0 + 0.3 * ROW_NORM_TOL:
        return False
    if float(np.trace(X)) < floor - 0.3 * MASS_TOL:
        return False
    w_x = np.linalg.eigvalsh((X + X.T) / 2.0)
    if w_x[0] < -1e-10:
        return False
    M = np.diag(d) / beta - X
    w_m = np.linalg.eigvalsh((M + M.T) / 2.0)
    return bool(w_m[0] >= -0.3 * SPECTRAL_TOL)
