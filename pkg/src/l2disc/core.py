"""Problem instances, run configuration, walk state, file IO and rounding.

An instance is a ``d x n`` real matrix ``B`` whose columns are the vectors
to be signed; every column must lie in the (closed) unit l2 ball.  The walk
keeps a fractional coloring ``x`` in ``[-1, 1]^n`` whose coordinates freeze
once they come within ``1/n`` of an endpoint, and the final output rounds
the frozen coordinates to ``+-1``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ColumnNormExceeded, MalformedFile

__all__ = [
    "Instance",
    "RunConfig",
    "WalkState",
    "Coloring",
    "load_matrix",
    "save_matrix",
    "save_coloring",
    "generate_instance",
    "round_coloring",
    "freeze_threshold",
]

# Columns at most this far above unit norm are kept verbatim.
NORM_TOL_STRICT = 1e-12
# Columns between the strict and loose tolerance are rescaled to unit norm
# (text round-trip fuzz); anything above is rejected.
NORM_TOL_LOOSE = 1e-9

TEXT_MAGIC = "l2disc v1"
BINARY_MAGIC = b"L2D1"


def freeze_threshold(n: int) -> float:
    """Absolute value at which a coordinate freezes: ``1 - 1/n``."""
    return 1.0 - 1.0 / n


@dataclass(frozen=True)
class Instance:
    """A ``d x n`` matrix of column vectors with l2 norms at most 1.

    Attributes
    ----------
    B : (d, n) float array, column ``j`` is the vector ``v_j``.
    """

    B: np.ndarray

    def __post_init__(self):
        B = np.ascontiguousarray(np.asarray(self.B, dtype=np.float64))
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
            raise ValueError(f"instance matrix must be 2-d and non-empty, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("instance matrix contains non-finite entries")
        norms = np.linalg.norm(B, axis=0)
        worst = int(np.argmax(norms))
        if norms[worst] > 1.0 + NORM_TOL_LOOSE:
            raise ColumnNormExceeded(worst, float(norms[worst]))
        # Rescale text-serialization fuzz in (1+1e-12, 1+1e-9] back to the ball.
        over = norms > 1.0 + NORM_TOL_STRICT
        if np.any(over):
            B = B.copy()
            B[:, over] /= norms[over]
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.B[:, j]


@dataclass(frozen=True)
class RunConfig:
    """All walk tunables.

    ``beta + delta`` must stay below 1 and the three constraint-family
    constants must fit inside ``delta``:
    ``delta_prime + alpha1 + alpha2 <= delta``.

    ``max_steps=None`` resolves to ``10 * ceil(n / gamma^2)`` for the
    instance at hand.  ``monitored_prefixes=None`` resolves to
    ``{ceil(n/4), ceil(n/2), n}``.
    """

    gamma: float = 0.1
    max_steps: int | None = None
    beta: float = 0.25
    delta: float = 0.25
    delta_prime: float = 1.0 / 16.0
    alpha1: float = 1.0 / 16.0
    alpha2: float = 1.0 / 8.0
    seed: int = 0
    uvc_method: str = "projection"
    verify_every: int = 25
    monitored_prefixes: tuple[int, ...] | None = None
    record_every: int = 50
    record_unorms: bool = False
    c_heavy: float = 32.0

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError("gamma must be positive")
        for name in ("beta", "delta", "delta_prime", "alpha1", "alpha2"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
        if self.beta + self.delta >= 1.0:
            raise ValueError("beta + delta must be < 1")
        if self.delta_prime + self.alpha1 + self.alpha2 > self.delta + 1e-12:
            raise ValueError("delta_prime + alpha1 + alpha2 must not exceed delta")
        if self.uvc_method not in ("projection", "certified_feasibility"):
            raise ValueError(f"unknown uvc_method {self.uvc_method!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.verify_every < 1:
            raise ValueError("verify_every must be positive")

    def resolved_max_steps(self, n: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 10 * math.ceil(n / self.gamma**2)

    def resolved_prefixes(self, n: int) -> tuple[int, ...]:
        if self.monitored_prefixes is not None:
            out = tuple(sorted(set(int(i) for i in self.monitored_prefixes)))
            if any(i < 1 or i > n for i in out):
                raise ValueError(f"monitored prefixes must lie in [1, {n}]")
            return out
        return tuple(sorted({math.ceil(n / 4), math.ceil(n / 2), n}))

    def active_cap(self, d: int) -> int:
        """Largest admissible active set: ``ceil(d / delta_prime)``."""
        return math.ceil(d / self.delta_prime)

    @staticmethod
    def theoretical(d: int, n: int, seed: int = 0) -> "RunConfig":
        """The analysis-scale preset: vanishing step size, huge step budget.

        Uses ``gamma = (n^10 d^4 log(nd))^-1`` and the
        ``T = 60 n log n / ((1 - delta - beta) gamma^2)`` step-budget form
        (the latter is taken as authoritative over the pseudocode variant).
        Not runnable at any interesting size; selectable for completeness.
        """
        gamma = 1.0 / (float(n) ** 10 * float(d) ** 4 * math.log(n * d + 1.0))
        base = RunConfig(seed=seed)
        steps = math.ceil(60.0 * n * math.log(max(n, 2)) / ((1.0 - base.delta - base.beta) * gamma**2))
        return replace(base, gamma=gamma, max_steps=steps, seed=seed)


@dataclass
class WalkState:
    """Mutable-per-run walk state: fractional coloring plus freeze flags."""

    x: np.ndarray
    frozen: np.ndarray
    t: int
    seed: int

    @staticmethod
    def initial(n: int, seed: int) -> "WalkState":
        return WalkState(
            x=np.zeros(n, dtype=np.float64),
            frozen=np.zeros(n, dtype=bool),
            t=0,
            seed=int(seed),
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def alive_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen)

    @property
    def alive_count(self) -> int:
        return int((~self.frozen).sum())

    def copy(self) -> "WalkState":
        return WalkState(self.x.copy(), self.frozen.copy(), self.t, self.seed)


@dataclass(frozen=True)
class Coloring:
    """A full +-1 signing with per-index rounding provenance.

    ``forced_alive[i]`` is True when index ``i`` was still alive at
    termination and was assigned ``+1`` by convention rather than rounded
    from a frozen fractional value.
    """

    signs: np.ndarray
    forced_alive: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.int8)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("coloring entries must be exactly +-1")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "forced_alive", np.asarray(self.forced_alive, dtype=bool))

    @property
    def n(self) -> int:
        return self.signs.shape[0]


# ---------------------------------------------------------------------------
# File formats


def _sniff_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "binary" if head == BINARY_MAGIC else "text"


def load_matrix(path, format: str | None = None) -> Instance:
    """Read an instance from ``path``.

    ``format`` is ``"text"``, ``"binary"`` or ``None`` to sniff from the
    magic bytes.  Text files carry a ``l2disc v1 <d> <n>`` header followed
    by ``d`` rows of ``n`` decimals; binary files are ``L2D1``, little-endian
    ``u32 d``, ``u32 n`` and ``d*n`` column-major little-endian doubles.
    """
    if format is None:
        format = _sniff_format(path)
    if format == "text":
        return _load_text(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def _load_text(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 4 or tokens[0] != "l2disc" or tokens[1] != "v1":
        raise MalformedFile(f"{path}: missing 'l2disc v1' header")
    try:
        d, n = int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise MalformedFile(f"{path}: bad dimensions in header") from exc
    if d < 1 or n < 1:
        raise MalformedFile(f"{path}: non-positive dimensions {d}x{n}")
    body = tokens[4:]
    if len(body) != d * n:
        raise MalformedFile(f"{path}: expected {d * n} entries, found {len(body)}")
    try:
        values = np.array([float(tok) for tok in body], dtype=np.float64)
    except ValueError as exc:
        raise MalformedFile(f"{path}: non-numeric entry") from exc
    if not np.all(np.isfinite(values)):
        raise MalformedFile(f"{path}: non-finite entry")
    return Instance(values.reshape(d, n))


def _load_binary(path) -> Instance:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != BINARY_MAGIC:
        raise MalformedFile(f"{path}: missing L2D1 magic")
    d, n = struct.unpack("<II", raw[4:12])
    if d < 1 or n < 1:
        raise MalformedFile(f"{path}: non-positive dimensions {d}x{n}")
    expected = 12 + 8 * d * n
    if len(raw) != expected:
        raise MalformedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=12)
    if not np.all(np.isfinite(values)):
        raise MalformedFile(f"{path}: non-finite entry")
    B = values.reshape((d, n), order="F")
    return Instance(B)


def save_matrix(instance: Instance, path, format: str = "binary") -> None:
    """Write ``instance`` so that :func:`load_matrix` reads it back.

    The binary form round-trips bit-exactly; text entries are printed with
    17 significant digits and round-trip within 1e-15 per entry.
    """
    if format == "text":
        lines = [f"{TEXT_MAGIC} {instance.d} {instance.n}"]
        for row in instance.B:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    elif format == "binary":
        payload = instance.B.astype("<f8").tobytes(order="F")
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<II", instance.d, instance.n))
            fh.write(payload)
    else:
        raise ValueError(f"unknown format {format!r}")


def save_coloring(coloring: Coloring, path) -> None:
    """Write a coloring as one line of space-separated +-1 integers."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(int(s)) for s in coloring.signs) + "\n")


# ---------------------------------------------------------------------------
# Instance generators


def generate_instance(kind: str, d: int, n: int, seed: int) -> Instance:
    """Deterministically generate a test instance.

    Kinds: ``sphere`` (uniform unit vectors), ``basis`` (random signed
    standard basis vectors), ``gaussian_normalized`` (gaussian columns
    scaled to unit norm), ``zero_sum_sphere`` (unit vectors whose total sum
    vanishes, realized by shuffled antipodal pairs plus a balanced triple
    for odd ``n``).
    """
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    rng = np.random.Generator(np.random.Philox(key=_mix_key(seed, kind)))
    if kind == "sphere" or kind == "gaussian_normalized":
        B = rng.standard_normal((d, n))
        norms = np.linalg.norm(B, axis=0)
        # Degenerate all-zero columns are replaced by e_1 (probability ~0).
        bad = norms < 1e-300
        if np.any(bad):
            B[:, bad] = 0.0
            B[0, bad] = 1.0
            norms = np.linalg.norm(B, axis=0)
        B /= norms
        return Instance(B)
    if kind == "basis":
        axes = rng.integers(0, d, size=n)
        signs = rng.integers(0, 2, size=n) * 2 - 1
        B = np.zeros((d, n))
        B[axes, np.arange(n)] = signs
        return Instance(B)
    if kind == "zero_sum_sphere":
        if n < 2:
            raise ValueError("zero_sum_sphere requires n >= 2")
        return _zero_sum_sphere(d, n, rng)
    raise ValueError(f"unknown instance kind {kind!r}")


def _mix_key(seed: int, kind: str) -> list[int]:
    # Distinct Philox keys per generator kind so kinds do not share streams.
    tag = sum(ord(c) * 131**i for i, c in enumerate(kind)) % (2**63)
    return [int(seed) % 2**64, tag]


def _zero_sum_sphere(d: int, n: int, rng: np.random.Generator) -> Instance:
    cols: list[np.ndarray] = []
    pairs = n // 2 if n % 2 == 0 else (n - 3) // 2
    for _ in range(pairs):
        v = rng.standard_normal(d)
        v /= max(np.linalg.norm(v), 1e-300)
        cols.append(v)
        cols.append(-v)
    if n % 2 == 1:
        if d == 1:
            # No three unit scalars sum to zero; a zero column closes the sum.
            cols.extend([np.array([1.0]), np.array([-1.0]), np.array([0.0])])
        else:
            q = np.linalg.qr(rng.standard_normal((d, 2)))[0]
            for angle in (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0):
                cols.append(q[:, 0] * math.cos(angle) + q[:, 1] * math.sin(angle))
    B = np.stack(cols, axis=1)
    B = B[:, rng.permutation(n)]
    return Instance(B)


# ---------------------------------------------------------------------------
# Final rounding


def round_coloring(state: WalkState) -> Coloring:
    """Round a walk state to a full +-1 coloring.

    Frozen coordinates map to the sign of their fractional value; alive
    coordinates map to ``+1`` and are tagged ``forced_alive``.  For every
    prefix the discrepancy moves by at most
    ``sum_frozen (1 - |x_j|) ||v_j|| + sum_alive 2 ||v_j||``.
    """
    signs = np.where(state.x >= 0.0, 1, -1).astype(np.int8)
    forced = ~state.frozen
    signs[forced] = 1
    return Coloring(signs=signs, forced_alive=forced)
