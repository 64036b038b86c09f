"""Reference signers: random, greedy, and an exact branch-and-bound oracle."""

from __future__ import annotations

import numpy as np

from .core import Coloring, Instance

__all__ = ["random_signing", "greedy_signing", "brute_force_min_prefix"]

BRUTE_FORCE_MAX_N = 22


def random_signing(instance: Instance, seed: int) -> Coloring:
    """Uniform independent +-1 per column, deterministic in ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=[int(seed) % 2**64, 77]))
    signs = (gen.integers(0, 2, size=instance.n, dtype=np.int8) * 2 - 1).astype(np.int8)
    return Coloring(signs=signs, forced_alive=np.zeros(instance.n, dtype=bool))


def greedy_signing(instance: Instance) -> Coloring:
    """Pick each sign to minimize the resulting prefix l2 norm; ties go to +1."""
    prefix = np.zeros(instance.d)
    signs = np.empty(instance.n, dtype=np.int8)
    for j in range(instance.n):
        v = instance.B[:, j]
        # ||p + s v||^2 = ||p||^2 + 2 s <p, v> + ||v||^2 is minimized by
        # s = -sign(<p, v>); a zero inner product ties to +1.
        s = -1 if float(prefix @ v) > 0.0 else 1
        signs[j] = s
        prefix = prefix + s * v
    return Coloring(signs=signs, forced_alive=np.zeros(instance.n, dtype=bool))


def brute_force_min_prefix(instance: Instance) -> tuple[float, np.ndarray]:
    """Exact minimum over all signings of the max prefix l2 norm.

    Branch-and-bound over the sign tree (a branch dies once its running
    prefix maximum reaches the incumbent, which cannot improve), exploring
    ``-1`` before ``+1`` so the first optimum found is the
    lexicographically smallest (entries compared numerically).  Exact for
    ``n`` up to 22.
    """
    n, d = instance.n, instance.d
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"n = {n} exceeds the enumeration limit {BRUTE_FORCE_MAX_N}")
    B = instance.B
    best_val = float("inf")
    best_signs: np.ndarray | None = None
    signs = np.zeros(n, dtype=np.int8)

    def descend(j: int, prefix: np.ndarray, running_max_sq: float) -> None:
        nonlocal best_val, best_signs
        if running_max_sq >= best_val:
            return
        if j == n:
            best_val = running_max_sq
            best_signs = signs.copy()
            return
        v = B[:, j]
        for s in (-1, 1):
            p = prefix + s * v
            signs[j] = s
            descend(j + 1, p, max(running_max_sq, float(p @ p)))
        signs[j] = 0

    descend(0, np.zeros(d), 0.0)
    assert best_signs is not None
    return float(np.sqrt(best_val)), best_signs
