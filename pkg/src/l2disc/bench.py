"""Experiment harness: suite grids, constant fitting, CSV/JSON reports.

Four suites ship: ``scaling_signed_series`` (walk vs baselines over a
(d, n, seed) grid with fitted normalization constants),
``komlos_cover`` (row-cover runs with per-set ratios), ``conc_suite``
(the Monte-Carlo tail validators) and ``uvc_cert`` (certification of
constraint systems produced by the real builders).  Reports are
deterministic in the master seed; floats are printed with 17 significant
digits so CSV output round-trips exactly.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import greedy_signing, random_signing
from .conc import mc_tail_validate
from .constraints import (
    assemble_constraint_set,
    build_ortho_constraints,
    build_row_constraints,
    build_singular_constraints,
    compute_active_set,
    constraint_budget,
)
from .core import Instance, RunConfig, WalkState, freeze_threshold, generate_instance
from .errors import L2DiscError
from .komlos import disjoint_cover, run_komlos
from .metrics import max_prefix_discrepancy
from .uvc import construct_uvc, verify_uvc
from .walk import run_signed_series

__all__ = ["ReportBundle", "run_benchmark", "emit_report", "build_random_system"]

SUITES = ("scaling_signed_series", "komlos_cover", "conc_suite", "uvc_cert")


@dataclass
class ReportBundle:
    """One suite's results: fixed column order, rows, and a summary."""

    suite: str
    master_seed: int
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "master_seed": self.master_seed,
            "columns": list(self.columns),
            "rows": [{c: r.get(c) for c in self.columns} for r in self.rows],
            "summary": self.summary,
        }

    @staticmethod
    def from_dict(payload: dict) -> "ReportBundle":
        return ReportBundle(
            suite=payload["suite"],
            master_seed=payload["master_seed"],
            columns=tuple(payload["columns"]),
            rows=[dict(r) for r in payload["rows"]],
            summary=dict(payload["summary"]),
        )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_report(bundle: ReportBundle, format: str, out_dir) -> list[Path]:
    """Write the bundle as ``<suite>.csv`` or ``<suite>.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        path = out_dir / f"{bundle.suite}.csv"
        lines = [",".join(bundle.columns)]
        for row in bundle.rows:
            lines.append(",".join(_fmt(row.get(c)) for c in bundle.columns))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return [path]
    if format == "json":
        path = out_dir / f"{bundle.suite}.json"
        path.write_text(json.dumps(bundle.to_dict(), indent=2) + "\n", encoding="utf-8")
        return [path]
    raise ValueError(f"unknown report format {format!r}")


def _cell_seed(master_seed: int, index: int) -> int:
    # Stable, collision-free derivation of per-cell seeds.
    return (int(master_seed) * 1_000_003 + index * 7_919 + 1) % 2**63


def _parse_grid(grid: str | None, defaults: dict[str, list[int]]) -> dict[str, list[int]]:
    """Parse ``"d:4,16;n:128,512;seeds:10"`` style overrides."""
    out = {k: list(v) for k, v in defaults.items()}
    if not grid:
        return out
    for part in grid.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, vals = part.partition(":")
        key = key.strip()
        if key not in out:
            raise ValueError(f"unknown grid key {key!r} (have {sorted(out)})")
        out[key] = [int(v) for v in vals.split(",") if v.strip()]
    return out


def run_benchmark(
    suite: str,
    config_overrides: dict | None = None,
    out_dir=None,
    master_seed: int = 0,
    grid: str | None = None,
) -> ReportBundle:
    """Execute one suite; optionally emit CSV+JSON into ``out_dir``.

    Per-cell failures are caught and recorded in the ``error`` column with
    the remaining cells preserved.  Deterministic in ``master_seed``.
    """
    if suite == "scaling_signed_series":
        bundle = _suite_scaling(config_overrides, master_seed, grid)
    elif suite == "komlos_cover":
        bundle = _suite_komlos(config_overrides, master_seed, grid)
    elif suite == "conc_suite":
        bundle = _suite_conc(config_overrides, master_seed, grid)
    elif suite == "uvc_cert":
        bundle = _suite_uvc_cert(config_overrides, master_seed, grid)
    else:
        raise ValueError(f"unknown suite {suite!r} (have {SUITES})")
    if out_dir is not None:
        emit_report(bundle, "csv", out_dir)
        emit_report(bundle, "json", out_dir)
    return bundle


def _make_config(config_overrides: dict | None, seed: int) -> RunConfig:
    overrides = dict(config_overrides or {})
    overrides["seed"] = seed
    return RunConfig(**overrides)


def _suite_scaling(config_overrides, master_seed, grid) -> ReportBundle:
    spec = _parse_grid(grid, {"d": [4, 16, 64], "n": [128, 512, 2048], "seeds": [10]})
    n_seeds = spec["seeds"][0]
    columns = (
        "cell", "d", "n", "seed", "walk_disc", "argmax_prefix", "random_disc",
        "greedy_disc", "k1_hat", "steps", "uvc_verify_failures", "runtime_s", "error",
    )
    bundle = ReportBundle("scaling_signed_series", master_seed, columns)
    idx = 0
    for d in spec["d"]:
        for n in spec["n"]:
            for s in range(n_seeds):
                seed = _cell_seed(master_seed, idx)
                idx += 1
                cell = f"d{d}_n{n}_s{s}"
                row: dict = {"cell": cell, "d": d, "n": n, "seed": seed, "error": None}
                t0 = time.perf_counter()
                try:
                    inst = generate_instance("sphere", d, n, seed)
                    cfg = _make_config(config_overrides, seed)
                    coloring, trace = run_signed_series(inst, cfg)
                    disc, arg = max_prefix_discrepancy(inst, coloring.signs.astype(float))
                    rnd, _ = max_prefix_discrepancy(
                        inst, random_signing(inst, seed + 1).signs.astype(float)
                    )
                    grd, _ = max_prefix_discrepancy(
                        inst, greedy_signing(inst).signs.astype(float)
                    )
                    row.update(
                        walk_disc=disc,
                        argmax_prefix=arg,
                        random_disc=rnd,
                        greedy_disc=grd,
                        k1_hat=disc / math.sqrt(d + math.log(n) ** 2),
                        steps=trace.steps,
                        uvc_verify_failures=sum(1 for v in trace.verifications if not v.passed),
                    )
                except L2DiscError as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                row["runtime_s"] = time.perf_counter() - t0
                bundle.rows.append(row)
    ok = [r for r in bundle.rows if r["error"] is None]
    by_cell: dict[tuple[int, int], list[dict]] = {}
    for r in ok:
        by_cell.setdefault((r["d"], r["n"]), []).append(r)
    k_means = {}
    walk_vs_random = {}
    for (d, n), rows in sorted(by_cell.items()):
        k_means[f"d{d}_n{n}"] = float(np.mean([r["k1_hat"] for r in rows]))
        walk_vs_random[f"d{d}_n{n}"] = {
            "walk_mean": float(np.mean([r["walk_disc"] for r in rows])),
            "random_mean": float(np.mean([r["random_disc"] for r in rows])),
        }
    bundle.summary = {
        "cells": len(by_cell),
        "runs": len(bundle.rows),
        "errors": len(bundle.rows) - len(ok),
        "k1_hat_cell_means": k_means,
        "k1_hat_spread": (max(k_means.values()) / min(k_means.values())) if k_means else None,
        "walk_vs_random": walk_vs_random,
    }
    return bundle


def _suite_komlos(config_overrides, master_seed, grid) -> ReportBundle:
    spec = _parse_grid(grid, {"n": [256, 1024], "seeds": [10]})
    columns = (
        "cell", "m", "n", "seed", "width", "n_sets", "max_sum", "max_ratio",
        "median_ratio", "k2_hat", "steps", "runtime_s", "error",
    )
    bundle = ReportBundle("komlos_cover", master_seed, columns)
    idx = 0
    for n in spec["n"]:
        for s in range(spec["seeds"][0]):
            seed = _cell_seed(master_seed, idx)
            idx += 1
            cell = f"n{n}_s{s}"
            row: dict = {"cell": cell, "m": n, "n": n, "seed": seed, "error": None}
            t0 = time.perf_counter()
            try:
                M = generate_instance("sphere", n, n, seed)
                width = math.ceil(math.log(n))
                cover = disjoint_cover(n, width)
                cfg = _make_config(config_overrides, seed)
                _, per_set, trace = run_komlos(M, cover, cfg)
                ratios = np.array([p["ratio"] for p in per_set])
                sums = np.array([p["sum"] for p in per_set])
                row.update(
                    width=width,
                    n_sets=len(per_set),
                    max_sum=float(sums.max()),
                    max_ratio=float(ratios.max()),
                    median_ratio=float(np.median(ratios)),
                    k2_hat=float(ratios.max()),
                    steps=trace.steps,
                )
            except L2DiscError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            row["runtime_s"] = time.perf_counter() - t0
            bundle.rows.append(row)
    ok = [r for r in bundle.rows if r["error"] is None]
    by_n: dict[int, list[dict]] = {}
    for r in ok:
        by_n.setdefault(r["n"], []).append(r)
    k2_means = {f"n{n}": float(np.mean([r["k2_hat"] for r in rows])) for n, rows in sorted(by_n.items())}
    bundle.summary = {
        "runs": len(bundle.rows),
        "errors": len(bundle.rows) - len(ok),
        "k2_hat_cell_means": k2_means,
        "k2_hat_spread": (max(k2_means.values()) / min(k2_means.values())) if k2_means else None,
        "max_over_median_ratio": max(
            (r["max_ratio"] / r["median_ratio"] for r in ok if r["median_ratio"] > 0),
            default=None,
        ),
    }
    return bundle


def _suite_conc(config_overrides, master_seed, grid) -> ReportBundle:
    spec = _parse_grid(grid, {"trials": [100_000]})
    trials = spec["trials"][0]
    columns = ("scenario", "a", "b", "empirical", "bound", "slack", "passed")
    bundle = ReportBundle("conc_suite", master_seed, columns)
    all_passed = True
    fitted = {}
    for which in ("freedman", "mfreedman", "hw"):
        report = mc_tail_validate(which, trials=trials, seed=master_seed)
        fitted[which] = report.fitted
        for p in report.grid:
            bundle.rows.append(
                {
                    "scenario": which,
                    "a": p.a,
                    "b": p.b,
                    "empirical": p.empirical,
                    "bound": p.bound,
                    "slack": p.slack,
                    "passed": p.passed,
                }
            )
        all_passed = all_passed and report.all_passed
    bundle.summary = {"trials": trials, "all_passed": all_passed, "fitted": fitted}
    return bundle


def build_random_system(d: int, n: int, seed: int, config: RunConfig):
    """A constraint system from the real builders over a random walk snapshot.

    Draws a sphere instance, a fractional coloring with a random frozen
    pattern, and assembles row, singular and orthogonality constraints the
    same way a walk step would.
    """
    inst = generate_instance("sphere", d, n, seed)
    gen = np.random.Generator(np.random.Philox(key=[seed % 2**64, 3]))
    x = gen.uniform(-0.9, 0.9, size=n)
    frozen = gen.uniform(size=n) < 0.25
    x[frozen] = np.sign(x[frozen] + 1e-9) * (1.0 - 0.5 / n)
    if frozen.all():
        frozen[0] = False
        x[0] = 0.3
    # Keep alive coordinates strictly inside the freeze band.
    alive = ~frozen
    x[alive] = np.clip(x[alive], -0.9, 0.9) * freeze_threshold(n)
    state = WalkState(x=x, frozen=frozen, t=1, seed=seed)
    active = compute_active_set(state, inst, config)
    rows = build_row_constraints(inst, active, config)
    orthos = build_ortho_constraints(inst, active, state, config)
    budget = constraint_budget(len(active), config)
    keep = min(len(orthos), budget - len(rows))
    orthos = orthos[:keep]
    sing = build_singular_constraints(
        inst, active, config, max_count=max(0, budget - len(rows) - len(orthos))
    )
    cs = assemble_constraint_set(rows, sing, orthos, active, config)
    return inst, cs


def _suite_uvc_cert(config_overrides, master_seed, grid) -> ReportBundle:
    spec = _parse_grid(grid, {"systems": [200]})
    n_systems = spec["systems"][0]
    cells = [(d, n) for d in (4, 16, 64) for n in (64, 256, 1024)]
    columns = (
        "idx", "d", "n", "k", "n_constraints", "kernel_residual", "spectral_margin",
        "max_row_norm", "mass", "mass_floor", "passed", "runtime_s", "error",
    )
    bundle = ReportBundle("uvc_cert", master_seed, columns)
    n_passed = 0
    for idx in range(n_systems):
        d, n = cells[idx % len(cells)]
        seed = _cell_seed(master_seed, idx)
        row: dict = {"idx": idx, "d": d, "n": n, "error": None}
        t0 = time.perf_counter()
        try:
            cfg = _make_config(config_overrides, seed)
            _, cs = build_random_system(d, n, seed, cfg)
            uvc = construct_uvc(cs, cfg)
            report = verify_uvc(uvc, cs, cfg)
            row.update(
                k=len(cs.active),
                n_constraints=cs.count,
                kernel_residual=report.kernel_residual,
                spectral_margin=report.spectral_margin,
                max_row_norm=report.max_row_norm,
                mass=report.mass,
                mass_floor=report.mass_floor,
                passed=report.passed,
            )
            n_passed += int(report.passed)
        except L2DiscError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            row["passed"] = False
        row["runtime_s"] = time.perf_counter() - t0
        bundle.rows.append(row)
    bundle.summary = {
        "systems": n_systems,
        "passed": n_passed,
        "pass_rate": n_passed / n_systems if n_systems else None,
        "projection_failure_count": n_systems - n_passed,
    }
    return bundle
