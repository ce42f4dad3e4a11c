"""Experiment orchestration: instance generation, seeded runs, sweeps, output.

Every trial is fully determined by ``(seed, trial_index)``: the pair is fed
through :func:`trial_seeds` to derive independent sub-seeds for the truth
generator, the query design, and the oracle stream, so re-running a
configuration reproduces the report files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .estimators import (
    BatchPolicy,
    em_estimate,
    fit_single_gaussian,
    method_of_moments,
)
from .oracle import SparseVectorPair, make_oracle
from .recovery import RecoveryConfig, RecoveryReport, recover_two_vectors

__all__ = [
    "EmptyResult",
    "TruthSpec",
    "ExperimentConfig",
    "SweepResult",
    "generate_truth",
    "trial_seeds",
    "run_experiment",
    "run_sweep",
    "estimator_comparison",
    "emit_plot_data",
]


class EmptyResult(ValueError):
    """Nothing to emit."""


@dataclass(frozen=True)
class TruthSpec:
    """How to build the hidden vector pair for each trial.

    kind
        ``"random_ksparse"``: two independent k-sparse vectors, nonzeros on
        uniformly placed coordinates with signs drawn uniformly and
        magnitudes uniform in ``value_range``.
        ``"twin"``: a random k-sparse vector plus a copy displaced by exactly
        ``gap`` (l2) along a random direction inside the same support, so
        both vectors stay k-sparse and their separation is controlled.
        ``"explicit"``: use ``beta1`` / ``beta2`` as given.
    """

    kind: str = "random_ksparse"
    value_range: tuple[float, float] = (1.0, 1.0)
    gap: float | None = None
    beta1: tuple | None = None
    beta2: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("random_ksparse", "twin", "explicit"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        lo, hi = self.value_range
        if not (0 <= lo <= hi):
            raise ValueError(f"bad value_range {self.value_range}")
        if self.kind == "twin" and not (self.gap and self.gap > 0):
            raise ValueError("twin truth needs a positive gap")
        if self.kind == "explicit" and (self.beta1 is None or self.beta2 is None):
            raise ValueError("explicit truth needs beta1 and beta2")


def _random_ksparse(n: int, k: int, value_range, rng) -> np.ndarray:
    lo, hi = value_range
    beta = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    signs = rng.choice([-1.0, 1.0], size=k)
    beta[support] = signs * rng.uniform(lo, hi, size=k)
    return beta


def generate_truth(spec: TruthSpec, n: int, k: int, rng) -> SparseVectorPair:
    """Draw one hidden pair according to ``spec``."""
    if spec.kind == "explicit":
        return SparseVectorPair.from_vectors(
            np.asarray(spec.beta1, float), np.asarray(spec.beta2, float), k=k
        )
    if spec.kind == "twin":
        beta1 = _random_ksparse(n, k, spec.value_range, rng)
        support = np.flatnonzero(beta1)
        if support.size == 0:
            support = rng.choice(n, size=k, replace=False)
        direction = np.zeros(n)
        d = rng.standard_normal(support.size)
        direction[support] = d / np.linalg.norm(d)
        return SparseVectorPair.from_vectors(beta1, beta1 + spec.gap * direction, k=k)
    for _ in range(100):
        beta1 = _random_ksparse(n, k, spec.value_range, rng)
        beta2 = _random_ksparse(n, k, spec.value_range, rng)
        if not np.array_equal(beta1, beta2):
            return SparseVectorPair.from_vectors(beta1, beta2, k=k)
    raise RuntimeError("could not draw two distinct vectors")


@dataclass(frozen=True)
class ExperimentConfig:
    """One recovery experiment: problem sizes, noise, precision, seeding."""

    n: int
    k: int
    sigma: float
    gamma: float
    seed: int = 0
    trials: int = 1
    truth: TruthSpec = field(default_factory=TruthSpec)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    output: str | None = None
    output_format: str = "json"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"k must be in [1, n], got k={self.k}, n={self.n}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.output_format not in ("json", "csv"):
            raise ValueError(f"unknown output format {self.output_format!r}")


def trial_seeds(seed: int, trial: int) -> tuple[int, int, int]:
    """Derive (truth, design, oracle) sub-seeds for one trial.

    The documented derivation: three 64-bit words generated from
    ``SeedSequence([seed, trial])``.  Trials are therefore statistically
    independent yet individually re-runnable.
    """
    words = np.random.SeedSequence([int(seed), int(trial)]).generate_state(3, dtype=np.uint64)
    return int(words[0]), int(words[1]), int(words[2])


def run_trial(config: ExperimentConfig, trial: int) -> RecoveryReport:
    """Run one fully seeded trial of the configured experiment."""
    truth_seed, design_seed, oracle_seed = trial_seeds(config.seed, trial)
    rng = np.random.default_rng(np.random.SeedSequence(truth_seed))
    truth = generate_truth(config.truth, config.n, config.k, rng)
    oracle = make_oracle(truth, config.sigma, oracle_seed)
    rconf = replace(config.recovery, design_seed=design_seed)
    if rconf.gap_l2_bound is None:
        rconf = replace(rconf, gap_l2_bound=truth.gap)
    return recover_two_vectors(
        oracle, config.n, config.k, config.sigma, config.gamma, rconf
    )


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """Run all trials; per-trial failures are recorded, not fatal.

    Returns one dict per trial (a serialized report, or an ``error`` entry)
    and, when ``config.output`` is set, writes the list as deterministic JSON.
    """
    results = []
    for trial in range(config.trials):
        record: dict = {"trial": trial}
        try:
            report = run_trial(config, trial)
            record.update(report.to_dict())
        except Exception as exc:  # noqa: BLE001 - per-trial isolation is the contract
            record["error"] = f"{type(exc).__name__}: {exc}"
        results.append(record)
    if config.output is not None:
        path = Path(config.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    return results


_AXIS_FIELDS = {"n", "k", "sigma", "gamma", "seed"}
_BATCH_FIELDS = {"c_em", "c_mom", "c_single", "c_test"}


def _apply_axis(config: ExperimentConfig, name: str, value) -> ExperimentConfig:
    if name in _AXIS_FIELDS:
        return replace(config, **{name: value})
    if name == "gap":
        return replace(config, truth=replace(config.truth, kind="twin", gap=value))
    if name == "c_s":
        return replace(config, recovery=replace(config.recovery, c_s=value))
    if name == "m":
        return replace(config, recovery=replace(config.recovery, m_override=int(value)))
    if name in _BATCH_FIELDS:
        batch = replace(config.recovery.batch, **{name: value})
        return replace(config, recovery=replace(config.recovery, batch=batch))
    raise ValueError(f"unknown sweep axis {name!r}")


@dataclass
class SweepResult:
    """Grid of aggregated trial outcomes; one cell per axis combination."""

    axes: dict
    cells: list[dict]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = 1
        for values in self.axes.values():
            expected *= len(values)
        if self.cells and len(self.cells) != expected:
            raise ValueError(
                f"cell count {len(self.cells)} does not match grid size {expected}"
            )


def run_sweep(base: ExperimentConfig, axes: dict) -> SweepResult:
    """Run the experiment grid over the cartesian product of ``axes``.

    Supported axis names: n, k, sigma, gamma, seed, gap, m, c_s, c_em,
    c_mom, c_single, c_test.
    """
    if not axes:
        raise ValueError("sweep needs at least one axis")
    names = list(axes)
    cells = []
    for combo in product(*(axes[name] for name in names)):
        config = replace(base, output=None)
        for name, value in zip(names, combo):
            config = _apply_axis(config, name, value)
        results = run_experiment(config)
        ok = [r for r in results if "error" not in r]
        errors = [max(r["l2_error_1"], r["l2_error_2"]) for r in ok]
        queries = [r["total_queries"] for r in ok]
        branches: dict[str, int] = {}
        for r in ok:
            for b, c in r["estimator_branch_histogram"].items():
                branches[b] = branches.get(b, 0) + c
        cell = {name: value for name, value in zip(names, combo)}
        cell.update(
            trials=config.trials,
            failed_trials=len(results) - len(ok),
            mean_max_l2_error=float(np.mean(errors)) if errors else math.nan,
            std_max_l2_error=float(np.std(errors)) if errors else math.nan,
            mean_total_queries=float(np.mean(queries)) if queries else math.nan,
            branch_histogram=branches,
        )
        cells.append(cell)
    return SweepResult(axes=dict(axes), cells=cells, meta={"base_seed": base.seed})


def _best_perm_mean_abs(mu_hat: tuple[float, float], mu1: float, mu2: float) -> float:
    a, b = mu_hat
    direct = (abs(a - mu1) + abs(b - mu2)) / 2.0
    swapped = (abs(a - mu2) + abs(b - mu1)) / 2.0
    return min(direct, swapped)


def estimator_comparison(
    separations,
    samples_per_trial: int,
    trials: int,
    sigma: float,
    seed: int = 0,
    mom_batches: int | None = None,
) -> SweepResult:
    """Head-to-head mean-estimation error of the three estimators.

    For each separation the first mean is fixed at 0 and the second at the
    separation; every trial draws fresh mixture samples and records the
    best-permutation mean absolute error of the soft-assignment iteration,
    the moment solver, and the quartile fit.
    """
    separations = list(separations)
    if not separations:
        raise ValueError("separations must be non-empty")
    if samples_per_trial < 8:
        raise ValueError("samples_per_trial must be >= 8")
    B = mom_batches if mom_batches is not None else min(108, samples_per_trial // 2)
    cells = []
    for s_idx, sep in enumerate(separations):
        mu1, mu2 = 0.0, float(sep)
        errs: dict[str, list[float]] = {"em": [], "mom": [], "single": []}
        for trial in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s_idx, trial]))
            picks = rng.integers(0, 2, size=samples_per_trial)
            y = np.where(picks == 0, mu1, mu2) + rng.normal(0, sigma, size=samples_per_trial)
            em = em_estimate(y, sigma)
            mom = method_of_moments(y, sigma, B)
            center = fit_single_gaussian(y)
            errs["em"].append(_best_perm_mean_abs((em.mu_hat_1, em.mu_hat_2), mu1, mu2))
            errs["mom"].append(_best_perm_mean_abs((mom.mu_hat_1, mom.mu_hat_2), mu1, mu2))
            errs["single"].append(_best_perm_mean_abs((center, center), mu1, mu2))
        cell = {"separation": float(sep), "trials": trials,
                "samples": samples_per_trial, "sigma": sigma}
        for name, values in errs.items():
            cell[f"{name}_mean_abs_error"] = float(np.mean(values))
            cell[f"{name}_std_abs_error"] = float(np.std(values))
        cells.append(cell)
    return SweepResult(
        axes={"separation": [float(s) for s in separations]},
        cells=cells,
        meta={"seed": seed, "sigma": sigma, "samples": samples_per_trial},
    )


def _flatten(value):
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    return value


def emit_plot_data(result: SweepResult, path, format: str = "csv") -> Path:
    """Write a sweep as plot-ready data with a stable column order.

    CSV columns are the axis names (in axis order) followed by the remaining
    cell keys sorted alphabetically; JSON carries the same cells verbatim.
    Output bytes are deterministic for identical input.
    """
    if not result.cells:
        raise EmptyResult("sweep produced no cells")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "json":
        payload = {"axes": result.axes, "cells": result.cells, "meta": result.meta}
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return path
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")
    axis_names = [name for name in result.axes if name in result.cells[0]]
    rest = sorted(k for k in result.cells[0] if k not in axis_names)
    columns = axis_names + rest
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for cell in result.cells:
            writer.writerow([_flatten(cell[c]) for c in columns])
    return path
