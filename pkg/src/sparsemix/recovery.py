"""End-to-end recovery drivers: query design, l1 solver, and pipelines.

Three pipelines cover the parameter regimes:

* :func:`recover_two_vectors` - the small-gamma path: per-query mean
  estimation, alignment into two vectors, and two ball-constrained l1
  minimizations;
* :func:`recover_merged` - when the requested precision is of the order of
  the vector separation, one quartile fit per query and a single l1
  minimization recover one vector that approximates both;
* :func:`recover_noiseless` - with zero noise, short repeated batches reveal
  both projections exactly and two equality-constrained l1 minimizations
  finish the job.

Query vectors are standard normal: their projections separate the two hidden
vectors with the anti-concentration the alignment step needs, and the scaled
stack satisfies the restricted isometry sparse-recovery condition.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import GammaTooLarge, align_all, reference_count
from .estimators import (
    BatchPolicy,
    MeanEstimatePair,
    fit_single_gaussian,
    test_and_estimate,
)
from .oracle import MixtureOracle, base_tag, diff_tag, sum_tag

__all__ = [
    "DuplicateProjection",
    "SensingDesign",
    "BPSolution",
    "SolverOptions",
    "RecoveryConfig",
    "RecoveryReport",
    "gaussian_design",
    "basis_pursuit",
    "recover_two_vectors",
    "recover_merged",
    "recover_noiseless",
    "merged_batch_size",
    "noiseless_repeats",
    "design_size",
]


class DuplicateProjection(RuntimeError):
    """A noiseless batch saw one value although the true projections differ."""


@dataclass(frozen=True)
class SensingDesign:
    """Standard normal query vectors and their scaled sensing matrix.

    ``rows[i]`` is the i-th query vector; ``A`` equals ``rows / sqrt(m)``
    entry for entry.
    """

    rows: np.ndarray
    A: np.ndarray
    m: int
    n: int


def design_size(n: int, k: int, c_s: float, m_override: int | None = None) -> int:
    """Number of queries: ``ceil(c_s * k * ln(n))`` unless overridden."""
    if m_override is not None:
        return int(m_override)
    return int(math.ceil(c_s * k * math.log(n)))


def gaussian_design(
    m: int,
    n: int,
    seed,
    k: int | None = None,
    c_s: float | None = None,
) -> SensingDesign:
    """Draw ``m`` i.i.d. standard normal query vectors in ``n`` dimensions.

    Deterministic given ``seed``.  When both ``k`` and ``c_s`` are supplied,
    checks the sparse-recovery sizing requirement ``m >= c_s * k * ln(n)``.
    """
    if m < 1 or n < 1:
        raise ValueError(f"m and n must be >= 1, got m={m}, n={n}")
    if k is not None and c_s is not None:
        required = c_s * k * math.log(n)
        if m < required:
            raise ValueError(
                f"m={m} is below the sparse-recovery requirement "
                f"c_s*k*ln(n)={required:.2f}"
            )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rows = rng.standard_normal((m, n))
    return SensingDesign(rows=rows, A=rows / math.sqrt(m), m=m, n=n)


@dataclass(frozen=True)
class SolverOptions:
    """Convergence contract for the l1 solver."""

    feas_tol: float = 1e-6
    gap_tol: float = 1e-6
    max_iter: int = 100_000
    check_every: int = 25
    polish: bool = True


@dataclass(frozen=True)
class BPSolution:
    """Result of one l1 minimization."""

    z: np.ndarray
    residual_l2: float
    l1_norm: float
    solver_iters: int
    converged: bool


def _ball_project(w: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    d = w - center
    norm = np.linalg.norm(d)
    if norm <= radius or norm == 0.0:
        return w
    return center + d * (radius / norm)


def _soft_threshold(z: np.ndarray, t: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _dual_objective(p: np.ndarray, AT_p: np.ndarray, y: np.ndarray, radius: float) -> float:
    # Any p rescaled into the box ||A^T p||_inf <= 1 is dual feasible with
    # value -<y, p> - radius * ||p||_2, a certified lower bound on the optimum.
    scale = max(1.0, float(np.max(np.abs(AT_p))))
    p = p / scale
    return float(-(y @ p) - radius * np.linalg.norm(p))


def _polish_support(A, y, z, dual_bound, opts):
    """Debias an equality-constrained solution by least squares on its support.

    Only applied for ``radius == 0``: re-solving on the detected support
    removes the soft-threshold shrinkage.  A candidate is accepted only if it
    fits ``y`` tightly and its l1 norm stays within the certified duality gap
    of the optimum, so a wrong support can never replace the iterate.
    """
    scale = float(np.max(np.abs(z))) if z.size else 0.0
    if scale == 0.0:
        return z
    slack = 2.0 * opts.gap_tol * max(1.0, float(np.abs(z).sum()))
    for rel in (1e-3, 1e-4, 1e-5, 1e-6):
        support = np.abs(z) > rel * scale
        if not support.any() or support.sum() > A.shape[0]:
            continue
        z_s, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
        candidate = np.zeros_like(z)
        candidate[support] = z_s
        l1 = float(np.abs(candidate).sum())
        feasible = np.linalg.norm(A @ candidate - y) <= opts.feas_tol
        certified = l1 <= dual_bound + slack
        if feasible and certified:
            return candidate
    return z


def basis_pursuit(A, y, radius: float, opts: SolverOptions | None = None) -> BPSolution:
    """Minimize ``||z||_1`` subject to ``||A z - y||_2 <= radius``.

    A primal-dual splitting iteration: the dual variable is pushed out of the
    (shifted) residual ball, the primal variable is soft-thresholded.  Both
    updates are closed form, the iteration is deterministic given the inputs,
    and convergence is certified by primal feasibility together with a
    duality-gap bound evaluated at a feasible rescaling of the dual iterate.
    ``radius == 0`` yields equality-constrained basis pursuit.

    Returns
    -------
    BPSolution
        With ``converged=False`` if the iteration cap was reached before the
        certificate held; the best iterate is still returned.
    """
    if opts is None:
        opts = SolverOptions()
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    m, n = A.shape
    if y.shape != (m,):
        raise ValueError(f"y has shape {y.shape}, expected ({m},)")

    if np.linalg.norm(y) <= radius:
        return BPSolution(
            z=np.zeros(n), residual_l2=float(np.linalg.norm(y)),
            l1_norm=0.0, solver_iters=0, converged=True,
        )

    L = float(np.linalg.norm(A, 2))
    step = 0.99 / L
    z = np.zeros(n)
    z_bar = np.zeros(n)
    p = np.zeros(m)

    iters = 0
    converged = False
    for iters in range(1, opts.max_iter + 1):
        # Dual ascent on the ball constraint, then primal soft-threshold.
        w = p + step * (A @ z_bar)
        p = w - step * _ball_project(w / step, y, radius)
        z_new = _soft_threshold(z - step * (A.T @ p), step)
        z_bar = 2.0 * z_new - z
        z = z_new
        if iters % opts.check_every == 0:
            residual = float(np.linalg.norm(A @ z - y))
            l1 = float(np.abs(z).sum())
            if residual <= radius + opts.feas_tol:
                gap = l1 - _dual_objective(p, A.T @ p, y, radius)
                if gap <= opts.gap_tol * max(1.0, l1):
                    converged = True
                    break

    if opts.polish and radius == 0.0:
        z = _polish_support(A, y, z, _dual_objective(p, A.T @ p, y, radius), opts)
    return BPSolution(
        z=z,
        residual_l2=float(np.linalg.norm(A @ z - y)),
        l1_norm=float(np.abs(z).sum()),
        solver_iters=iters,
        converged=converged,
    )


@dataclass(frozen=True)
class RecoveryConfig:
    """Knobs of the recovery pipelines.

    ``gap_l2_bound`` is a lower bound on the separation of the hidden
    vectors.  The alignment sizing needs it and a real learner must supply it
    from prior knowledge; when it is ``None`` the simulated pipelines fall
    back to the true separation stored in the oracle.
    """

    c_s: float = 3.0
    m_override: int | None = None
    batch: BatchPolicy = field(default_factory=BatchPolicy)
    eta_preset: str = "per_query_n2"
    gap_l2_bound: float | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    design_seed: int = 0
    noiseless_tie_tol: float = 1e-9

    def __post_init__(self):
        if not self.c_s > 0:
            raise ValueError(f"c_s must be > 0, got {self.c_s}")
        if self.m_override is not None and self.m_override < 1:
            raise ValueError("m_override must be >= 1")
        if self.eta_preset not in ("per_query_n2", "proof_preset"):
            raise ValueError(f"unknown eta_preset {self.eta_preset!r}")

    def eta(self, n: int, m: int, m_prime: int = 1) -> float:
        if self.eta_preset == "per_query_n2":
            return float(n) ** -2
        return 1.0 / (m * max(m_prime, 1) * math.log(n))


@dataclass
class RecoveryReport:
    """Outcome of one recovery run, with exact query accounting."""

    beta_hat_1: np.ndarray
    beta_hat_2: np.ndarray
    l2_error_1: float
    l2_error_2: float
    total_queries: int
    branch: str
    estimator_branch_histogram: dict
    m: int
    m_prime: int | None
    anchor_index: int | None
    fallback_count: int
    queries_by_role: dict
    realized_snr: float | None
    config: dict
    solver_info: list

    def to_dict(self) -> dict:
        d = {
            "beta_hat_1": [float(v) for v in self.beta_hat_1],
            "beta_hat_2": [float(v) for v in self.beta_hat_2],
            "l2_error_1": self.l2_error_1,
            "l2_error_2": self.l2_error_2,
            "total_queries": self.total_queries,
            "branch": self.branch,
            "estimator_branch_histogram": dict(self.estimator_branch_histogram),
            "m": self.m,
            "m_prime": self.m_prime,
            "anchor_index": self.anchor_index,
            "fallback_count": self.fallback_count,
            "queries_by_role": dict(self.queries_by_role),
            "realized_snr": self.realized_snr,
            "config": self.config,
            "solver_info": self.solver_info,
        }
        return d


def _best_permutation_errors(b_hat_1, b_hat_2, truth) -> tuple[float, float]:
    """Per-vector l2 errors under the truth permutation with smaller total."""
    e11 = float(np.linalg.norm(b_hat_1 - truth.beta1))
    e22 = float(np.linalg.norm(b_hat_2 - truth.beta2))
    e12 = float(np.linalg.norm(b_hat_1 - truth.beta2))
    e21 = float(np.linalg.norm(b_hat_2 - truth.beta1))
    if e11 + e22 <= e12 + e21:
        return e11, e22
    return e12, e21


def _config_snapshot(config: RecoveryConfig, **extra) -> dict:
    snap = {
        "c_s": config.c_s,
        "m_override": config.m_override,
        "eta_preset": config.eta_preset,
        "gap_l2_bound": config.gap_l2_bound,
        "design_seed": config.design_seed,
        "batch": asdict(config.batch),
        "solver": asdict(config.solver),
    }
    snap.update(extra)
    return snap


def _solver_record(label: str, sol: BPSolution) -> dict:
    return {
        "label": label,
        "iters": sol.solver_iters,
        "converged": bool(sol.converged),
        "residual_l2": sol.residual_l2,
        "l1_norm": sol.l1_norm,
    }


def _debias_top_k(A, y, z, k: int, radius: float) -> np.ndarray:
    """Least-squares refit on the k largest coordinates of the l1 solution.

    The l1 minimizer shrinks every surviving coordinate by roughly the
    constraint slack; refitting on the detected support removes that bias.
    The refit is kept only if it explains the data within the same radius,
    so a misdetected support cannot make the estimate worse than the l1
    solution's own guarantee.
    """
    k = min(k, A.shape[0], A.shape[1])
    support = np.argsort(-np.abs(z))[:k]
    z_s, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
    candidate = np.zeros_like(z)
    candidate[support] = z_s
    if np.linalg.norm(A @ candidate - y) <= radius:
        return candidate
    return z


def recover_two_vectors(
    oracle: MixtureOracle,
    n: int,
    k: int,
    sigma: float,
    gamma: float,
    config: RecoveryConfig | None = None,
) -> RecoveryReport:
    """Recover both hidden vectors in the small-gamma regime.

    Designs ``ceil(c_s * k * ln n)`` standard normal queries, estimates each
    query's mean pair to accuracy ``gamma``, aligns the pairs into two
    vectors, and solves two l1 minimizations whose residual radius is the
    tightest bound certified by the alignment (never above ``10 * gamma``),
    followed by a least-squares refit on the detected supports.  The returned
    pair matches the truth only up to a global swap.

    Routing: ``sigma == 0`` is handled by :func:`recover_noiseless`; a
    ``gamma`` beyond the supported fraction of the separation bound falls
    back to :func:`recover_merged`.
    """
    if config is None:
        config = RecoveryConfig()
    if sigma == 0:
        return recover_noiseless(oracle, n, k, config)
    gap_bound = config.gap_l2_bound if config.gap_l2_bound is not None else oracle.truth.gap
    try:
        m = design_size(n, k, config.c_s, config.m_override)
        m_prime = min(reference_count(config.eta(n, m), gamma, gap_bound), m - 1)
    except GammaTooLarge:
        return recover_merged(oracle, n, k, sigma, gamma, config)

    eta = config.eta(n, m, m_prime)
    design = gaussian_design(m, n, config.design_seed, k=k, c_s=config.c_s)
    branch_counts: Counter = Counter()
    estimates: list[MeanEstimatePair] = []
    for i in range(m):
        est = test_and_estimate(
            oracle, design.rows[i], sigma, gamma, eta,
            policy=config.batch, tag=base_tag(i),
        )
        branch_counts[est.branch] += 1
        estimates.append(est)

    aligned = align_all(
        oracle, list(design.rows), estimates, sigma, gamma, eta,
        gap_l2_bound=gap_bound, policy=config.batch, m_prime=m_prime,
    )
    branch_counts.update(aligned.branch_counts)

    # 10*gamma covers the worst case where every entry sits at the trivial
    # alignment bound.  The aligned entries are certified to gamma accuracy
    # and only fallback entries to 10*gamma, which yields a tighter radius
    # the truth still satisfies; the looser ball would let the l1 minimizer
    # shrink the solution by the full slack.
    F = aligned.fallback_count
    certified = gamma * math.sqrt(((m - F) + 100.0 * F) / m)
    radius = min(10.0 * gamma, certified)
    sol_u = basis_pursuit(design.A, aligned.u / math.sqrt(m), radius, config.solver)
    sol_v = basis_pursuit(design.A, aligned.v / math.sqrt(m), radius, config.solver)
    beta_hat_1 = _debias_top_k(design.A, aligned.u / math.sqrt(m), sol_u.z, k, radius)
    beta_hat_2 = _debias_top_k(design.A, aligned.v / math.sqrt(m), sol_v.z, k, radius)
    err1, err2 = _best_permutation_errors(beta_hat_1, beta_hat_2, oracle.truth)
    return RecoveryReport(
        beta_hat_1=beta_hat_1,
        beta_hat_2=beta_hat_2,
        l2_error_1=err1,
        l2_error_2=err2,
        total_queries=oracle.ledger.total,
        branch="small_gamma",
        estimator_branch_histogram=dict(branch_counts),
        m=m,
        m_prime=m_prime,
        anchor_index=aligned.anchor_index,
        fallback_count=aligned.fallback_count,
        queries_by_role=oracle.ledger.by_role(),
        realized_snr=oracle.realized_snr(),
        config=_config_snapshot(config, gamma=gamma, sigma=sigma, eta=eta,
                                radius=radius, gap_l2_bound_used=gap_bound),
        solver_info=[_solver_record("u", sol_u), _solver_record("v", sol_v)],
    )


def merged_batch_size(
    sigma: float, gamma: float, gap_bound: float, eta: float, policy: BatchPolicy
) -> int:
    """Batch size of the merged pipeline's quartile fit, minimum 4 samples."""
    if not gamma > 0.8 * gap_bound:
        raise ValueError(
            f"merged recovery needs gamma > 0.8 * gap bound; "
            f"gamma={gamma}, gap bound={gap_bound}"
        )
    eps = (gamma - 0.8 * gap_bound) / math.sqrt(2.0)
    log_term = max(1, math.ceil(math.log(1.0 / eta)))
    return max(4, math.ceil(policy.c_single * sigma**2 * log_term / eps**2))


def recover_merged(
    oracle: MixtureOracle,
    n: int,
    k: int,
    sigma: float,
    gamma: float,
    config: RecoveryConfig | None = None,
) -> RecoveryReport:
    """Recover one vector approximating both, for coarse precision targets.

    When ``gamma`` is of the order of the vector separation, a single
    Gaussian fit per query estimates the average of the two projections well
    enough: one l1 minimization with residual radius ``gamma`` returns a
    vector reported as the estimate of both hidden vectors.
    """
    if config is None:
        config = RecoveryConfig()
    gap_bound = config.gap_l2_bound if config.gap_l2_bound is not None else oracle.truth.gap
    m = design_size(n, k, config.c_s, config.m_override)
    eta = config.eta(n, m)
    T = merged_batch_size(sigma, gamma, gap_bound, eta, config.batch)
    design = gaussian_design(m, n, config.design_seed, k=k, c_s=config.c_s)
    u = np.empty(m)
    for i in range(m):
        y = oracle.query_batch(design.rows[i], T, tag=base_tag(i))
        u[i] = fit_single_gaussian(y)
    sol = basis_pursuit(design.A, u / math.sqrt(m), gamma, config.solver)
    err1 = float(np.linalg.norm(sol.z - oracle.truth.beta1))
    err2 = float(np.linalg.norm(sol.z - oracle.truth.beta2))
    return RecoveryReport(
        beta_hat_1=sol.z,
        beta_hat_2=sol.z.copy(),
        l2_error_1=err1,
        l2_error_2=err2,
        total_queries=oracle.ledger.total,
        branch="merged",
        estimator_branch_histogram={"single": m},
        m=m,
        m_prime=None,
        anchor_index=None,
        fallback_count=0,
        queries_by_role=oracle.ledger.by_role(),
        realized_snr=oracle.realized_snr(),
        config=_config_snapshot(config, gamma=gamma, sigma=sigma, eta=eta,
                                radius=gamma, batch_size=T,
                                gap_l2_bound_used=gap_bound),
        solver_info=[_solver_record("merged", sol)],
    )


def noiseless_repeats(m: int) -> int:
    """Repeats per noiseless query: ``2 * ceil(log2(m))``.

    Each repeat halves the chance of seeing only one hidden vector, so this
    many repeats make the union over all queries fail with probability
    ``O(1/m)``.
    """
    return 2 * max(1, math.ceil(math.log2(m)))


def _dedup_pair(values: np.ndarray) -> tuple[float, float]:
    distinct = np.unique(values)
    if distinct.size == 1:
        return float(distinct[0]), float(distinct[0])
    if distinct.size == 2:
        return float(distinct[0]), float(distinct[1])
    # sigma == 0 admits at most two distinct sample values per query
    raise AssertionError("noiseless batch produced more than two distinct values")


def _cluster_consistent(p, a, sums, diffs, tol_sum, tol_diff) -> bool:
    """Every observed sum/diff value must match a predicted cluster value."""
    pred_sums = (p[0] + a[0], p[1] + a[1])
    pred_diffs = (p[0] - a[0], p[1] - a[1])
    sums_ok = all(min(abs(s - ps) for ps in pred_sums) <= tol_sum for s in sums)
    diffs_ok = all(min(abs(d - pd) for pd in pred_diffs) <= tol_diff for d in diffs)
    return sums_ok and diffs_ok


def recover_noiseless(
    oracle: MixtureOracle,
    n: int,
    k: int,
    config: RecoveryConfig | None = None,
) -> RecoveryReport:
    """Exact recovery of both vectors when the oracle noise is zero.

    Every query is repeated ``2 * ceil(log2 m)`` times; the distinct sample
    values are the two projections exactly.  Sum and difference queries
    against the first query resolve the pairing, and two equality-constrained
    l1 minimizations reconstruct the vectors.

    Raises
    ------
    DuplicateProjection
        If a base batch yields one distinct value although the two true
        projections differ beyond the tie tolerance (i.e. the batch missed a
        component; probability ``O(1/m)`` over the whole design).
    """
    if config is None:
        config = RecoveryConfig()
    if oracle.sigma != 0:
        raise ValueError("recover_noiseless requires a zero-noise oracle")
    m = design_size(n, k, config.c_s, config.m_override)
    if m < 2:
        raise ValueError("noiseless recovery needs at least 2 queries")
    R = noiseless_repeats(m)
    design = gaussian_design(m, n, config.design_seed, k=k, c_s=config.c_s)
    truth = oracle.truth

    pairs: list[tuple[float, float]] = []
    for i in range(m):
        values = oracle.query_batch(design.rows[i], R, tag=base_tag(i))
        lo, hi = _dedup_pair(values)
        if lo == hi:
            true_gap = abs(design.rows[i] @ (truth.beta1 - truth.beta2))
            scale = 1.0 + abs(lo)
            if true_gap > config.noiseless_tie_tol * scale:
                raise DuplicateProjection(
                    f"query {i} produced a single value but the true "
                    f"projections differ by {true_gap:.3e}"
                )
        pairs.append((lo, hi))

    u = np.empty(m)
    v = np.empty(m)
    u[0], v[0] = pairs[0]
    p = pairs[0]
    for i in range(1, m):
        a = pairs[i]
        sums = np.unique(oracle.query_batch(
            design.rows[0] + design.rows[i], R, tag=sum_tag(0, i)))
        diffs = np.unique(oracle.query_batch(
            design.rows[0] - design.rows[i], R, tag=diff_tag(0, i)))
        scale_s = 1.0 + max(abs(s) for s in sums)
        scale_d = 1.0 + max(abs(d) for d in diffs)
        tol_s = config.noiseless_tie_tol * scale_s
        tol_d = config.noiseless_tie_tol * scale_d
        straight = _cluster_consistent(p, a, sums, diffs, tol_s, tol_d)
        crossed = _cluster_consistent(p, (a[1], a[0]), sums, diffs, tol_s, tol_d)
        if straight and not crossed:
            u[i], v[i] = a
        elif crossed and not straight:
            u[i], v[i] = a[1], a[0]
        elif straight and crossed:
            # Both orientations explain the data: the pair is (numerically)
            # degenerate, so the choice is immaterial.
            u[i], v[i] = a
        else:
            raise DuplicateProjection(
                f"query {i}: neither pairing explains the sum/difference "
                f"samples; an auxiliary batch missed a component"
            )

    sol_u = basis_pursuit(design.A, u / math.sqrt(m), 0.0, config.solver)
    sol_v = basis_pursuit(design.A, v / math.sqrt(m), 0.0, config.solver)
    err1, err2 = _best_permutation_errors(sol_u.z, sol_v.z, truth)
    batches = m + 2 * (m - 1)
    return RecoveryReport(
        beta_hat_1=sol_u.z,
        beta_hat_2=sol_v.z,
        l2_error_1=err1,
        l2_error_2=err2,
        total_queries=oracle.ledger.total,
        branch="noiseless",
        estimator_branch_histogram={"noiseless": batches},
        m=m,
        m_prime=1,
        anchor_index=0,
        fallback_count=0,
        queries_by_role=oracle.ledger.by_role(),
        realized_snr=oracle.realized_snr(),
        config=_config_snapshot(config, repeats=R, radius=0.0),
        solver_info=[_solver_record("u", sol_u), _solver_record("v", sol_v)],
    )
