"""Resolving the per-query permutation ambiguity of estimated mean pairs.

Every query yields an unordered pair of mean estimates, so with ``m`` queries
there are ``2^m`` ways to attribute estimates to the two hidden vectors.  Sum
and difference queries (``x_i + x_j`` and ``x_i - x_j``) act as a consistency
check: for two queries whose own mean separations are at least ``9 * gamma``,
at least one of the two checks identifies whether their pair orderings agree.
Aligning every query against one well-separated anchor then produces two
vectors ``u`` and ``v`` that track one hidden vector each, entrywise to within
``10 * gamma``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .estimators import BatchPolicy, MeanEstimatePair, test_and_estimate
from .oracle import diff_tag, sum_tag

__all__ = [
    "NoConsistentMatch",
    "NoAnchorFound",
    "GammaTooLarge",
    "SMALL_GAMMA_RATIO",
    "PairwiseVerdict",
    "AlignedMeans",
    "align_pair",
    "align_all",
    "reference_count",
]

# Largest gamma / separation ratio the alignment path supports; above it the
# reference-count formula below degenerates and the caller should fall back
# to merged single-vector recovery.
SMALL_GAMMA_RATIO = 0.096


class NoConsistentMatch(RuntimeError):
    """Neither the sum nor the difference check produced a unique pairing.

    Signals a violated separation precondition or a failed mean estimate.
    """


class NoAnchorFound(RuntimeError):
    """No reference query showed an estimated separation of at least 11*gamma."""


class GammaTooLarge(ValueError):
    """gamma exceeds the supported fraction of the vector separation."""


@dataclass(frozen=True)
class PairwiseVerdict:
    """Outcome of aligning the estimate pairs of queries ``i`` and ``j``.

    ``evidence`` records the one decisive check as a tuple
    ``(kind, slot, p, q)``: the check kind (``"sum"`` or ``"diff"``), which of
    the two estimated means of that auxiliary query matched, and the matched
    indices into the pairs of ``i`` and ``j``.
    """

    i: int
    j: int
    same_permutation: bool
    evidence: tuple


@dataclass
class AlignedMeans:
    """Consistently labelled mean estimates for all queries.

    For every ``i``, ``{u[i], v[i]}`` equals the estimate pair of query ``i``
    as a set, and (when estimates are gamma-accurate) ``u`` tracks one hidden
    vector and ``v`` the other, entrywise to within ``10 * gamma``, for a
    single global permutation.
    """

    u: np.ndarray
    v: np.ndarray
    anchor_index: int
    fallback_count: int = 0
    branch_counts: dict = field(default_factory=dict)


def _unique_match(target: float, pair_i, pair_j, sign: float, tol: float):
    """Find (p, q) with ``|target - pair_i[p] + sign*pair_j[q]| <= tol``.

    Returns the 1-based (p, q) if exactly one of the four choices matches,
    else None.
    """
    hits = [
        (p + 1, q + 1)
        for p in (0, 1)
        for q in (0, 1)
        if abs(target - pair_i[p] + sign * pair_j[q]) <= tol
    ]
    return hits[0] if len(hits) == 1 else None


def _check_decision(targets, pair_i, pair_j, sign: float, tol: float):
    # The second estimated mean of the auxiliary query is consulted only when
    # the first does not single out a pairing; this strictly increases
    # decisiveness without weakening the guarantee of either check.
    for slot, target in enumerate(targets, start=1):
        match = _unique_match(target, pair_i, pair_j, sign, tol)
        if match is not None:
            return slot, match
    return None


def align_pair(
    est_i: MeanEstimatePair,
    est_j: MeanEstimatePair,
    est_sum: MeanEstimatePair,
    est_diff: MeanEstimatePair,
    gamma: float,
    i: int = 0,
    j: int = 1,
) -> PairwiseVerdict:
    """Decide whether the estimate pairs of two queries are ordered alike.

    Looks for the unique way to pick one mean from each query's pair whose
    sum matches an estimated mean of the sum query within ``3 * gamma``; if
    that is ambiguous, repeats the search with the difference query.  A
    matched pair with equal indices means both queries list the same hidden
    vector first.

    Requires (for guaranteed correctness) that both queries' true mean
    separations are at least ``9 * gamma`` and all estimates are
    gamma-accurate; under those conditions at least one check is decisive and
    both agree whenever decisive.

    Raises
    ------
    NoConsistentMatch
        If neither check is decisive, or both are decisive but disagree.
    """
    tol = 3.0 * gamma
    pair_i = (est_i.mu_hat_1, est_i.mu_hat_2)
    pair_j = (est_j.mu_hat_1, est_j.mu_hat_2)
    sum_targets = (est_sum.mu_hat_1, est_sum.mu_hat_2)
    diff_targets = (est_diff.mu_hat_1, est_diff.mu_hat_2)

    sum_decision = _check_decision(sum_targets, pair_i, pair_j, -1.0, tol)
    diff_decision = _check_decision(diff_targets, pair_i, pair_j, +1.0, tol)

    if sum_decision is None and diff_decision is None:
        raise NoConsistentMatch(
            f"queries {i} and {j}: no unique pairing in either check"
        )
    verdicts = {}
    if sum_decision is not None:
        slot, (p, q) = sum_decision
        verdicts["sum"] = (p == q, ("sum", slot, p, q))
    if diff_decision is not None:
        slot, (p, q) = diff_decision
        verdicts["diff"] = (p == q, ("diff", slot, p, q))
    if len(verdicts) == 2 and verdicts["sum"][0] != verdicts["diff"][0]:
        # Cannot happen under the separation hypothesis; flag rather than
        # silently prefer one check.
        raise NoConsistentMatch(
            f"queries {i} and {j}: sum and difference checks disagree"
        )
    same, evidence = verdicts.get("sum") or verdicts.get("diff")
    return PairwiseVerdict(i=i, j=j, same_permutation=same, evidence=evidence)


def reference_count(eta: float, gamma: float, gap_l2: float) -> int:
    """Number of candidate anchor queries needed to find a separated one.

    For standard normal queries the separation of a query's two means is
    ``N(0, gap_l2^2)``, so each candidate fails to be ``13*gamma``-separated
    with probability at most ``13*sqrt(2)*gamma / (sqrt(pi)*gap_l2)``;
    this many independent candidates push the failure probability below
    ``eta``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not gap_l2 > 0:
        raise ValueError("gap_l2 must be > 0")
    ratio = math.sqrt(math.pi) * gap_l2 / (13.0 * math.sqrt(2.0) * gamma)
    if ratio <= 1.0:
        raise GammaTooLarge(
            f"gamma={gamma} too large relative to separation {gap_l2}"
        )
    return max(1, math.ceil(math.log(1.0 / eta) / math.log(ratio)))


def align_all(
    oracle,
    queries,
    estimates: list[MeanEstimatePair],
    sigma: float,
    gamma: float,
    eta: float,
    gap_l2_bound: float,
    policy: BatchPolicy | None = None,
    m_prime: int | None = None,
) -> AlignedMeans:
    """Label all mean estimates consistently using sum/difference queries.

    Issues sum and difference batches for every pair ``(i, j)`` with
    ``i`` over all queries and ``j`` over the first ``m_prime`` reference
    queries, then picks an anchor among the references whose estimated
    separation is at least ``11 * gamma`` and orients every other pair by its
    verdict against the anchor.  Queries whose own separation is small may
    land on either side; both assignments are then within ``10 * gamma`` of
    either projection, so the global guarantee is unaffected.

    Parameters
    ----------
    gap_l2_bound : float
        Lower bound on the separation of the hidden vectors, used to size the
        reference set.  A real deployment must supply this from prior
        knowledge; simulations pass the true separation.
    m_prime : int, optional
        Override for the reference count (clamped to ``m - 1``).

    Raises
    ------
    GammaTooLarge
        If ``gamma`` is beyond the supported fraction of ``gap_l2_bound``;
        callers should switch to merged recovery.
    NoAnchorFound
        If no reference query shows an estimated separation of ``11*gamma``.
    """
    if policy is None:
        policy = BatchPolicy()
    if gamma > SMALL_GAMMA_RATIO * gap_l2_bound:
        raise GammaTooLarge(
            f"gamma={gamma} exceeds {SMALL_GAMMA_RATIO} * gap bound "
            f"{gap_l2_bound}; use merged recovery"
        )
    queries = [np.asarray(x, dtype=float) for x in queries]
    m = len(queries)
    if m != len(estimates):
        raise ValueError("queries and estimates must have equal length")
    if m < 2:
        raise ValueError("alignment needs at least 2 queries")
    if m_prime is None:
        m_prime = reference_count(eta, gamma, gap_l2_bound)
    m_prime = int(min(max(m_prime, 1), m - 1))

    branch_counts: Counter = Counter()
    verdicts: dict[tuple[int, int], PairwiseVerdict | None] = {}
    for i in range(m):
        for j in range(m_prime):
            if i == j:
                continue
            est_sum = test_and_estimate(
                oracle, queries[i] + queries[j], sigma, gamma, eta,
                policy=policy, tag=sum_tag(i, j),
            )
            est_diff = test_and_estimate(
                oracle, queries[i] - queries[j], sigma, gamma, eta,
                policy=policy, tag=diff_tag(i, j),
            )
            branch_counts[est_sum.branch] += 1
            branch_counts[est_diff.branch] += 1
            try:
                verdicts[(i, j)] = align_pair(
                    estimates[i], estimates[j], est_sum, est_diff, gamma, i=i, j=j
                )
            except NoConsistentMatch:
                verdicts[(i, j)] = None

    anchor = None
    for p in range(m_prime):
        if estimates[p].estimated_gap >= 11.0 * gamma:
            anchor = p
            break
    if anchor is None:
        raise NoAnchorFound(
            f"no reference query among the first {m_prime} has an estimated "
            f"separation >= 11 * gamma = {11.0 * gamma}"
        )

    u = np.empty(m)
    v = np.empty(m)
    fallback = 0
    for i in range(m):
        est = estimates[i]
        if i == anchor:
            u[i], v[i] = est.mu_hat_1, est.mu_hat_2
            continue
        verdict = verdicts[(i, anchor)]
        if verdict is None:
            # Undecidable pair: its separation must be small, so either
            # assignment stays within the entrywise guarantee.
            fallback += 1
            u[i], v[i] = est.mu_hat_1, est.mu_hat_2
        elif verdict.same_permutation:
            u[i], v[i] = est.mu_hat_1, est.mu_hat_2
        else:
            u[i], v[i] = est.mu_hat_2, est.mu_hat_1
    return AlignedMeans(
        u=u,
        v=v,
        anchor_index=anchor,
        fallback_count=fallback,
        branch_counts=dict(branch_counts),
    )
