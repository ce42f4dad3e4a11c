"""Simulated sample oracle for a two-component mixed sparse linear regression.

Each query with a vector ``x`` returns ``<x, beta> + zeta`` where ``beta`` is
drawn uniformly from the pair ``{beta1, beta2}`` and ``zeta`` is centered
Gaussian noise with known standard deviation ``sigma``.  The oracle keeps an
exact ledger of every scalar sample it hands out, keyed by the role of the
query (base query, sum query, difference query), so experiments can account
for their total sample usage without any hidden draws.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DistinctVectorsRequired",
    "NegativeSigma",
    "EmptyBatch",
    "QueryDimensionMismatch",
    "SparseVectorPair",
    "QueryLedger",
    "MixtureOracle",
    "make_oracle",
    "base_tag",
    "sum_tag",
    "diff_tag",
]


class DistinctVectorsRequired(ValueError):
    """The two regression vectors must differ in at least one coordinate."""


class NegativeSigma(ValueError):
    """Noise standard deviation must be nonnegative."""


class EmptyBatch(ValueError):
    """A batch must request at least one sample."""


class QueryDimensionMismatch(ValueError):
    """Query vector length does not match the oracle dimension."""


def base_tag(i: int) -> tuple:
    """Ledger key for the batch of the i-th design query."""
    return ("base", int(i))


def sum_tag(i: int, j: int) -> tuple:
    """Ledger key for the batch of the sum query ``x_i + x_j``."""
    return ("sum", int(i), int(j))


def diff_tag(i: int, j: int) -> tuple:
    """Ledger key for the batch of the difference query ``x_i - x_j``."""
    return ("diff", int(i), int(j))


@dataclass(frozen=True)
class SparseVectorPair:
    """Ground-truth pair of regression vectors (simulation only).

    Attributes
    ----------
    beta1, beta2 : ndarray of shape (n,)
        The two unknown vectors.  They must not be identical.
    n : int
        Ambient dimension.
    k : int
        Sparsity target.  Vectors built by the synthetic generator have at
        most ``k`` nonzero coordinates; explicitly constructed pairs are not
        forced to comply.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    n: int
    k: int

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=float)
        b2 = np.asarray(self.beta2, dtype=float)
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)
        if b1.ndim != 1 or b2.ndim != 1:
            raise ValueError("beta1 and beta2 must be 1-d arrays")
        if b1.shape != (self.n,) or b2.shape != (self.n,):
            raise ValueError(
                f"expected vectors of length n={self.n}, "
                f"got {b1.shape} and {b2.shape}"
            )
        if self.k < 0 or self.k > self.n:
            raise ValueError(f"sparsity k={self.k} out of range for n={self.n}")
        if np.array_equal(b1, b2):
            raise DistinctVectorsRequired(
                "beta1 and beta2 are identical; the model assumes two distinct vectors"
            )

    @classmethod
    def from_vectors(cls, beta1, beta2, k: int | None = None) -> "SparseVectorPair":
        b1 = np.asarray(beta1, dtype=float)
        b2 = np.asarray(beta2, dtype=float)
        if k is None:
            k = int(max(np.count_nonzero(b1), np.count_nonzero(b2)))
        return cls(beta1=b1, beta2=b2, n=b1.shape[0], k=k)

    @property
    def gap(self) -> float:
        """Euclidean separation ``||beta1 - beta2||_2``."""
        return float(np.linalg.norm(self.beta1 - self.beta2))


@dataclass
class QueryLedger:
    """Per-tag sample counters with an exact running total."""

    counts: Counter = field(default_factory=Counter)

    UNTAGGED: tuple = ("untagged",)

    def add(self, tag, amount: int) -> None:
        if tag is None:
            tag = self.UNTAGGED
        self.counts[tag] += int(amount)

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))

    def total_for_role(self, role: str) -> int:
        """Sum of counts over tags whose first element equals ``role``."""
        return int(
            sum(c for tag, c in self.counts.items()
                if isinstance(tag, tuple) and tag and tag[0] == role)
        )

    def by_role(self) -> dict:
        """Aggregate counts keyed by query role (first tag element)."""
        out: Counter = Counter()
        for tag, c in self.counts.items():
            role = tag[0] if isinstance(tag, tuple) and tag else str(tag)
            out[role] += c
        return dict(out)


class MixtureOracle:
    """Seeded stochastic answerer of linear queries against a hidden pair.

    One oracle instance is a single sample stream: its generator state
    advances with every batch, so replaying the same query sequence against a
    fresh oracle with the same seed reproduces every sample bit for bit.  Do
    not query one instance from two threads; use separate seeds instead.
    """

    def __init__(self, truth: SparseVectorPair, sigma: float, rng_seed: int):
        if sigma < 0:
            raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
        if np.array_equal(truth.beta1, truth.beta2):
            raise DistinctVectorsRequired("beta1 and beta2 are identical")
        self.truth = truth
        self.sigma = float(sigma)
        self.rng_seed = rng_seed
        self._rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
        self.ledger = QueryLedger()
        self._component_chunks: list[np.ndarray] = []
        self._max_base_gap_sq: float | None = None

    @property
    def n(self) -> int:
        return self.truth.n

    @property
    def query_count(self) -> int:
        """Total scalar samples issued since construction."""
        return self.ledger.total

    def query(self, x, tag=None) -> float:
        """Draw one sample ``<x, beta> + zeta`` with ``beta`` picked uniformly."""
        return float(self.query_batch(x, 1, tag=tag)[0])

    def query_batch(self, x, T: int, tag=None) -> np.ndarray:
        """Draw ``T`` independent samples of the same query vector.

        Parameters
        ----------
        x : array_like of shape (n,)
            Query vector.
        T : int
            Batch size, at least 1.
        tag : tuple or str, optional
            Ledger key; use :func:`base_tag` / :func:`sum_tag` /
            :func:`diff_tag` for the standard accounting roles.

        Returns
        -------
        ndarray of shape (T,)
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise QueryDimensionMismatch(
                f"query has shape {x.shape}, oracle dimension is {self.n}"
            )
        T = int(T)
        if T < 1:
            raise EmptyBatch(f"batch size must be >= 1, got {T}")
        mu1 = float(x @ self.truth.beta1)
        mu2 = float(x @ self.truth.beta2)
        picks = self._rng.integers(0, 2, size=T)
        values = np.where(picks == 0, mu1, mu2)
        if self.sigma > 0:
            values = values + self._rng.normal(0.0, self.sigma, size=T)
        self.ledger.add(tag, T)
        self._component_chunks.append(picks.astype(np.int8))
        if isinstance(tag, tuple) and tag and tag[0] == "base":
            gap_sq = (mu1 - mu2) ** 2
            if self._max_base_gap_sq is None or gap_sq > self._max_base_gap_sq:
                self._max_base_gap_sq = gap_sq
        return values

    def component_history(self) -> np.ndarray:
        """Latent component index (0 or 1) of every sample, in draw order.

        Debug accessor for tests only; recovery algorithms must never read it.
        """
        if not self._component_chunks:
            return np.zeros(0, dtype=np.int8)
        return np.concatenate(self._component_chunks)

    def realized_snr(self) -> float | None:
        """Max ``<x, beta1-beta2>^2 / sigma^2`` over issued base queries.

        Diagnostic only.  ``None`` before any base-tagged batch; ``inf`` when
        ``sigma == 0``.
        """
        if self._max_base_gap_sq is None:
            return None
        if self.sigma == 0:
            return float("inf")
        return self._max_base_gap_sq / self.sigma**2


def make_oracle(truth: SparseVectorPair, sigma: float, seed: int) -> MixtureOracle:
    """Build a fresh oracle with an empty ledger."""
    return MixtureOracle(truth, sigma, seed)
