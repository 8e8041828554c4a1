"""Discrete distributions over computational basis states.

Basis index convention (used everywhere in the package): bit ``k`` of a state
index is the value of qubit ``k``, i.e. ``index = sum(bits[k] * 2**k)``.
Bit strings are displayed with qubit 0 leftmost.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import poisson

from .errors import DegenerateOutputError, DomainError, ShapeError, SizeError

MAX_QUBITS = 6
PROB_ATOL = 1e-9


@dataclass(frozen=True)
class BasisState:
    index: int
    n_qubits: int

    def __post_init__(self):
        if not 0 <= self.index < 2**self.n_qubits:
            raise DomainError(f"index {self.index} out of range for {self.n_qubits} qubits")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BasisState":
        return cls(sum(int(b) << k for k, b in enumerate(bits)), len(bits))

    @property
    def bits(self) -> tuple[bool, ...]:
        return tuple(bool((self.index >> k) & 1) for k in range(self.n_qubits))

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def bitstring(index: int, n_qubits: int) -> str:
    return str(BasisState(index, n_qubits))


def n_qubits_for(n_states: int) -> int:
    n = int(round(math.log2(n_states))) if n_states > 0 else -1
    if n < 0 or 2**n != n_states:
        raise ShapeError(f"{n_states} is not a power of two")
    return n


def as_distribution(probs, atol: float = PROB_ATOL) -> np.ndarray:
    """Validate ``probs`` as a probability vector and return it as float array."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError(f"expected a non-empty 1-d vector, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > atol:
        raise DomainError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DegenerateOutputError("cannot normalize an all-zero vector")
    return w / total


@dataclass(frozen=True, eq=False)
class CountVector:
    """Per-state counts with an effective shot size equal to their sum.

    Counts are real-valued so that mitigated (non-integer) counts fit the
    same container as raw sampled ones.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ShapeError(f"expected a non-empty 1-d vector, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise DomainError("counts must be finite and non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n_states(self) -> int:
        return self.counts.size

    @property
    def effective_shots(self) -> float:
        return float(self.counts.sum())

    def distribution(self) -> np.ndarray:
        return normalize(self.counts)

    def __eq__(self, other):
        if not isinstance(other, CountVector):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"CountVector(shots={self.effective_shots:g}, counts={self.counts.tolist()})"


# -- targets ---------------------------------------------------------------


def _is_bar_or_stripe(image: np.ndarray) -> bool:
    rows_constant = all(len(set(row)) == 1 for row in image)
    cols_constant = all(len(set(col)) == 1 for col in image.T)
    return rows_constant or cols_constant


def bas_target(rows: int = 2, cols: int = 2) -> np.ndarray:
    """Bars-and-stripes target: uniform over images with constant rows or columns.

    Pixel ``(r, c)`` is carried by qubit ``r * cols + c``.
    """
    if rows < 1 or cols < 1:
        raise DomainError("rows and cols must be positive")
    n = rows * cols
    if n > MAX_QUBITS:
        raise SizeError(f"BAS({rows},{cols}) needs {n} qubits; at most {MAX_QUBITS} supported")
    # row-constant images are indexed by one bit per row, column-constant by one per column
    support = set()
    for row_bits in itertools.product((0, 1), repeat=rows):
        image = np.repeat(np.array(row_bits)[:, None], cols, axis=1)
        support.add(BasisState.from_bits(image.ravel()).index)
    for col_bits in itertools.product((0, 1), repeat=cols):
        image = np.repeat(np.array(col_bits)[None, :], rows, axis=0)
        support.add(BasisState.from_bits(image.ravel()).index)
    p = np.zeros(2**n)
    p[sorted(support)] = 1.0 / len(support)
    return p


def poisson_target(kind: str = "poisson1", lam: float = 5.0, n_states: int = 16) -> np.ndarray:
    """Truncated Poisson pmf on states ``0..n_states-2`` with the top state zeroed.

    ``poisson2`` is the left-right mirror of ``poisson1``.
    """
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    n_qubits_for(n_states)
    if kind not in ("poisson1", "poisson2"):
        raise DomainError(f"unknown Poisson target kind {kind!r}")
    p = np.zeros(n_states)
    p[:-1] = poisson.pmf(np.arange(n_states - 1), lam)
    p /= p.sum()
    if kind == "poisson2":
        p = p[::-1].copy()
    return p


def make_target(kind: str, lam: float = 5.0, custom_probs=None, n_states: int = 16) -> np.ndarray:
    if kind == "bas22":
        return bas_target(2, 2)
    if kind in ("poisson1", "poisson2"):
        return poisson_target(kind, lam, n_states)
    if kind == "custom":
        if custom_probs is None:
            raise DomainError("custom target needs explicit probabilities")
        return as_distribution(custom_probs)
    raise DomainError(f"unknown target kind {kind!r}")


# -- metrics and resampling ------------------------------------------------


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; ``inf`` when q vanishes somewhere on the support of p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    ps, qs = p[support], q[support]
    return float(np.sum(ps * np.log(ps / qs)))


def subsample(source, shots: int, rng: np.random.Generator) -> CountVector:
    """Multinomial draw of ``shots`` samples from a count vector or distribution."""
    if shots < 1:
        raise DomainError(f"shots must be >= 1, got {shots}")
    weights = source.counts if isinstance(source, CountVector) else np.asarray(source, dtype=float)
    try:
        pvals = normalize(weights)
    except DegenerateOutputError as exc:
        raise DomainError("cannot subsample from an empty source") from exc
    return CountVector(rng.multinomial(shots, pvals).astype(float))


def composite(batches: Sequence[CountVector]) -> CountVector:
    """Pool counts from repeated identical circuit batches."""
    if not batches:
        raise DomainError("composite of an empty batch list")
    sizes = {b.n_states for b in batches}
    if len(sizes) != 1:
        raise ShapeError(f"batches disagree on state count: {sorted(sizes)}")
    return CountVector(np.sum([b.counts for b in batches], axis=0))


class KLStats(NamedTuple):
    mean: float
    std: float
    divergences: int


def mean_kl(p, source, shots: int, repeats: int = 10, rng: np.random.Generator | None = None) -> KLStats:
    """Mean and sample standard deviation of KL over ``repeats`` sub-samples.

    If any draw diverges the mean is ``inf``; ``std`` is then computed over the
    finite draws only and ``divergences`` counts the infinite ones.
    """
    if repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng() if rng is None else rng
    values = np.array([kl_divergence(p, subsample(source, shots, rng).distribution())
                       for _ in range(repeats)])
    finite = values[np.isfinite(values)]
    n_div = int(values.size - finite.size)
    std = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
    mean = math.inf if n_div else float(finite.mean())
    return KLStats(mean, std, n_div)


def threshold_filter(q, p0: float) -> np.ndarray:
    """Zero every entry below ``p0`` and renormalize (a diagnostic, not a mitigation)."""
    if not 0 < p0 < 1:
        raise DomainError(f"threshold must lie in (0, 1), got {p0}")
    q = np.asarray(q, dtype=float)
    kept = np.where(q < p0, 0.0, q)
    if not kept.sum() > 0:
        raise DegenerateOutputError(f"every entry falls below threshold {p0}")
    return kept / kept.sum()
