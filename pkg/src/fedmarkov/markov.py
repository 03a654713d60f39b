"""Finite-state Markov chains: kernels, streams, and mixing diagnostics.

The chain toolkit underlying both the simulator and the bound calculators.
A kernel is a row-stochastic matrix; everything downstream of it is
computable exactly for finite state spaces:

- stationary distribution via the null space of (P^T - I),
- worst-case total variation d(t) = 2 max_x TV(P^t(x, .), pi),
- mixing time tau(eps) = min{t : d(t) <= eps},
- pseudo spectral gap nu_ps = max_k gap((P*)^k P^k) / k with P* the
  time reversal of P,
- C_inf = max_{x,y} P(x,y) / pi(y),

plus deterministic stream sampling through counter-based substreams.

Kernels, distributions, and diagnostics are immutable after construction
and safe to share across threads; a StreamCursor is single-owner mutable,
but distinct cursors never share randomness and may advance concurrently.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateChainError,
    InvalidParameterError,
    NotMixedError,
    NumericalError,
    ShapeError,
    UnsupportedChainError,
    ViolatedAssumptionError,
)
from .rng import CHAIN, substream_at

ROW_SUM_TOL = 1e-12
NULL_SPACE_TOL = 1e-9
FIXED_POINT_TOL = 1e-10
DEFAULT_MIXING_EPS = 0.25
DEFAULT_SEARCH_CAP = 10**7


@dataclass(frozen=True)
class FiniteKernel:
    """Row-stochastic transition matrix of one client's finite-state chain."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise ShapeError(f"kernel must be a square matrix, got shape {rows.shape}")
        if np.any(rows < 0.0):
            raise InvalidParameterError("kernel entries must be >= 0")
        sums = rows.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise InvalidParameterError(
                f"kernel rows must sum to 1 within {ROW_SUM_TOL}, worst deviation "
                f"{np.max(np.abs(sums - 1.0)):.3e}"
            )
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def cumulative_rows(self) -> list[list[float]]:
        """Per-row cumulative probabilities for inverse-CDF sampling.

        The last entry of each row is forced to exactly 1.0 so a uniform
        draw in [0, 1) always lands inside the row.
        """
        cum = np.cumsum(self.rows, axis=1)
        cum[:, -1] = 1.0
        return [row.tolist() for row in cum]


@dataclass(frozen=True)
class Distribution:
    """Probability vector over the states of a finite chain."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ShapeError("distribution must be a non-empty vector")
        if np.any(probs < 0.0):
            raise InvalidParameterError("distribution entries must be >= 0")
        if abs(probs.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidParameterError(
                f"distribution must sum to 1 within {ROW_SUM_TOL}"
            )
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.shape[0]


@dataclass
class StreamCursor:
    """Single-owner cursor over one client's Markov data stream.

    The cursor identifies a deterministic substream by (seed, client_id,
    counter): reconstructing a cursor with the same key and state yields
    the same continuation, and distinct cursors never share randomness.
    """

    kernel: FiniteKernel
    state: int
    seed: int
    client_id: int
    counter: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)
    _cum: list[list[float]] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.state < self.kernel.n):
            raise InvalidParameterError(
                f"state {self.state} outside [0, {self.kernel.n})"
            )
        if self.counter < 0:
            raise InvalidParameterError("counter must be >= 0")

    @property
    def rng_key(self) -> tuple[int, int, int]:
        return (self.seed, self.client_id, self.counter)

    def _generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = substream_at(
                self.seed, CHAIN, self.client_id, position=self.counter
            )
        return self._gen


@dataclass(frozen=True)
class ChainDiagnostics:
    """Bundle of the chain constants used by the convergence bounds."""

    stationary: Distribution
    mixing_time: int
    pseudo_spectral_gap: float
    c_infinity: float

    def __post_init__(self):
        if not (0.0 < self.pseudo_spectral_gap <= 1.0):
            raise InvalidParameterError("pseudo_spectral_gap must be in (0, 1]")
        if self.c_infinity < 1.0:
            raise InvalidParameterError("c_infinity must be >= 1")


def two_state(p: float) -> FiniteKernel:
    """Symmetric two-state kernel with flip probability p in (0, 1)."""
    if not (0.0 < p < 1.0):
        raise InvalidParameterError(f"flip probability must be in (0, 1), got {p}")
    return FiniteKernel(np.array([[1.0 - p, p], [p, 1.0 - p]]))


def p_for_mixing_time(tau: int) -> float:
    """Flip probability whose two-state chain has mixing time tau.

    Inverts d(t) = (1 - 2p)^t <= 1/4; the tiny shrink keeps d(tau) strictly
    below 1/4 so float rounding cannot push the mixing time to tau + 1.
    """
    if tau < 1:
        raise InvalidParameterError("tau must be >= 1")
    lam = 0.25 ** (1.0 / tau) * (1.0 - 1e-12)
    return 0.5 * (1.0 - lam)


def stationary(kernel: FiniteKernel) -> Distribution:
    """Unique stationary distribution pi with pi P = pi.

    Solves the null space of (P^T - I) by SVD; a null space of dimension
    greater than one (singular values below 1e-9) means the stationary
    distribution is not unique and the chain is rejected.
    """
    n = kernel.n
    a = kernel.rows.T - np.eye(n)
    try:
        _, svals, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails here
        raise NumericalError(f"SVD failed on kernel: {exc}") from exc
    null_dim = int(np.sum(svals <= NULL_SPACE_TOL)) + (n - svals.size)
    if null_dim > 1:
        raise DegenerateChainError(
            f"stationary distribution is not unique (null space dimension {null_dim})"
        )
    pi = vt[-1]
    total = pi.sum()
    if total == 0.0:
        raise NumericalError("null vector of (P^T - I) sums to zero")
    pi = pi / total
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if np.any(pi < 0.0):
        raise NumericalError("stationary solve produced negative mass")
    pi = pi / pi.sum()
    residual = np.max(np.abs(pi @ kernel.rows - pi))
    if residual > FIXED_POINT_TOL:
        raise NumericalError(
            f"stationary residual {residual:.3e} exceeds {FIXED_POINT_TOL}"
        )
    return Distribution(pi)


def tv_distance(p: Distribution, q: Distribution) -> float:
    """Total variation distance (1/2) sum |p_i - q_i|."""
    if p.n != q.n:
        raise ShapeError(f"length mismatch: {p.n} vs {q.n}")
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def _worst_case_tv_from_power(power: np.ndarray, pi: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(power - pi[None, :]), axis=1)))


def worst_case_tv(kernel: FiniteKernel, t: int) -> float:
    """d(t) = 2 max over start states x of TV(P^t(x, .), pi)."""
    if t < 0:
        raise InvalidParameterError("t must be >= 0")
    pi = stationary(kernel).probs
    power = np.linalg.matrix_power(kernel.rows, t)
    return _worst_case_tv_from_power(power, pi)


def mixing_time(
    kernel: FiniteKernel,
    eps: float = DEFAULT_MIXING_EPS,
    search_cap: int = DEFAULT_SEARCH_CAP,
) -> int:
    """Smallest t with d(t) <= eps, found by doubling then bisection.

    d(.) is non-increasing (advancing a chain cannot increase the distance
    to stationarity), which makes the bisection valid. Chains that fail to
    reach eps within `search_cap` steps raise NotMixedError.
    """
    if not (0.0 < eps < 1.0):
        raise InvalidParameterError("eps must be in (0, 1)")
    pi = stationary(kernel).probs
    rows = kernel.rows
    # Absolute slack absorbs the ulp-level error of the computed pi so that
    # exact boundary cases (d(t) == eps in reals) are classified correctly.
    eps = eps + 1e-12

    def d(t: int) -> float:
        return _worst_case_tv_from_power(np.linalg.matrix_power(rows, t), pi)

    if d(0) <= eps:
        return 0
    hi = 1
    while d(hi) > eps:
        if hi >= search_cap:
            raise NotMixedError(
                f"d(t) did not reach {eps} within the search cap {search_cap}"
            )
        hi = min(2 * hi, search_cap)
    lo = hi // 2  # d(lo) > eps, d(hi) <= eps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if d(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def _ceil_log4(m: int) -> int:
    """Exact ceil(log_4 m) for positive integers."""
    j = 0
    power = 1
    while power < m:
        power *= 4
        j += 1
    return j


def product_mixing_bound(taus: list[int], m: int | None = None) -> int:
    """Mixing-time bound (ceil(log_4 M) + 1) * max(taus) for M independent chains."""
    if not taus:
        raise InvalidParameterError("taus must be non-empty")
    if any(t < 1 for t in taus):
        raise InvalidParameterError("per-client mixing times must be >= 1")
    m = len(taus) if m is None else m
    if m < 1:
        raise InvalidParameterError("client count must be >= 1")
    return (_ceil_log4(m) + 1) * max(taus)


def _reversal(rows: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Time reversal P*(x, y) = pi(y) P(y, x) / pi(x)."""
    return (rows.T * pi[None, :]) / pi[:, None]


def _reversible_gap(a: np.ndarray, pi: np.ndarray) -> float:
    """1 - lambda_2 of the pi-reversible matrix a, via symmetrization.

    D^{1/2} A D^{-1/2} with D = diag(pi) is symmetric for pi-reversible A,
    so a symmetric eigensolver applies.
    """
    sqrt_pi = np.sqrt(pi)
    sym = (sqrt_pi[:, None] * a) / sqrt_pi[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        evals = np.linalg.eigvalsh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen solve failed: {exc}") from exc
    if evals.size == 1:
        return 1.0
    lam2 = float(np.clip(evals[-2], 0.0, 1.0))
    return 1.0 - lam2


def reversibilization_gaps(kernel: FiniteKernel, k_max: int) -> np.ndarray:
    """gap((P*)^k P^k) for k = 1..k_max, where P* is the time reversal.

    (P*)^k P^k equals (P^k)* P^k, so one running power of P suffices.
    Building block for the pseudo spectral gap of a single chain and, via
    the tensor-product eigenstructure, of products of independent chains.
    """
    if k_max < 1:
        raise InvalidParameterError("k_max must be >= 1")
    pi = stationary(kernel).probs
    if np.any(pi <= 0.0):
        raise UnsupportedChainError(
            "reversibilization requires pi > 0 for every state"
        )
    rows = kernel.rows
    gaps = np.empty(k_max)
    p_k = np.eye(kernel.n)
    for k in range(1, k_max + 1):
        p_k = p_k @ rows
        a = _reversal(p_k, pi) @ p_k
        gaps[k - 1] = _reversible_gap(a, pi)
    return gaps


def pseudo_spectral_gap(kernel: FiniteKernel, k_max: int | None = None) -> float:
    """Pseudo spectral gap: max over k <= k_max of gap((P*)^k P^k) / k.

    Requires a strictly positive stationary distribution (the reversal is
    undefined otherwise). k_max defaults to max(10, mixing_time), which in
    practice brackets the maximizing k; the supremum over all k is not
    computable.
    """
    if k_max is None:
        k_max = max(10, mixing_time(kernel))
    gaps = reversibilization_gaps(kernel, k_max)
    best = float(np.max(gaps / np.arange(1, k_max + 1)))
    if best <= 1e-12:
        raise UnsupportedChainError(
            f"pseudo spectral gap is 0 up to k_max={k_max} (periodic chain?)"
        )
    return min(best, 1.0)


def c_infinity(kernel: FiniteKernel) -> float:
    """C_inf = max over (x, y) of P(x, y) / pi(y).

    Pairs with pi(y) = 0 and P(x, y) = 0 are skipped; positive transition
    mass into a pi-null state violates absolute continuity.
    """
    pi = stationary(kernel).probs
    rows = kernel.rows
    zero = pi <= 1e-13
    if np.any(zero):
        if np.any(rows[:, zero] > 1e-13):
            raise ViolatedAssumptionError(
                "transition mass into a state with zero stationary probability"
            )
        keep = ~zero
        return float(np.max(rows[:, keep] / pi[None, keep]))
    return float(np.max(rows / pi[None, :]))


def c_infinity_ergodic_bound(c: float, rho: float, pi_min: float) -> float:
    """Upper bound 2 c rho / pi_min + 1 under uniform geometric ergodicity."""
    if pi_min <= 0.0 or pi_min > 1.0:
        raise InvalidParameterError("pi_min must be in (0, 1]")
    if c < 0.0:
        raise InvalidParameterError("c must be >= 0")
    if not (0.0 <= rho < 1.0):
        raise InvalidParameterError("rho must be in [0, 1)")
    return 2.0 * c * rho / pi_min + 1.0


def diagnostics(kernel: FiniteKernel, k_max: int | None = None) -> ChainDiagnostics:
    """Convenience bundle of all chain constants."""
    return ChainDiagnostics(
        stationary=stationary(kernel),
        mixing_time=mixing_time(kernel),
        pseudo_spectral_gap=pseudo_spectral_gap(kernel, k_max),
        c_infinity=c_infinity(kernel),
    )


def _two_state_path(u: np.ndarray, t0: float, t1: float, s0: int) -> np.ndarray:
    """Vectorized two-state path, identical to the inverse-CDF scan.

    From state s the next state is (u >= t_s) with t_s the first cumulative
    entry of row s. Each step therefore acts on the state as one of four
    maps; composing them reduces to "last forcing draw wins, flips toggle":
    a draw with (u >= t0) == (u >= t1) forces the state regardless of s,
    and a draw with (u >= t0) != (u >= t1) either keeps or flips it.
    """
    next0 = u >= t0
    next1 = u >= t1
    forced = next0 == next1
    flip = next0 & ~next1  # from 0 go to 1, from 1 go to 0
    idx = np.arange(u.size)
    last_forced = np.maximum.accumulate(np.where(forced, idx, -1))
    flips_cum = np.cumsum(flip)
    has_force = last_forced >= 0
    base = np.where(has_force, next0[np.maximum(last_forced, 0)], bool(s0))
    flips_before = np.where(has_force, flips_cum[np.maximum(last_forced, 0)], 0)
    parity = (flips_cum - flips_before) & 1
    return (base.astype(np.int64) ^ parity).astype(np.int64)


def sample_stream(cursor: StreamCursor, count: int) -> np.ndarray:
    """Advance the cursor's chain `count` steps and return the visited states.

    Each step consumes exactly one uniform draw from the cursor's substream
    (inverse CDF of the current row), so the counter equals the number of
    samples ever drawn and a cursor can be reconstructed at any position.
    Two-state chains take a vectorized path that consumes the same draws
    and produces the same states as the general scan.
    """
    if count < 0:
        raise InvalidParameterError("count must be >= 0")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    gen = cursor._generator()
    uniforms = gen.random(count)
    if cursor.kernel.n == 2:
        rows = cursor.kernel.rows
        out = _two_state_path(uniforms, rows[0, 0], rows[1, 0], cursor.state)
    else:
        if cursor._cum is None:
            cursor._cum = cursor.kernel.cumulative_rows()
        cum = cursor._cum
        out = np.empty(count, dtype=np.int64)
        state = cursor.state
        for i, u in enumerate(uniforms.tolist()):
            state = bisect_right(cum[state], u)
            out[i] = state
    cursor.state = int(out[-1])
    cursor.counter += count
    return out


def kernel_to_csv(kernel: FiniteKernel, path) -> None:
    """Write a kernel as CSV, one row per state."""
    np.savetxt(path, kernel.rows, delimiter=",", fmt="%.17g")


def kernel_from_csv(path) -> FiniteKernel:
    """Read a kernel from CSV (one row per state, comma-separated probabilities)."""
    try:
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InvalidParameterError(f"malformed kernel CSV {path}: {exc}") from exc
    return FiniteKernel(rows)
