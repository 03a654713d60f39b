"""Convergence-bound and complexity calculators, plus the Monte-Carlo
verifier for the gradient-estimate error bound.

Every formula uses the explicit constants of the analysis rather than
big-O shorthand:

- minibatch:  2 D0/(gamma T) + 4 Cinf sigma^2/(nu MK), gamma <= 1/L;
  complexity K = ceil(8 Cinf sigma^2/(nu M eps^2)), T = ceil(4 L D0/eps^2).
- local SGD (eta~ = eta K <= 1/(10 L delta^2)):
  (98/45) D0/(eta~ T) + (392/45) Cinf sigma^2/(nu MK)
  + (40/45) L eta~ (theta^2 + sigma^2)/delta^2;
  complexity K = ceil((392/15) Cinf sigma^2/(nu M eps^2)),
  eta cap = min((3/8) delta^2 eps^2/(K L (theta^2 + sigma^2)), 1/(10 K L delta^2)),
  T = ceil((98/15) D0/(eta K eps^2)).
- momentum (gamma <= beta/(sqrt(60) L); eta K L bounded by a five-way min):
  the averaged gradient-error bound is (7/2) L D0/(beta T)
  + 31 Cinf sigma^2/(nu MK) + (1/4) x mean gradient; moving the (1/4)
  term across the telescoped descent inequality gives the closed form
  (4/3) [2 D0/(gamma T) + (7/2) L D0/(beta T) + 31 Cinf sigma^2/(nu MK)].

The gradient-error bound 4 Cinf sigma^2/(nu MK) refers to the constants of
the system-level product chain. For independent clients the product
chain's multiplicative reversibilization is the tensor product of the
per-client ones, so its second eigenvalue is the max over clients and
C_inf multiplies across clients; both constants are computed exactly from
the per-client kernels without forming the (n^M)-state product kernel.

All calculators are pure and thread-safe. The Monte-Carlo verifier
accumulates trial chunks in a fixed order, so its estimate does not depend
on how trials would be scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidParameterError, PreconditionError, UnsupportedChainError
from .markov import FiniteKernel, c_infinity, reversibilization_gaps, stationary
from .objectives import (
    NOISE_HIGH,
    NOISE_LOW,
    SyntheticObjectives,
    SyntheticProblem,
    reg_grad,
    synth_loss,
    synth_sample_grad,
    synth_stationary_grad,
    synth_true_grad,
)
from .rng import ESTIMATE, VERIFIER, substream


@dataclass(frozen=True)
class ProblemConstants:
    """Constants feeding the bound and complexity formulas."""

    L: float
    sigma: float
    theta: float
    delta: float
    c_inf: float
    nu_ps: float
    delta0: float
    g0: float
    m: int
    k: int
    t: int
    beta: float
    eps: float

    def __post_init__(self):
        if min(self.L, self.sigma, self.c_inf) <= 0.0:
            raise InvalidParameterError("L, sigma, c_inf must be > 0")
        if not (0.0 < self.nu_ps <= 1.0):
            raise InvalidParameterError("nu_ps must be in (0, 1]")
        if self.delta < 1.0:
            raise InvalidParameterError("delta must be >= 1")
        if self.theta < 0.0:
            raise InvalidParameterError("theta must be >= 0")
        if self.eps <= 0.0:
            raise InvalidParameterError("eps must be > 0")
        if min(self.m, self.k, self.t) < 1:
            raise InvalidParameterError("M, K, T must be >= 1")
        if not (0.0 < self.beta <= 1.0):
            raise InvalidParameterError("beta must be in (0, 1]")
        if self.delta0 < 0.0 or self.g0 < 0.0:
            raise InvalidParameterError("delta0 and g0 must be >= 0")


# ----------------------------------------------------------- minibatch SGD


def minibatch_bound(c: ProblemConstants, gamma: float) -> float:
    """2 D0/(gamma T) + 4 Cinf sigma^2/(nu MK) for gamma <= 1/L."""
    if gamma <= 0.0:
        raise InvalidParameterError("gamma must be > 0")
    if gamma > 1.0 / c.L:
        raise PreconditionError(f"gamma {gamma} exceeds 1/L = {1.0 / c.L}")
    noise = 4.0 * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.k)
    return 2.0 * c.delta0 / (gamma * c.t) + noise


def minibatch_complexity(c: ProblemConstants) -> tuple[int, int]:
    """(K, T) sufficient for an eps^2-accurate output at gamma = 1/L."""
    k_req = math.ceil(8.0 * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.eps**2))
    t_req = math.ceil(4.0 * c.L * c.delta0 / c.eps**2)
    return max(k_req, 1), max(t_req, 1)


# -------------------------------------------------------------- local SGD


def local_sgd_bound(c: ProblemConstants, eta: float) -> float:
    """Three-term bound in eta~ = eta K, valid for eta~ <= 1/(10 L delta^2)."""
    if eta <= 0.0:
        raise InvalidParameterError("eta must be > 0")
    eta_tilde = eta * c.k
    cap = 1.0 / (10.0 * c.L * c.delta**2)
    if eta_tilde > cap * (1.0 + 1e-12):  # ulp slack for eta passed as cap / K
        raise PreconditionError(
            f"eta * K = {eta_tilde} exceeds 1/(10 L delta^2) = {cap}"
        )
    return (
        (98.0 / 45.0) * c.delta0 / (eta_tilde * c.t)
        + (392.0 / 45.0) * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.k)
        + (40.0 / 45.0) * c.L * eta_tilde * (c.theta**2 + c.sigma**2) / c.delta**2
    )


def local_sgd_complexity(c: ProblemConstants) -> tuple[float, int, int]:
    """(eta cap, K, T) sufficient for an eps^2-accurate output.

    The eta cap and T are evaluated at the returned K.
    """
    k_req = max(
        math.ceil((392.0 / 15.0) * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.eps**2)),
        1,
    )
    moment = c.theta**2 + c.sigma**2
    branch_noise = (
        math.inf
        if moment == 0.0
        else (3.0 / 8.0) * c.delta**2 * c.eps**2 / (k_req * c.L * moment)
    )
    branch_smooth = 1.0 / (10.0 * k_req * c.L * c.delta**2)
    eta_cap = min(branch_noise, branch_smooth)
    t_req = math.ceil((98.0 / 15.0) * c.delta0 / (eta_cap * k_req * c.eps**2))
    return eta_cap, k_req, max(t_req, 1)


# ----------------------------------------------------- local SGD momentum


def _momentum_gamma_cap(c: ProblemConstants) -> float:
    return c.beta / (math.sqrt(60.0) * c.L)


def momentum_step_caps(c: ProblemConstants, gamma: float) -> float:
    """Cap on eta: the five-way minimum on eta K L divided by K L.

    Branches: 1/(2 beta), sqrt(Cinf/(120 nu MK beta^2)),
    sqrt(L D0/(360 beta^3 T G0)), (1/225)/(1 - beta), (1/525)/(beta gamma L T);
    the (1 - beta) branch is +inf at beta = 1, the G0 branch +inf at G0 = 0.
    """
    if gamma <= 0.0:
        raise InvalidParameterError("gamma must be > 0")
    if gamma > _momentum_gamma_cap(c):
        raise PreconditionError(
            f"gamma {gamma} exceeds beta/(sqrt(60) L) = {_momentum_gamma_cap(c)}"
        )
    branches = [
        1.0 / (2.0 * c.beta),
        math.sqrt(c.c_inf / (120.0 * c.nu_ps * c.m * c.k * c.beta**2)),
        (1.0 / 225.0) / (1.0 - c.beta) if c.beta < 1.0 else math.inf,
        (1.0 / 525.0) / (c.beta * gamma * c.L * c.t),
    ]
    if c.g0 > 0.0:
        branches.append(math.sqrt(c.L * c.delta0 / (360.0 * c.beta**3 * c.t * c.g0)))
    return min(branches) / (c.k * c.L)


def momentum_bound(c: ProblemConstants, gamma: float, eta: float) -> float:
    """(4/3) [2 D0/(gamma T) + (7/2) L D0/(beta T) + 31 Cinf sigma^2/(nu MK)].

    The 4/3 factor comes from moving the (1/4) mean-gradient term of the
    averaged gradient-error bound to the left-hand side of the telescoped
    descent inequality. Both step-size preconditions are enforced.
    """
    eta_cap = momentum_step_caps(c, gamma)  # validates gamma as well
    if eta <= 0.0:
        raise InvalidParameterError("eta must be > 0")
    if eta > eta_cap * (1.0 + 1e-12):
        raise PreconditionError(f"eta {eta} exceeds the momentum cap {eta_cap}")
    return (4.0 / 3.0) * (
        2.0 * c.delta0 / (gamma * c.t)
        + 3.5 * c.L * c.delta0 / (c.beta * c.t)
        + 31.0 * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.k)
    )


# ------------------------------------------------- product-chain constants


def product_chain_constants(
    kernels: list[FiniteKernel], k_max: int = 32
) -> tuple[float, float]:
    """(C_inf, nu_ps) of the product of independent finite chains.

    The reversibilization of the product chain is the tensor product of the
    per-client reversibilizations, so 1 - gap of the product at power k is
    the max over clients of the per-client 1 - gap, and C_inf is the
    product of the per-client maxima. Exact at any client count.
    """
    if not kernels:
        raise InvalidParameterError("at least one kernel is required")
    c_inf = 1.0
    for kern in kernels:
        c_inf *= c_infinity(kern)
    per_client_gaps = np.stack(
        [reversibilization_gaps(kern, k_max) for kern in kernels]
    )
    product_gaps = per_client_gaps.min(axis=0)
    nu = float(np.max(product_gaps / np.arange(1, k_max + 1)))
    if nu <= 1e-12:
        raise UnsupportedChainError("product chain has zero pseudo spectral gap")
    return c_inf, min(nu, 1.0)


# ------------------------------------------ gradient-error bound verifier


def _synth_sigma_sq_at(problem: SyntheticProblem, w: np.ndarray) -> float:
    """sup over (m, state, noise) of ||grad f_m - grad F_m||^2 at w.

    The sample gradient is affine in the noise draw, so the supremum over
    noise is attained at an endpoint of [0, 0.01).
    """
    worst = 0.0
    for m in range(problem.n_clients):
        target = synth_stationary_grad(problem, m, w)
        for state in range(2):
            for noise in (NOISE_LOW, NOISE_HIGH):
                diff = synth_sample_grad(problem, m, state, noise, w) - target
                worst = max(worst, float(diff @ diff))
    return worst


def _two_state_thresholds(kernels: list[FiniteKernel]) -> np.ndarray:
    thresholds = np.empty((len(kernels), 2))
    for i, kern in enumerate(kernels):
        if kern.n != 2:
            raise InvalidParameterError("vectorized verifier requires 2-state kernels")
        thresholds[i, 0] = kern.rows[0, 0]
        thresholds[i, 1] = kern.rows[1, 0]
    return thresholds


def verify_gradient_error_bound(
    kernels: list[FiniteKernel],
    objectives: SyntheticObjectives,
    w: np.ndarray,
    m: int,
    k: int,
    trials: int,
    sigma_sq: float | None = None,
    seed: int = 0,
    chunk: int = 2000,
) -> tuple[float, float, bool]:
    """Monte-Carlo check of E||g_bar - grad F(w)||^2 <= 4 Cinf sigma^2/(nu MK).

    Each trial starts every client's chain at its stationary distribution,
    draws K samples per client, and evaluates the averaged sample gradient
    at w. The bound uses the product-chain constants of the per-client
    kernels; `holds` allows the Monte-Carlo slack factor (1 + 3/sqrt(trials)).
    Only the stationary-start unconditional form is supported.
    """
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    if len(kernels) == 1 and m > 1:
        kernels = kernels * m
    if len(kernels) != m:
        raise InvalidParameterError("need one kernel per client")
    problem = objectives.problem
    if problem.n_clients != m:
        raise InvalidParameterError("objectives client count must equal M")

    pis = np.stack([stationary(kern).probs for kern in kernels])  # (M, 2)
    thresholds = _two_state_thresholds(kernels)  # next state = (u >= thr[s])
    target = np.mean(
        [synth_stationary_grad(problem, i, w) for i in range(m)], axis=0
    )
    if sigma_sq is None:
        sigma_sq = _synth_sigma_sq_at(problem, w)

    # Per-state residual coefficients: grad = coef[m, s] * V[m, s] + lam r'(w)
    # with coef = 2 (w^T V - w_opt^T V - eps); the regularizer term is common
    # to every sample and cancels inside g_bar only via averaging weights.
    v = problem.v  # (M, 2, d)
    proj = np.einsum("msd,d->ms", v, w)
    base = proj - np.einsum("msd,msd->ms", problem.w_opt, v)  # (M, 2)
    lam_term = problem.lam * reg_grad(w)

    gen = substream(seed, VERIFIER)
    total = 0.0
    done = 0
    while done < trials:
        batch = min(chunk, trials - done)
        # Stationary starts, then K - 1 transitions; states: (batch, M, K).
        u0 = gen.random((batch, m))
        states = np.empty((batch, m, k), dtype=np.int64)
        states[:, :, 0] = (u0 >= pis[None, :, 0]).astype(np.int64)
        if k > 1:
            us = gen.random((batch, m, k - 1))
        for j in range(1, k):
            thr = thresholds[np.arange(m)[None, :], states[:, :, j - 1]]
            states[:, :, j] = (us[:, :, j - 1] >= thr).astype(np.int64)
        noise = gen.uniform(NOISE_LOW, NOISE_HIGH, size=(batch, m, k))
        coef = 2.0 * (
            base[np.arange(m)[None, :, None], states] - noise
        )  # (batch, M, K)
        s1 = states.astype(np.float64)
        sum1 = np.einsum("bmk,bmk->bm", coef, s1)
        sum0 = coef.sum(axis=2) - sum1
        g_bar = (
            np.einsum("bm,md->bd", sum0, v[:, 0, :])
            + np.einsum("bm,md->bd", sum1, v[:, 1, :])
        ) / (m * k) + lam_term[None, :]
        diff = g_bar - target[None, :]
        total += float(np.sum(diff * diff))
        done += batch

    measured = total / trials
    c_inf, nu = product_chain_constants(kernels)
    bound = 4.0 * c_inf * sigma_sq / (nu * m * k)
    holds = measured <= bound * (1.0 + 3.0 / math.sqrt(trials))
    return measured, bound, holds


# ------------------------------------------------------ constant estimation


def estimate_constants(
    objectives: SyntheticObjectives,
    chains: list[FiniteKernel],
    w_grid: np.ndarray,
    sample_budget: int = 1000,
    w0: np.ndarray | None = None,
    k: int = 1,
    t: int = 1,
    beta: float = 1.0,
    eps: float = 0.1,
    seed: int = 0,
) -> ProblemConstants:
    """Empirical surrogates for the smoothness, noise, and heterogeneity
    constants of a synthetic problem, evaluated over a parameter grid.

    L: max ratio ||grad f(w) - grad f(w')|| / ||w - w'|| over sampled pairs
    and sample indices; sigma^2: max ||grad f_m - grad F_m||^2 over states,
    noise endpoints, and grid points; (theta^2, delta^2): non-negative
    least-squares fit of the mean client gradient norm against
    [1, ||grad F||^2] with delta^2 floored at 1; delta0 relative to the
    grid minimum of F; G0 exact at w0.
    """
    w_grid = np.atleast_2d(np.asarray(w_grid, dtype=np.float64))
    if w_grid.shape[0] < 1:
        raise InvalidParameterError("w_grid must be non-empty")
    problem = objectives.problem
    n_clients = problem.n_clients
    if w0 is None:
        w0 = np.zeros(w_grid.shape[1])
    gen = substream(seed, ESTIMATE)

    # Smoothness: sampled secant ratios of per-sample gradients.
    l_hat = 0.0
    for _ in range(sample_budget):
        i, j = gen.integers(w_grid.shape[0], size=2)
        if i == j:
            continue
        wa, wb = w_grid[i], w_grid[j]
        gap = float(np.linalg.norm(wa - wb))
        if gap == 0.0:
            continue
        m_idx = int(gen.integers(n_clients))
        state = int(gen.integers(2))
        noise = float(gen.uniform(NOISE_LOW, NOISE_HIGH))
        ga = synth_sample_grad(problem, m_idx, state, noise, wa)
        gb = synth_sample_grad(problem, m_idx, state, noise, wb)
        l_hat = max(l_hat, float(np.linalg.norm(ga - gb)) / gap)

    # Noise bound over the grid.
    sigma_sq = max(_synth_sigma_sq_at(problem, wg) for wg in w_grid)

    # Heterogeneity fit: (1/M) sum ||grad F_m||^2 ~ theta^2 + delta^2 ||grad F||^2.
    mean_sq, global_sq = [], []
    for wg in w_grid:
        grads = np.stack([synth_true_grad(problem, i, wg) for i in range(n_clients)])
        mean_sq.append(float(np.mean(np.sum(grads * grads, axis=1))))
        g = grads.mean(axis=0)
        global_sq.append(float(g @ g))
    design = np.column_stack([np.ones(len(global_sq)), np.array(global_sq)])
    coef, _ = nnls(design, np.array(mean_sq))
    theta_hat = math.sqrt(coef[0])
    delta_hat = math.sqrt(max(coef[1], 1.0))

    losses = [
        float(np.mean([synth_loss(problem, i, wg) for i in range(n_clients)]))
        for wg in w_grid
    ]
    f0 = float(np.mean([synth_loss(problem, i, w0) for i in range(n_clients)]))
    delta0 = max(f0 - min(losses), 0.0)
    g0_vec = np.stack([synth_true_grad(problem, i, w0) for i in range(n_clients)])
    g0 = float(np.mean(np.sum(g0_vec * g0_vec, axis=1)))

    c_inf, nu = product_chain_constants(chains)
    return ProblemConstants(
        L=max(l_hat, 1e-12),
        sigma=math.sqrt(max(sigma_sq, 1e-24)),
        theta=theta_hat,
        delta=delta_hat,
        c_inf=c_inf,
        nu_ps=nu,
        delta0=delta0,
        g0=g0,
        m=n_clients,
        k=k,
        t=t,
        beta=beta,
        eps=eps,
    )


def replace_constants(c: ProblemConstants, **kwargs) -> ProblemConstants:
    """dataclasses.replace with validation re-run."""
    return replace(c, **kwargs)
