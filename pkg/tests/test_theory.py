"""Bound calculators, product-chain constants, and the MC verifier."""

import math

import numpy as np
import pytest

from fedmarkov.errors import InvalidParameterError, PreconditionError
from fedmarkov.markov import (
    FiniteKernel,
    c_infinity,
    pseudo_spectral_gap,
    stationary,
    two_state,
)
from fedmarkov.objectives import SyntheticObjectives, generate_synthetic
from fedmarkov.theory import (
    ProblemConstants,
    estimate_constants,
    local_sgd_bound,
    local_sgd_complexity,
    minibatch_bound,
    minibatch_complexity,
    momentum_bound,
    momentum_step_caps,
    product_chain_constants,
    replace_constants,
    verify_gradient_error_bound,
)

BASE = ProblemConstants(
    L=1.0, sigma=1.0, theta=1.0, delta=2.0, c_inf=1.4, nu_ps=0.84,
    delta0=1.0, g0=1.0, m=10, k=100, t=100, beta=0.1, eps=0.1,
)


def test_constants_validation():
    with pytest.raises(InvalidParameterError):
        replace_constants(BASE, delta=0.5)
    with pytest.raises(InvalidParameterError):
        replace_constants(BASE, nu_ps=0.0)
    with pytest.raises(InvalidParameterError):
        replace_constants(BASE, eps=0.0)


# ------------------------------------------------------------- minibatch


def test_minibatch_bound_substitution():
    # 2*1/(1*100) + 4*1.4/(0.84*10*100) = 0.02 + 0.0066667 (hand computed).
    val = minibatch_bound(BASE, gamma=1.0)
    assert val == pytest.approx(0.02 + 4.0 * 1.4 / (0.84 * 1000.0), rel=1e-12)
    assert val == pytest.approx(0.0266666666667, rel=1e-9)


def test_minibatch_bound_t_limit_and_k_halving():
    big_t = replace_constants(BASE, t=10**12)
    assert minibatch_bound(big_t, 1.0) == pytest.approx(
        4.0 * 1.4 / (0.84 * 1000.0), rel=1e-6
    )
    noise = minibatch_bound(BASE, 1.0) - 2.0 * BASE.delta0 / BASE.t
    doubled = replace_constants(BASE, k=200)
    noise2 = minibatch_bound(doubled, 1.0) - 2.0 * BASE.delta0 / BASE.t
    assert noise2 == pytest.approx(noise / 2.0, rel=1e-12)


def test_minibatch_bound_gamma_cap():
    with pytest.raises(PreconditionError):
        minibatch_bound(BASE, gamma=1.5)


def test_minibatch_complexity_substitution():
    c = replace_constants(BASE, eps=0.1)
    k_req, t_req = minibatch_complexity(c)
    assert k_req == 134  # ceil(8*1.4/(0.84*10*0.01)) = ceil(133.33)
    assert t_req == math.ceil(4.0 * 1.0 * 1.0 / 0.01)


def test_minibatch_complexity_eps_scaling():
    k1, t1 = minibatch_complexity(BASE)
    k2, t2 = minibatch_complexity(replace_constants(BASE, eps=BASE.eps / 2))
    assert k2 == pytest.approx(4 * k1, abs=4)
    assert t2 == pytest.approx(4 * t1, abs=4)


def test_minibatch_complexity_m_scaling():
    k1, _ = minibatch_complexity(BASE)
    k2, _ = minibatch_complexity(replace_constants(BASE, m=2 * BASE.m))
    assert k2 == math.ceil(k1 / 2) or abs(k2 - k1 / 2) <= 1


def test_minibatch_complexity_feeds_back_below_eps_sq():
    for eps in (0.3, 0.1, 0.03):
        c = replace_constants(BASE, eps=eps)
        k_req, t_req = minibatch_complexity(c)
        c2 = replace_constants(c, k=k_req, t=t_req)
        assert minibatch_bound(c2, gamma=1.0 / c.L) <= eps**2 * (1.0 + 1e-9)


# -------------------------------------------------------------- local SGD


def test_local_sgd_bound_formula():
    # Independent recomputation of the three-term bound.
    eta = 1.0 / (10.0 * BASE.L * BASE.delta**2) / BASE.k
    val = local_sgd_bound(BASE, eta)
    eta_tilde = eta * BASE.k
    expected = (
        98.0 / 45.0 * BASE.delta0 / (eta_tilde * BASE.t)
        + 392.0 / 45.0 * BASE.c_inf * BASE.sigma**2 / (BASE.nu_ps * BASE.m * BASE.k)
        + 40.0 / 45.0 * BASE.L * eta_tilde * (BASE.theta**2 + BASE.sigma**2) / BASE.delta**2
    )
    assert val == pytest.approx(expected, rel=1e-12)


def test_local_sgd_bound_third_term_vanishes():
    c = replace_constants(BASE, theta=0.0, delta=1.0)
    eta = 1e-9
    val = local_sgd_bound(c, eta)
    two_term = (
        98.0 / 45.0 * c.delta0 / (eta * c.k * c.t)
        + 392.0 / 45.0 * c.c_inf * c.sigma**2 / (c.nu_ps * c.m * c.k)
    )
    assert val == pytest.approx(two_term, rel=1e-6)


def test_local_sgd_bound_cap():
    with pytest.raises(PreconditionError):
        local_sgd_bound(BASE, eta=1.0)


def test_local_sgd_complexity_delta_scaling():
    # Constants chosen so the 1/(10 K L delta^2) branch is the active one
    # at both delta values; doubling delta then quarters the cap.
    c1 = replace_constants(BASE, eps=1.0, theta=0.0)
    eta_cap_1, k1, _ = local_sgd_complexity(c1)
    c2 = replace_constants(c1, delta=2.0 * c1.delta)
    eta_cap_2, k2, _ = local_sgd_complexity(c2)
    assert k2 == k1  # K does not depend on delta
    assert eta_cap_2 == pytest.approx(eta_cap_1 / 4.0, rel=1e-9)


def test_local_sgd_complexity_consistency():
    eta_cap, k_req, t_req = local_sgd_complexity(BASE)
    c2 = replace_constants(BASE, k=k_req, t=t_req)
    assert local_sgd_bound(c2, eta_cap) <= BASE.eps**2 * (1.0 + 1e-9)


# ----------------------------------------------------------------- momentum


def test_momentum_caps_branches():
    gamma = BASE.beta / (math.sqrt(60.0) * BASE.L) * 0.9
    cap = momentum_step_caps(BASE, gamma)
    assert cap > 0.0
    # T doubled halves the 1/(beta gamma L T) branch; if that branch is
    # active the cap halves.
    c2 = replace_constants(BASE, t=2 * BASE.t)
    cap2 = momentum_step_caps(c2, gamma)
    assert cap2 <= cap + 1e-15


def test_momentum_caps_beta_one_drops_branch():
    c = replace_constants(BASE, beta=1.0)
    gamma = 1.0 / (math.sqrt(60.0) * c.L) * 0.9
    assert momentum_step_caps(c, gamma) > 0.0


def test_momentum_gamma_cap_enforced():
    with pytest.raises(PreconditionError):
        momentum_step_caps(BASE, gamma=1.0)


def test_momentum_bound_formula():
    gamma = BASE.beta / (math.sqrt(60.0) * BASE.L) * 0.5
    eta = momentum_step_caps(BASE, gamma) * 0.5
    val = momentum_bound(BASE, gamma, eta)
    expected = (4.0 / 3.0) * (
        2.0 * BASE.delta0 / (gamma * BASE.t)
        + 3.5 * BASE.L * BASE.delta0 / (BASE.beta * BASE.t)
        + 31.0 * BASE.c_inf * BASE.sigma**2 / (BASE.nu_ps * BASE.m * BASE.k)
    )
    assert val == pytest.approx(expected, rel=1e-12)


def test_momentum_bound_eta_cap_enforced():
    gamma = BASE.beta / (math.sqrt(60.0) * BASE.L) * 0.5
    cap = momentum_step_caps(BASE, gamma)
    with pytest.raises(PreconditionError):
        momentum_bound(BASE, gamma, cap * 10.0)


# ---------------------------------------------------------- monotonicity


def test_bounds_monotone_in_k_and_t():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = ProblemConstants(
            L=float(rng.uniform(0.5, 5.0)),
            sigma=float(rng.uniform(0.1, 2.0)),
            theta=float(rng.uniform(0.0, 2.0)),
            delta=float(rng.uniform(1.0, 3.0)),
            c_inf=float(rng.uniform(1.0, 3.0)),
            nu_ps=float(rng.uniform(0.05, 1.0)),
            delta0=float(rng.uniform(0.1, 5.0)),
            g0=float(rng.uniform(0.0, 5.0)),
            m=int(rng.integers(1, 50)),
            k=int(rng.integers(1, 500)),
            t=int(rng.integers(1, 500)),
            beta=float(rng.uniform(0.05, 1.0)),
            eps=float(rng.uniform(0.01, 0.5)),
        )
        grown_k = replace_constants(c, k=2 * c.k)
        grown_t = replace_constants(c, t=2 * c.t)
        gamma = 1.0 / c.L
        assert minibatch_bound(grown_k, gamma) <= minibatch_bound(c, gamma) + 1e-12
        assert minibatch_bound(grown_t, gamma) <= minibatch_bound(c, gamma) + 1e-12
        # Local SGD: compare at a step size legal for both K values, with
        # eta scaled as eta~ / K so the drift term is unchanged.
        eta_tilde = 1.0 / (10.0 * c.L * c.delta**2)
        assert local_sgd_bound(grown_k, eta_tilde / grown_k.k) <= (
            local_sgd_bound(c, eta_tilde / c.k) + 1e-12
        )
        assert local_sgd_bound(grown_t, eta_tilde / c.k) <= (
            local_sgd_bound(c, eta_tilde / c.k) + 1e-12
        )
        gamma_m = c.beta / (math.sqrt(60.0) * c.L) * 0.9
        eta_m = min(momentum_step_caps(c, gamma_m), momentum_step_caps(grown_k, gamma_m))
        assert momentum_bound(grown_k, gamma_m, eta_m) <= momentum_bound(c, gamma_m, eta_m) + 1e-12


# ------------------------------------------------ product-chain constants


def kron_kernel(kernels):
    rows = kernels[0].rows
    for kern in kernels[1:]:
        rows = np.kron(rows, kern.rows)
    return FiniteKernel(rows)


@pytest.mark.parametrize("ps", [[0.3, 0.3], [0.2, 0.4], [0.3, 0.3, 0.45]])
def test_product_constants_match_explicit_kron(ps):
    kernels = [two_state(p) for p in ps]
    c_inf, nu = product_chain_constants(kernels, k_max=8)
    explicit = kron_kernel(kernels)
    assert c_inf == pytest.approx(c_infinity(explicit), rel=1e-12)
    assert nu == pytest.approx(pseudo_spectral_gap(explicit, k_max=8), rel=1e-9)


def test_product_constants_identical_clients_reduce_to_single():
    kern = two_state(0.3)
    c_inf, nu = product_chain_constants([kern] * 5, k_max=8)
    assert c_inf == pytest.approx(1.4**5, rel=1e-12)
    assert nu == pytest.approx(pseudo_spectral_gap(kern, k_max=8), rel=1e-12)


# ----------------------------------------------------------- MC verifier


def make_verifier_setup(seed, m, p, lam=0.01):
    problem = generate_synthetic(seed, m, p, lam)
    objectives = SyntheticObjectives(problem, seed=seed)
    return [two_state(p)] * m, objectives


def test_verifier_iid_case_slack():
    m, k = 5, 20
    kernels, objectives = make_verifier_setup(0, m, 0.5)
    w = np.linspace(-0.5, 0.5, 10)
    measured, bound, holds = verify_gradient_error_bound(
        kernels, objectives, w, m, k, trials=4000, seed=1
    )
    assert holds
    assert bound >= 4.0 * measured  # i.i.d. slack is at least 4x


def test_verifier_k1_m1():
    kernels, objectives = make_verifier_setup(2, 1, 0.5)
    w = np.zeros(10)
    measured, bound, holds = verify_gradient_error_bound(
        kernels, objectives, w, 1, 1, trials=4000, seed=2
    )
    assert holds
    # measured is the per-sample variance at w, dominated by its sup bound.
    assert measured <= bound


def test_verifier_scaling_in_m():
    # Measured error decays ~ 1/M: log-log slope within [-1.2, -0.8].
    # Clients are identical copies so the per-client variance is constant
    # across the sweep and the 1/M law is exact in expectation.
    from fedmarkov.objectives import SyntheticProblem

    base = generate_synthetic(3, 1, 0.3, 0.01)
    w = np.full(10, 0.3)
    ms, vals = [1, 10, 100], []
    for m in ms:
        problem = SyntheticProblem(
            seed=3, p=0.3, lam=0.01,
            v=np.repeat(base.v, m, axis=0),
            w_opt=np.repeat(base.w_opt, m, axis=0),
        )
        objectives = SyntheticObjectives(problem, seed=3)
        measured, _, _ = verify_gradient_error_bound(
            [two_state(0.3)] * m, objectives, w, m, 10, trials=4000, seed=3
        )
        vals.append(measured)
    slope = np.polyfit(np.log(ms), np.log(vals), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_verifier_input_validation():
    kernels, objectives = make_verifier_setup(4, 2, 0.3)
    with pytest.raises(InvalidParameterError):
        verify_gradient_error_bound(kernels, objectives, np.zeros(10), 2, 5, trials=0)
    with pytest.raises(InvalidParameterError):
        verify_gradient_error_bound(kernels[:1] * 3, objectives, np.zeros(10), 2, 5, trials=10)


# ------------------------------------------------------ estimate_constants


def test_estimate_constants_single_client():
    problem = generate_synthetic(5, 1, 0.3, 0.01)
    objectives = SyntheticObjectives(problem, seed=5)
    grid = np.random.default_rng(0).uniform(-1.0, 2.0, size=(40, 10))
    c = estimate_constants(objectives, [two_state(0.3)], grid, sample_budget=400)
    assert c.theta == pytest.approx(0.0, abs=1e-6)
    assert c.delta == pytest.approx(1.0, abs=1e-9)
    assert c.L > 0.0 and c.sigma > 0.0 and c.g0 > 0.0


def test_estimate_constants_identical_clients_theta_zero():
    base = generate_synthetic(6, 1, 0.3, 0.01)
    v = np.repeat(base.v, 3, axis=0)
    w_opt = np.repeat(base.w_opt, 3, axis=0)
    from fedmarkov.objectives import SyntheticProblem

    problem = SyntheticProblem(seed=6, p=0.3, lam=0.01, v=v, w_opt=w_opt)
    objectives = SyntheticObjectives(problem, seed=6)
    grid = np.random.default_rng(1).uniform(-1.0, 2.0, size=(30, 10))
    c = estimate_constants(objectives, [two_state(0.3)] * 3, grid, sample_budget=200)
    assert c.theta == pytest.approx(0.0, abs=1e-6)


def test_estimate_constants_heterogeneous_theta_positive():
    problem = generate_synthetic(7, 6, 0.3, 0.01)
    objectives = SyntheticObjectives(problem, seed=7)
    grid = np.random.default_rng(2).uniform(-1.0, 2.0, size=(40, 10))
    c = estimate_constants(objectives, [two_state(0.3)] * 6, grid, sample_budget=200)
    assert c.theta > 0.0
    assert c.delta >= 1.0


def test_estimate_constants_empty_grid():
    problem = generate_synthetic(8, 2, 0.3, 0.01)
    objectives = SyntheticObjectives(problem, seed=8)
    with pytest.raises(InvalidParameterError):
        estimate_constants(objectives, [two_state(0.3)] * 2, np.empty((0, 10)))
