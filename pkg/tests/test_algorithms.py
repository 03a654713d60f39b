"""Runner tests: equivalence identities, budgets, determinism, metrics."""

import dataclasses

import numpy as np
import pytest
from scipy import stats

from conftest import (
    QuadraticObjectives,
    make_duplicate_client_regression,
    make_synthetic_setup,
)
from fedmarkov.algorithms import (
    FedConfig,
    run,
    run_local_sgd,
    run_local_sgd_momentum,
    run_minibatch_sgd,
    run_scaffold,
    select_output,
    trajectory_rows,
)
from fedmarkov.errors import DivergenceError, InvalidParameterError
from fedmarkov.markov import StreamCursor, sample_stream, two_state
from fedmarkov.objectives import SyntheticObjectives, generate_synthetic, synth_true_grad
from fedmarkov.rng import NOISE, substream


def results_equal(a, b) -> bool:
    if len(a.records) != len(b.records):
        return False
    for ra, rb in zip(a.records, b.records):
        if (ra.t, ra.grad_norm_sq, ra.train_loss) != (rb.t, rb.grad_norm_sq, rb.train_loss):
            return False
    return (
        np.array_equal(a.final_iterate, b.final_iterate)
        and np.array_equal(a.output_iterate, b.output_iterate)
        and a.output_index == b.output_index
    )


# ------------------------------------------------------------- validation


def test_config_validation():
    good = dict(m=2, k=2, t=2, gamma=0.1, eta=0.1, beta=0.5, lam=0.0, seed=0)
    with pytest.raises(InvalidParameterError):
        FedConfig(algorithm="sgd", **good)
    with pytest.raises(InvalidParameterError):
        FedConfig(algorithm="minibatch", **{**good, "m": 0})
    with pytest.raises(InvalidParameterError):
        FedConfig(algorithm="minibatch", **{**good, "gamma": -0.1})
    with pytest.raises(InvalidParameterError):
        FedConfig(algorithm="local_sgd_m", **{**good, "beta": 0.0})


def test_eta_zero_rejected_where_division_occurs():
    for algorithm in ("local_sgd_m", "scaffold"):
        config, objectives, streams = make_synthetic_setup(0, algorithm)
        config = dataclasses.replace(config, eta=0.0)
        with pytest.raises(InvalidParameterError):
            run(config, objectives, streams)


# -------------------------------------------------------------- zero steps


def test_minibatch_zero_gamma_keeps_w0():
    config, objectives, streams = make_synthetic_setup(1, "minibatch", t=1)
    config = dataclasses.replace(config, gamma=0.0)
    result = run_minibatch_sgd(config, objectives, streams)
    assert np.array_equal(result.final_iterate, np.zeros(10))


def test_local_sgd_zero_eta_keeps_w0():
    config, objectives, streams = make_synthetic_setup(1, "local_sgd", t=4)
    config = dataclasses.replace(config, eta=0.0)
    result = run_local_sgd(config, objectives, streams)
    assert np.array_equal(result.final_iterate, np.zeros(10))
    assert np.array_equal(result.output_iterate, np.zeros(10))


# ------------------------------------------------------------ equivalences


def test_local_sgd_k1_equals_minibatch():
    eta = 0.02
    c1, o1, s1 = make_synthetic_setup(3, "local_sgd", k=1, t=8, eta=eta)
    c2, o2, s2 = make_synthetic_setup(3, "minibatch", k=1, t=8, gamma=eta)
    r1 = run_local_sgd(c1, o1, s1)
    r2 = run_minibatch_sgd(c2, o2, s2)
    assert results_equal(r1, r2)


def test_momentum_beta1_equals_local_sgd():
    eta, k = 0.02, 3
    c1, o1, s1 = make_synthetic_setup(4, "local_sgd_m", k=k, t=8, eta=eta, beta=1.0, gamma=eta * k)
    c2, o2, s2 = make_synthetic_setup(4, "local_sgd", k=k, t=8, eta=eta)
    r1 = run_local_sgd_momentum(c1, o1, s1)
    r2 = run_local_sgd(c2, o2, s2)
    assert results_equal(r1, r2)


def test_momentum_beta1_k1_equals_minibatch():
    eta = 0.02
    c1, o1, s1 = make_synthetic_setup(5, "local_sgd_m", k=1, t=8, eta=eta, beta=1.0, gamma=eta)
    c2, o2, s2 = make_synthetic_setup(5, "minibatch", k=1, t=8, gamma=eta)
    r1 = run_local_sgd_momentum(c1, o1, s1)
    r2 = run_minibatch_sgd(c2, o2, s2)
    assert results_equal(r1, r2)


def test_scaffold_round0_equals_local_sgd_round0():
    c1, o1, s1 = make_synthetic_setup(6, "scaffold", t=1)
    c2, o2, s2 = make_synthetic_setup(6, "local_sgd", t=1)
    r1 = run_scaffold(c1, o1, s1)
    r2 = run_local_sgd(c2, o2, s2)
    assert results_equal(r1, r2)


class _ReferencePathObjectives:
    """Hide round_arrays so runners take the pure-numpy reference loop."""

    def __init__(self, inner):
        self._inner = inner
        self.dim = inner.dim
        self.n_clients = inner.n_clients
        self.lam = inner.lam

    def draw_round(self, streams, k):
        return self._inner.draw_round(streams, k)

    def sample_grads(self, w_locals, samples, k):
        return self._inner.sample_grads(w_locals, samples, k)

    def client_full_grads(self, w):
        return self._inner.client_full_grads(w)

    def global_loss(self, w):
        return self._inner.global_loss(w)


def test_m1_k1_iid_reduces_to_centralized_sgd():
    seed, t, gamma = 7, 12, 0.03
    config, objectives, streams = make_synthetic_setup(
        seed, "minibatch", m=1, k=1, t=t, gamma=gamma, p=0.5
    )
    result = run_minibatch_sgd(config, _ReferencePathObjectives(objectives), streams)

    # Reference single-loop SGD on the same substreams.
    problem = generate_synthetic(seed, 1, 0.5, 0.01)
    ref_objs = SyntheticObjectives(problem, seed=seed)
    cursor = StreamCursor(problem.kernel(), state=0, seed=seed, client_id=0)
    w = np.zeros((1, 10))
    for _ in range(t):
        samples = ref_objs.draw_round([cursor], 1)
        g = ref_objs.sample_grads(w + np.zeros((1, 10)), samples, 0)
        w = w + (-gamma * g)
    assert np.array_equal(result.final_iterate, w[0])


@pytest.mark.parametrize("algorithm", ["minibatch", "local_sgd", "local_sgd_m", "scaffold"])
def test_jitted_phase_matches_numpy_reference(algorithm):
    # The compiled local phases must agree with the numpy loops to fp noise.
    config, objectives, streams = make_synthetic_setup(14, algorithm, m=3, k=5, t=4)
    fast = run(config, objectives, streams)
    config2, objectives2, streams2 = make_synthetic_setup(14, algorithm, m=3, k=5, t=4)
    slow = run(config2, _ReferencePathObjectives(objectives2), streams2)
    assert np.allclose(fast.final_iterate, slow.final_iterate, rtol=1e-12, atol=1e-14)
    for ra, rb in zip(fast.records, slow.records):
        assert ra.grad_norm_sq == pytest.approx(rb.grad_norm_sq, rel=1e-10, abs=1e-14)


def test_monotone_descent_on_noiseless_quadratic(quadratic_objectives):
    # L = 2, gamma = 1/L: F(w_{t+1}) <= F(w_t) every round.
    config = FedConfig(
        algorithm="minibatch", m=3, k=2, t=25,
        gamma=0.5, eta=0.0, beta=1.0, lam=0.0, seed=0,
    )
    result = run_minibatch_sgd(config, quadratic_objectives, None)
    losses = [r.train_loss for r in result.records]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_duplicate_clients_average_equals_each():
    objectives = make_duplicate_client_regression(n_clients=2)
    config = FedConfig(
        algorithm="local_sgd", m=2, k=4, t=6,
        gamma=0.1, eta=0.05, beta=1.0, lam=0.01, seed=2,
    )
    result = run_local_sgd(config, objectives, None)
    single = make_duplicate_client_regression(n_clients=1)
    config1 = dataclasses.replace(config, m=1)
    result1 = run_local_sgd(config1, single, None)
    assert np.allclose(result.final_iterate, result1.final_iterate, rtol=0, atol=1e-14)


def test_scaffold_control_variates_stay_equal_for_identical_clients():
    objectives = make_duplicate_client_regression(n_clients=3)
    config = FedConfig(
        algorithm="scaffold", m=3, k=4, t=5,
        gamma=0.1, eta=0.05, beta=1.0, lam=0.01, seed=3,
    )
    # Identical clients stay identical, so SCAFFOLD must match plain Local
    # SGD for every round (corrections cancel: c_m == c for all m).
    r_scaffold = run_scaffold(config, objectives, None)
    r_local = run_local_sgd(
        dataclasses.replace(config, algorithm="local_sgd"),
        make_duplicate_client_regression(n_clients=3),
        None,
    )
    assert np.allclose(
        r_scaffold.final_iterate, r_local.final_iterate, rtol=0, atol=1e-12
    )


# ------------------------------------------------------------ select_output


def test_select_output_t1():
    assert select_output(1, seed=123) == 0


def test_select_output_deterministic():
    assert select_output(10, seed=5) == select_output(10, seed=5)


def test_select_output_uniform():
    counts = np.bincount(
        [select_output(10, seed=s) for s in range(20_000)], minlength=10
    )
    assert stats.chisquare(counts).pvalue > 0.01


# ------------------------------------------------- budget and determinism


@pytest.mark.parametrize("algorithm", ["minibatch", "local_sgd", "local_sgd_m", "scaffold"])
def test_sample_budget(algorithm):
    config, objectives, streams = make_synthetic_setup(8, algorithm, k=5, t=7)
    run(config, objectives, streams)
    assert all(cur.counter == 5 * 7 for cur in streams)


@pytest.mark.parametrize("algorithm", ["minibatch", "local_sgd", "local_sgd_m", "scaffold"])
def test_bit_identical_reruns(algorithm):
    r1 = run(*make_synthetic_setup(9, algorithm))
    r2 = run(*make_synthetic_setup(9, algorithm))
    assert results_equal(r1, r2)


def test_divergence_error_carries_round():
    config, objectives, streams = make_synthetic_setup(
        10, "local_sgd", eta=1e6, t=50
    )
    with pytest.raises(DivergenceError) as err:
        run_local_sgd(config, objectives, streams)
    assert 0 <= err.value.round_index < 50


# ------------------------------------------------------- metric correctness


def test_recorded_metric_matches_posthoc_true_gradient():
    seed = 11
    config, objectives, streams = make_synthetic_setup(seed, "local_sgd_m", t=6)
    result = run(config, objectives, streams)
    problem = generate_synthetic(seed, config.m, 0.3, config.lam)

    # At t = 0 the global model is w0 = 0.
    g0 = np.mean([synth_true_grad(problem, m, np.zeros(10)) for m in range(config.m)], axis=0)
    assert result.records[0].grad_norm_sq == pytest.approx(float(g0 @ g0), rel=1e-12)

    # The output iterate is w_{output_index}; recompute independently.
    idx = result.output_index
    w = result.output_iterate
    g = np.mean([synth_true_grad(problem, m, w) for m in range(config.m)], axis=0)
    assert result.records[idx].grad_norm_sq == pytest.approx(float(g @ g), rel=1e-12)


def test_momentum_aggregate_telescopes_to_mean_local_direction():
    # v_{t+1} must equal the average of all local directions v^{(m, k)}.
    seed, m, k, eta, beta, gamma = 12, 3, 4, 0.02, 0.4, 0.05
    config, objectives, streams = make_synthetic_setup(
        seed, "local_sgd_m", m=m, k=k, t=1, eta=eta, beta=beta, gamma=gamma
    )
    result = run(config, objectives, streams)

    # Replay the round by hand on the same substreams.
    problem = generate_synthetic(seed, m, 0.3, config.lam)
    objs = SyntheticObjectives(problem, seed=seed)
    cursors = [
        StreamCursor(problem.kernel(), state=0, seed=seed, client_id=i)
        for i in range(m)
    ]
    samples = objs.draw_round(cursors, k)
    w = np.zeros((m, 10))
    disp = np.zeros((m, 10))
    v_locals = []
    for j in range(k):
        g = objs.sample_grads(w + disp, samples, j)
        v_loc = beta * g + (1.0 - beta) * np.zeros(10)
        v_locals.append(v_loc)
        disp -= eta * v_loc
    v_mean = np.mean(np.stack(v_locals), axis=(0, 1))
    # v_1 from the server update: w_1 = w_0 + (gamma / (eta K)) * mean_disp.
    mean_disp = (result.final_iterate - np.zeros(10)) / (gamma / (eta * k))
    v1 = -mean_disp / (eta * k)
    assert np.allclose(v1, v_mean, atol=1e-10)


def test_trajectory_rows_schema():
    config, objectives, streams = make_synthetic_setup(13, "minibatch", t=3)
    result = run(config, objectives, streams)
    rows = trajectory_rows(config, result)
    assert len(rows) == 3
    assert list(rows[0].keys()) == ["seed", "algorithm", "M", "K", "t", "grad_norm_sq", "train_loss"]
    assert [r["t"] for r in rows] == [0, 1, 2]


# ------------------------------------------------------------- trend check


@pytest.mark.slow
def test_iid_speedup_direction_in_m():
    # With i.i.d. sampling (p = 0.5), more clients does not hurt: the mean
    # final grad_norm_sq over 10 seeds is non-increasing from M=10 to M=100.
    def mean_final(m):
        finals = []
        for seed in range(10):
            config, objectives, streams = make_synthetic_setup(
                seed, "minibatch", m=m, k=20, t=30, gamma=0.01, p=0.5
            )
            result = run(config, objectives, streams)
            finals.append(result.records[-1].grad_norm_sq)
        return float(np.mean(finals))

    assert mean_final(100) <= mean_final(10) * 1.05
