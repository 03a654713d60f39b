"""Federated optimization rounds: Minibatch SGD, Local SGD, Local SGD with
momentum, and SCAFFOLD.

All four runners share the same round skeleton: record the metric at the
global model, draw exactly K samples per client, run the local phase on a
per-client displacement matrix, then apply the server update from the
average displacement. Aggregation is a plain sum in ascending client order
and local phases are evaluated on (M, d) arrays, so a run is bit-identical
regardless of how clients would be scheduled in parallel.

Working with displacements (w_local - w_global) rather than local iterates
also makes the textbook equivalences exact in floating point: Local SGD
with K = 1 reproduces Minibatch SGD with the same step size bit for bit,
Local SGD-M with beta = 1 and gamma = eta * K reproduces Local SGD, and
SCAFFOLD's first round (all control variates zero) reproduces Local SGD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _phases
from .errors import DivergenceError, InvalidParameterError
from .markov import StreamCursor
from .rng import OUTPUT, substream

ALGORITHMS = ("minibatch", "local_sgd", "local_sgd_m", "scaffold")
DIVERGENCE_CAP = 1e12


@dataclass(frozen=True)
class FedConfig:
    """Hyperparameters of one run."""

    algorithm: str
    m: int
    k: int
    t: int
    gamma: float
    eta: float
    beta: float
    lam: float
    seed: int
    w0: np.ndarray | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidParameterError(
                f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}"
            )
        if min(self.m, self.k, self.t) < 1:
            raise InvalidParameterError("M, K, T must all be >= 1")
        # Zero steps are legal where no update divides by them; the runners
        # that renormalize by eta (momentum, SCAFFOLD) reject eta = 0.
        if self.gamma < 0.0 or self.eta < 0.0:
            raise InvalidParameterError("gamma and eta must be >= 0")
        if not (0.0 < self.beta <= 1.0):
            raise InvalidParameterError("beta must be in (0, 1]")


@dataclass(frozen=True)
class RoundRecord:
    """Metrics at the global model at the start of round t."""

    t: int
    grad_norm_sq: float
    train_loss: float


@dataclass(frozen=True)
class TrajectoryResult:
    """Per-round records plus the final and uniformly drawn output iterates."""

    records: list[RoundRecord]
    final_iterate: np.ndarray
    output_iterate: np.ndarray
    output_index: int


def select_output(t: int, seed: int) -> int:
    """Uniform index in [0, T) from a dedicated substream."""
    if t < 1:
        raise InvalidParameterError("T must be >= 1")
    return int(substream(seed, OUTPUT).integers(t))


def _mean_over_clients(values: np.ndarray) -> np.ndarray:
    """Plain summation in ascending client index order, then divide by M."""
    acc = np.zeros(values.shape[1], dtype=np.float64)
    for m in range(values.shape[0]):
        acc += values[m]
    return acc / values.shape[0]


def _check_finite(w: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_CAP:
        raise DivergenceError(f"iterate diverged at round {t}", round_index=t)


def _initial_model(config: FedConfig, dim: int) -> np.ndarray:
    if config.w0 is None:
        return np.zeros(dim)
    w0 = np.asarray(config.w0, dtype=np.float64)
    if w0.shape != (dim,):
        raise InvalidParameterError(f"w0 must have shape ({dim},)")
    return w0.copy()


def _round_arrays(objectives, samples):
    """Gathered (x, y) arrays for the jitted phases, or None."""
    getter = getattr(objectives, "round_arrays", None)
    return getter(samples) if getter is not None else None


def _record(objectives, w: np.ndarray, t: int) -> RoundRecord:
    g = _mean_over_clients(objectives.client_full_grads(w))
    return RoundRecord(
        t=t, grad_norm_sq=float(g @ g), train_loss=objectives.global_loss(w)
    )


def _finish(
    config: FedConfig,
    records: list[RoundRecord],
    iterates: list[np.ndarray],
    w: np.ndarray,
) -> TrajectoryResult:
    idx = select_output(config.t, config.seed)
    return TrajectoryResult(
        records=records,
        final_iterate=w,
        output_iterate=iterates[idx],
        output_index=idx,
    )


def run_minibatch_sgd(
    config: FedConfig, objectives, streams: list[StreamCursor] | None
) -> TrajectoryResult:
    """Every client averages K gradients at the frozen global model; the
    server steps along the client average with step size gamma."""
    w = _initial_model(config, objectives.dim)
    records, iterates = [], []
    for t in range(config.t):
        records.append(_record(objectives, w, t))
        iterates.append(w.copy())
        samples = objectives.draw_round(streams, config.k)
        arrays = _round_arrays(objectives, samples)
        if arrays is not None:
            deltas = _phases.minibatch_phase(*arrays, w, config.gamma, config.lam)
        else:
            frozen = w + np.zeros((config.m, objectives.dim))
            acc = np.zeros((config.m, objectives.dim))
            for k in range(config.k):
                acc += objectives.sample_grads(frozen, samples, k)
            deltas = -config.gamma * (acc / config.k)
        w = w + _mean_over_clients(deltas)
        _check_finite(w, t)
    return _finish(config, records, iterates, w)


def run_local_sgd(
    config: FedConfig, objectives, streams: list[StreamCursor] | None
) -> TrajectoryResult:
    """K local gradient steps per client from the global model; the server
    averages the resulting iterates (equivalently, the displacements)."""
    w = _initial_model(config, objectives.dim)
    records, iterates = [], []
    for t in range(config.t):
        records.append(_record(objectives, w, t))
        iterates.append(w.copy())
        samples = objectives.draw_round(streams, config.k)
        arrays = _round_arrays(objectives, samples)
        if arrays is not None:
            disp = _phases.local_phase(*arrays, w, config.eta, config.lam)
        else:
            disp = np.zeros((config.m, objectives.dim))
            for k in range(config.k):
                grads = objectives.sample_grads(w + disp, samples, k)
                disp -= config.eta * grads
        w = w + _mean_over_clients(disp)
        _check_finite(w, t)
    return _finish(config, records, iterates, w)


def run_local_sgd_momentum(
    config: FedConfig, objectives, streams: list[StreamCursor] | None
) -> TrajectoryResult:
    """Local directions blend the fresh gradient (weight beta) with the
    previous round's aggregated direction; the server re-normalizes the
    average displacement by eta * K and steps with gamma.

    v_0 = 0. The server step is computed as (gamma / (eta K)) times the
    average displacement, which is algebraically gamma * v_{t+1} but keeps
    the beta = 1, gamma = eta K case bit-identical to Local SGD.
    """
    if config.eta == 0.0:
        raise InvalidParameterError("local_sgd_m requires eta > 0 (aggregation divides by eta)")
    w = _initial_model(config, objectives.dim)
    v = np.zeros(objectives.dim)
    scale = config.gamma / (config.eta * config.k)
    records, iterates = [], []
    for t in range(config.t):
        records.append(_record(objectives, w, t))
        iterates.append(w.copy())
        samples = objectives.draw_round(streams, config.k)
        arrays = _round_arrays(objectives, samples)
        if arrays is not None:
            disp = _phases.momentum_phase(
                *arrays, w, v, config.eta, config.beta, config.lam
            )
        else:
            disp = np.zeros((config.m, objectives.dim))
            for k in range(config.k):
                grads = objectives.sample_grads(w + disp, samples, k)
                v_local = config.beta * grads + (1.0 - config.beta) * v
                disp -= config.eta * v_local
        mean_disp = _mean_over_clients(disp)
        v = -mean_disp / (config.eta * config.k)
        w = w + scale * mean_disp
        _check_finite(w, t)
    return _finish(config, records, iterates, w)


def run_scaffold(
    config: FedConfig, objectives, streams: list[StreamCursor] | None
) -> TrajectoryResult:
    """Full-participation SCAFFOLD with option-II control variates and unit
    server step: local gradients are corrected by (c - c_m), and each
    client's control variate is refreshed from its average local step."""
    if config.eta == 0.0:
        raise InvalidParameterError("scaffold requires eta > 0 (control variates divide by eta)")
    w = _initial_model(config, objectives.dim)
    c_server = np.zeros(objectives.dim)
    c_client = np.zeros((config.m, objectives.dim))
    records, iterates = [], []
    for t in range(config.t):
        records.append(_record(objectives, w, t))
        iterates.append(w.copy())
        samples = objectives.draw_round(streams, config.k)
        arrays = _round_arrays(objectives, samples)
        if arrays is not None:
            disp = _phases.scaffold_phase(
                *arrays, w, c_client, c_server, config.eta, config.lam
            )
        else:
            disp = np.zeros((config.m, objectives.dim))
            for k in range(config.k):
                grads = objectives.sample_grads(w + disp, samples, k)
                disp -= config.eta * (grads - c_client + c_server)
        c_next = c_client - c_server + (-disp) / (config.k * config.eta)
        w = w + 1.0 * _mean_over_clients(disp)
        c_server = c_server + _mean_over_clients(c_next - c_client)
        c_client = c_next
        _check_finite(w, t)
    return _finish(config, records, iterates, w)


_RUNNERS = {
    "minibatch": run_minibatch_sgd,
    "local_sgd": run_local_sgd,
    "local_sgd_m": run_local_sgd_momentum,
    "scaffold": run_scaffold,
}


def run(config: FedConfig, objectives, streams: list[StreamCursor] | None) -> TrajectoryResult:
    """Dispatch to the runner named by config.algorithm."""
    return _RUNNERS[config.algorithm](config, objectives, streams)


TRAJECTORY_COLUMNS = ["seed", "algorithm", "M", "K", "t", "grad_norm_sq", "train_loss"]


def trajectory_rows(config: FedConfig, result: TrajectoryResult) -> list[dict]:
    """One CSV row per round: seed, algorithm, M, K, t, grad_norm_sq, train_loss."""
    return [
        {
            "seed": config.seed,
            "algorithm": config.algorithm,
            "M": config.m,
            "K": config.k,
            "t": rec.t,
            "grad_norm_sq": rec.grad_norm_sq,
            "train_loss": rec.train_loss,
        }
        for rec in result.records
    ]
