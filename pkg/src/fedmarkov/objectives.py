"""Per-client losses, analytic gradients, and problem generators.

Two problem families share the same smooth non-convex regularizer
r(w) = (1/2) sum_i w_i^2 / (1 + w_i^2):

- the synthetic family: per client m and chain state i, a squared-error
  observation model obs = w_opt[m,i]^T V[m,i] + eps with eps ~ U(0, 0.01),
  whose stationary population objective is the two-term quadratic plus
  lambda * r(w);
- the regression family: linear prediction of the normalized PM2.5 target
  from 9 normalized covariates, squared error plus lambda * r(w).

Scalar operations here are the reference contracts; the *Objectives
classes add the vectorized per-round hooks the optimization runners
consume (gradients for all clients at once).

All evaluations are pure functions of their inputs and safe to run
concurrently across clients; the per-run objective sets own only their
noise substreams (synthetic) or window positions (regression).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError
from .markov import FiniteKernel, StreamCursor, sample_stream, two_state
from .rng import NOISE, PROBLEM, substream

SYNTH_DIM = 10
REGRESSION_DIM = 9
NOISE_LOW = 0.0
NOISE_HIGH = 0.01


# ------------------------------------------------------------- regularizer


def reg_value(w: np.ndarray) -> float:
    """r(w) = (1/2) sum_i w_i^2 / (1 + w_i^2), bounded by d/2."""
    w = np.asarray(w, dtype=np.float64)
    sq = w * w
    return 0.5 * float(np.sum(sq / (1.0 + sq)))


def reg_grad(w: np.ndarray) -> np.ndarray:
    """Gradient of r: component i is w_i / (1 + w_i^2)^2."""
    w = np.asarray(w, dtype=np.float64)
    denom = 1.0 + w * w
    return w / (denom * denom)


# --------------------------------------------------------- synthetic family


@dataclass(frozen=True)
class SyntheticProblem:
    """Quadratic-plus-regularizer objectives driven by two-state chains.

    v[m, i] holds the direction vector of client m in chain state i;
    w_opt[m, i] the corresponding optimal parameters (first half of the
    coordinates share one U(0,1) draw per state, the rest one U(1,2) draw).
    """

    seed: int
    p: float
    lam: float
    v: np.ndarray  # (M, 2, SYNTH_DIM)
    w_opt: np.ndarray  # (M, 2, SYNTH_DIM)

    def __post_init__(self):
        for name in ("v", "w_opt"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 3 or arr.shape[1] != 2 or arr.shape[2] != SYNTH_DIM:
                raise ShapeError(f"{name} must have shape (M, 2, {SYNTH_DIM})")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.v.shape[0] != self.w_opt.shape[0]:
            raise ShapeError("v and w_opt must agree on the client count")

    @property
    def n_clients(self) -> int:
        return self.v.shape[0]

    def kernel(self) -> FiniteKernel:
        return two_state(self.p)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "p": self.p,
                "lambda": self.lam,
                "v": self.v.tolist(),
                "w_opt": self.w_opt.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str) -> "SyntheticProblem":
        doc = json.loads(text)
        return SyntheticProblem(
            seed=doc["seed"],
            p=doc["p"],
            lam=doc["lambda"],
            v=np.array(doc["v"]),
            w_opt=np.array(doc["w_opt"]),
        )


def generate_synthetic(seed: int, m: int, p: float, lam: float) -> SyntheticProblem:
    """Draw a synthetic problem instance, deterministically per seed.

    V[m, i] ~ U(0, 1)^10 per client and state; per state i two shared
    scalars w_i^1 ~ U(0, 1) and w_i^2 ~ U(1, 2) fill each client's
    w_opt[m, i], with the half of the coordinates carrying w_i^1 drawn
    uniformly per (client, state). The per-client splits are what make the
    client optima heterogeneous (a common split would give every client
    the same optimum and no drift). Draw order: V, then per-state scalars,
    then the per-(client, state) coordinate subsets; everything comes from
    a dedicated substream, so the same seed yields the same problem under
    every algorithm.
    """
    if m < 1:
        raise InvalidParameterError("client count must be >= 1")
    if not (0.0 < p < 1.0):
        raise InvalidParameterError("flip probability must be in (0, 1)")
    gen = substream(seed, PROBLEM)
    v = gen.random((m, 2, SYNTH_DIM))
    half = (SYNTH_DIM + 1) // 2
    w_opt = np.empty((m, 2, SYNTH_DIM))
    for state in range(2):
        low = gen.uniform(0.0, 1.0)
        high = gen.uniform(1.0, 2.0)
        for client in range(m):
            low_coords = gen.permutation(SYNTH_DIM)[:half]
            w_opt[client, state, :] = high
            w_opt[client, state, low_coords] = low
    return SyntheticProblem(seed=seed, p=p, lam=lam, v=v, w_opt=w_opt)


def synth_observation(problem: SyntheticProblem, m: int, state: int, noise: float) -> float:
    """obs = w_opt[m, state]^T V[m, state] + noise."""
    return float(problem.w_opt[m, state] @ problem.v[m, state]) + noise


def synth_sample_grad(
    problem: SyntheticProblem, m: int, state: int, noise: float, w: np.ndarray
) -> np.ndarray:
    """Gradient of the per-sample loss (w^T V - obs)^2 + lambda r(w)."""
    if state not in (0, 1):
        raise InvalidParameterError("state must be 0 or 1")
    v = problem.v[m, state]
    obs = synth_observation(problem, m, state, noise)
    residual = float(w @ v) - obs
    return 2.0 * residual * v + problem.lam * reg_grad(w)


def synth_true_grad(problem: SyntheticProblem, m: int, w: np.ndarray) -> np.ndarray:
    """Gradient of the noiseless population objective of client m.

    F_m(w) = (1/2)[(w - w_opt[m,0])^T V[m,0]]^2
           + (1/2)[(w - w_opt[m,1])^T V[m,1]]^2 + lambda r(w).
    """
    out = problem.lam * reg_grad(w)
    for state in range(2):
        v = problem.v[m, state]
        out = out + float((w - problem.w_opt[m, state]) @ v) * v
    return out


def synth_loss(problem: SyntheticProblem, m: int, w: np.ndarray) -> float:
    """Value of the noiseless population objective of client m."""
    total = problem.lam * reg_value(w)
    for state in range(2):
        proj = float((w - problem.w_opt[m, state]) @ problem.v[m, state])
        total += 0.5 * proj * proj
    return total


def synth_stationary_grad(problem: SyntheticProblem, m: int, w: np.ndarray) -> np.ndarray:
    """Stationary expectation of the sample gradient, noise mean included.

    Under pi = (1/2, 1/2) and eps ~ U(0, 0.01) the expected sample gradient
    is the population gradient shifted by the 0.005 noise mean; this is the
    target the gradient-error verifier compares against.
    """
    mean_noise = 0.5 * (NOISE_LOW + NOISE_HIGH)
    out = problem.lam * reg_grad(w)
    for state in range(2):
        v = problem.v[m, state]
        residual = float((w - problem.w_opt[m, state]) @ v) - mean_noise
        out = out + residual * v
    return out


# -------------------------------------------------------- regression family


@dataclass(frozen=True)
class RegressionSample:
    """One normalized observation: 9 covariates and the PM2.5 target."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("x must be a vector")
        if not (np.all(np.isfinite(x)) and np.isfinite(self.y)):
            raise InvalidParameterError("sample entries must be finite")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


def regression_value(w: np.ndarray, sample: RegressionSample, lam: float) -> float:
    """f(w; (x, y)) = (w^T x - y)^2 + lambda r(w)."""
    if w.shape != sample.x.shape:
        raise ShapeError(f"dimension mismatch: w {w.shape} vs x {sample.x.shape}")
    residual = float(w @ sample.x) - sample.y
    return residual * residual + lam * reg_value(w)


def regression_sample_grad(
    w: np.ndarray, sample: RegressionSample, lam: float
) -> np.ndarray:
    """Gradient 2 (w^T x - y) x + lambda grad r(w)."""
    if w.shape != sample.x.shape:
        raise ShapeError(f"dimension mismatch: w {w.shape} vs x {sample.x.shape}")
    residual = float(w @ sample.x) - sample.y
    return 2.0 * residual * sample.x + lam * reg_grad(w)


# ------------------------------------------------- vectorized runner hooks


class SyntheticObjectives:
    """Vectorized per-round evaluation of a SyntheticProblem.

    Owns the per-client observation-noise substreams (independent of the
    chain streams, so chain cursors count exactly the Markov samples).
    A fresh instance is built per run.
    """

    kind = "synthetic"

    def __init__(self, problem: SyntheticProblem, seed: int):
        self.problem = problem
        self.dim = SYNTH_DIM
        self.n_clients = problem.n_clients
        self.lam = problem.lam
        self._noise_gens = [
            substream(seed, NOISE, m) for m in range(problem.n_clients)
        ]
        # obs_base[m, i] = w_opt[m, i]^T V[m, i]
        self._obs_base = np.einsum("msd,msd->ms", problem.w_opt, problem.v)

    def draw_round(self, streams: list[StreamCursor], k: int):
        """K chain states and noise draws per client, with the per-sample
        direction vectors and observations gathered once for the round."""
        states = np.stack([sample_stream(cur, k) for cur in streams])
        noise = np.stack(
            [g.uniform(NOISE_LOW, NOISE_HIGH, size=k) for g in self._noise_gens]
        )
        idx = np.arange(self.n_clients)[:, None]
        return {
            "states": states,
            "v": self.problem.v[idx, states],  # (M, K, d)
            "obs": self._obs_base[idx, states] + noise,  # (M, K)
            "noise": noise,
        }

    def round_arrays(self, samples):
        """(x, y) arrays for the jitted squared-error phases."""
        return samples["v"], samples["obs"]

    def sample_grads(self, w_locals: np.ndarray, samples, k: int) -> np.ndarray:
        """Per-client gradients at per-client iterates for sample index k."""
        v = samples["v"][:, k, :]
        residual = np.einsum("md,md->m", w_locals, v) - samples["obs"][:, k]
        denom = 1.0 + w_locals * w_locals
        return 2.0 * residual[:, None] * v + self.lam * (w_locals / (denom * denom))

    def client_full_grads(self, w: np.ndarray) -> np.ndarray:
        """Population (noiseless) gradient per client at the global model."""
        proj = np.einsum("msd,d->ms", self.problem.v, w) - self._obs_base  # (M, 2)
        grads = np.einsum("ms,msd->md", proj, self.problem.v)
        return grads + self.lam * reg_grad(w)[None, :]

    def global_loss(self, w: np.ndarray) -> float:
        proj = np.einsum("msd,d->ms", self.problem.v, w) - self._obs_base
        return float(np.mean(0.5 * np.sum(proj * proj, axis=1))) + self.lam * reg_value(w)


class RegressionObjectives:
    """Vectorized per-round evaluation over per-client data windows.

    Each client consumes its window sequentially, K rows per round,
    wrapping to the window start when exhausted. Full-batch gradients and
    losses reduce to precomputed per-client Gram forms, so the per-round
    metric is O(M d^2).
    """

    kind = "regression"

    def __init__(self, windows_x: list[np.ndarray], windows_y: list[np.ndarray], lam: float):
        if not windows_x or len(windows_x) != len(windows_y):
            raise ShapeError("one (x, y) window pair per client is required")
        self.dim = windows_x[0].shape[1]
        self.n_clients = len(windows_x)
        self.lam = lam
        self._x = [np.ascontiguousarray(x, dtype=np.float64) for x in windows_x]
        self._y = [np.ascontiguousarray(y, dtype=np.float64) for y in windows_y]
        for x, y in zip(self._x, self._y):
            if x.ndim != 2 or x.shape[1] != self.dim or x.shape[0] != y.shape[0]:
                raise ShapeError("window shapes are inconsistent")
            if x.shape[0] < 1:
                raise InvalidParameterError("client windows must be non-empty")
        self._pos = np.zeros(self.n_clients, dtype=np.int64)
        # Gram forms for full-batch metrics: grad_m(w) = a_m w - b_m + lam r'(w).
        self._a = np.stack([2.0 * x.T @ x / x.shape[0] for x in self._x])
        self._b = np.stack([2.0 * x.T @ y / x.shape[0] for x, y in zip(self._x, self._y)])
        self._ysq = np.array([float(y @ y) / y.shape[0] for y in self._y])

    def draw_round(self, streams, k: int):
        """The round's rows per client, gathered once; advances positions."""
        x_sel = np.empty((self.n_clients, k, self.dim))
        y_sel = np.empty((self.n_clients, k))
        for m in range(self.n_clients):
            n = self._x[m].shape[0]
            rows = (self._pos[m] + np.arange(k)) % n
            x_sel[m] = self._x[m][rows]
            y_sel[m] = self._y[m][rows]
            self._pos[m] = (self._pos[m] + k) % n
        return {"x": x_sel, "y": y_sel}

    def round_arrays(self, samples):
        return samples["x"], samples["y"]

    def sample_grads(self, w_locals: np.ndarray, samples, k: int) -> np.ndarray:
        x = samples["x"][:, k, :]
        residual = np.einsum("md,md->m", w_locals, x) - samples["y"][:, k]
        denom = 1.0 + w_locals * w_locals
        return 2.0 * residual[:, None] * x + self.lam * (w_locals / (denom * denom))

    def client_full_grads(self, w: np.ndarray) -> np.ndarray:
        return (
            np.einsum("mij,j->mi", self._a, w)
            - self._b
            + self.lam * reg_grad(w)[None, :]
        )

    def global_loss(self, w: np.ndarray) -> float:
        quad = 0.5 * np.einsum("mij,i,j->m", self._a, w, w)
        lin = np.einsum("mi,i->m", self._b, w)
        return float(np.mean(quad - lin + self._ysq)) + self.lam * reg_value(w)
