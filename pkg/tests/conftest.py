"""Shared test helpers: run setup builders and small reference objects."""

import numpy as np
import pytest

from fedmarkov.algorithms import FedConfig
from fedmarkov.markov import StreamCursor, two_state
from fedmarkov.objectives import (
    RegressionObjectives,
    SyntheticObjectives,
    generate_synthetic,
)


def make_synthetic_setup(
    seed: int,
    algorithm: str,
    m: int = 4,
    k: int = 3,
    t: int = 5,
    gamma: float = 0.05,
    eta: float = 0.02,
    beta: float = 0.5,
    p: float = 0.3,
    lam: float = 0.01,
):
    """Fresh (config, objectives, streams) triple for one synthetic run.

    Streams and noise substreams are rebuilt from the seed, so two setups
    with the same arguments drive bit-identical runs. Chains start in
    state 0 (deterministic, possibly non-stationary start).
    """
    config = FedConfig(
        algorithm=algorithm, m=m, k=k, t=t,
        gamma=gamma, eta=eta, beta=beta, lam=lam, seed=seed,
    )
    problem = generate_synthetic(seed, m, p, lam)
    objectives = SyntheticObjectives(problem, seed=seed)
    streams = [
        StreamCursor(problem.kernel(), state=0, seed=seed, client_id=i)
        for i in range(m)
    ]
    return config, objectives, streams


def make_duplicate_client_regression(n_clients: int = 2, rows: int = 30):
    """Clients with identical data windows (and no sampling noise)."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, 9))
    y = rng.normal(size=rows)
    return RegressionObjectives(
        [x.copy() for _ in range(n_clients)],
        [y.copy() for _ in range(n_clients)],
        lam=0.01,
    )


class QuadraticObjectives:
    """Deterministic noiseless quadratics f_m(w) = ||w - a_m||^2.

    L = 2 and there is no sampling noise, so minibatch SGD with
    gamma <= 1/L must descend monotonically.
    """

    kind = "quadratic"

    def __init__(self, anchors: np.ndarray):
        self.anchors = np.asarray(anchors, dtype=np.float64)
        self.n_clients, self.dim = self.anchors.shape

    def draw_round(self, streams, k):
        return None

    def sample_grads(self, w_locals, samples, k):
        return 2.0 * (w_locals - self.anchors)

    def client_full_grads(self, w):
        return 2.0 * (w[None, :] - self.anchors)

    def global_loss(self, w):
        diff = w[None, :] - self.anchors
        return float(np.mean(np.sum(diff * diff, axis=1)))


@pytest.fixture
def quadratic_objectives():
    rng = np.random.default_rng(5)
    return QuadraticObjectives(rng.normal(size=(3, 6)))


def write_station_csv(path, station: str, months: int = 38, seed: int = 0) -> None:
    """Schema-faithful synthetic station file: seasonal cycles + AR noise."""
    import pandas as pd

    rng = np.random.default_rng(seed)
    ts = pd.date_range("2013-03-01", periods=months * 730, freq="h")
    ts = ts[ts < ts[0] + pd.DateOffset(months=months)]
    n = len(ts)
    hours = np.arange(n)
    annual = np.sin(2 * np.pi * hours / (24 * 365.25))
    diurnal = np.sin(2 * np.pi * hours / 24.0)

    def ar_noise(scale, rho=0.8):
        eps = rng.normal(scale=scale, size=n)
        out = np.empty(n)
        out[0] = eps[0]
        for i in range(1, n):
            out[i] = rho * out[i - 1] + eps[i]
        return out

    base = ar_noise(1.0)
    frame = pd.DataFrame({
        "No": np.arange(1, n + 1),
        "year": ts.year, "month": ts.month, "day": ts.day, "hour": ts.hour,
        "PM2.5": 60 + 25 * annual + 5 * diurnal + 10 * base + ar_noise(2.0),
        "PM10": 90 + 30 * annual + rng.normal(scale=8.0, size=n),
        "SO2": 15 + 6 * annual + ar_noise(1.5),
        "NO2": 45 + 10 * annual + 8 * base + ar_noise(1.0),
        "CO": 900 + 280 * annual + 120 * base + ar_noise(20.0),
        "O3": 55 - 18 * annual + 6 * diurnal + ar_noise(2.0),
        "TEMP": 12 + 14 * annual + 4 * diurnal + ar_noise(0.8),
        "PRES": 1012 - 8 * annual + ar_noise(0.5),
        "DEWP": 2 + 12 * annual + ar_noise(0.9),
        "RAIN": np.abs(rng.normal(scale=0.3, size=n)),
        "wd": "N",
        "WSPM": 1.8 + 0.4 * diurnal + np.abs(ar_noise(0.2)),
        "station": station,
    })
    # A few NA cells exercise the fill stage.
    for col, idx in [("PM2.5", 1000), ("TEMP", 5000), ("CO", 9000)]:
        frame.loc[idx, col] = np.nan
    frame.to_csv(path, index=False, na_rep="NA")


@pytest.fixture(scope="session")
def air_data_dir(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("stations")
    write_station_csv(data_dir / "alpha.csv", "Alpha", seed=1)
    write_station_csv(data_dir / "bravo.csv", "Bravo", seed=2)
    return data_dir
