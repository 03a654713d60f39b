"""Config-driven experiment runner and report generator.

Subcommands:

  synth-run      two-state-chain experiments from a JSON config
  air-run        air-quality experiments from a JSON config + station CSVs
  analyze-chain  stationary/mixing/spectral diagnostics of one kernel
  theory         bound and complexity calculators from constants flags
  ingest         normalize station CSVs into dataset + stats sidecar
  report         aggregate trajectory CSVs into mean +/- CI summaries

Every run writes one trajectory CSV per sweep cell (rows: seed, algorithm,
M, K, t, grad_norm_sq, train_loss) plus a summary CSV. Reruns with the
same config are byte-identical. The exit code is 0 iff every run
completed; diverged runs are recorded in failures.csv, not fatal.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import algorithms, ingest, markov, theory
from .errors import ConfigError, DivergenceError, FedMarkovError, MergeError
from .markov import StreamCursor, p_for_mixing_time, two_state
from .objectives import RegressionObjectives, SyntheticObjectives, generate_synthetic

SUMMARY_COLUMNS = ["algorithm", "M", "K", "statistic", "mean", "ci_halfwidth"]
FAILURE_COLUMNS = ["seed", "algorithm", "M", "K", "error"]


def _fmt(value) -> str:
    """Stable float formatting so reruns are byte-identical."""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _disp(value) -> str:
    """Human-facing float formatting (12 significant digits)."""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def mean_ci(values: list[float]) -> tuple[float, float]:
    """Mean and 1.96 * stderr over seeds (0 halfwidth for a single seed)."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    stderr = float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, 1.96 * stderr


# ------------------------------------------------------------ experiment IO


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (one JSON document)."""

    experiment: str
    algorithms: tuple[str, ...]
    m_values: tuple[int, ...]
    k_values: tuple[int, ...]
    t: int
    gamma: float
    eta_values: tuple[float, ...]
    eta_over_k: tuple[float, ...]  # empty unless eta is scaled as b / K
    beta: float
    lam: float
    p_values: tuple[float, ...]
    tau_values: tuple[int, ...]
    seeds: tuple[int, ...]
    out_dir: str
    data_dir: str | None
    n_months: int | None


def _as_tuple(value, kind=float):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(kind(v) for v in value)
    return (kind(value),)


def load_config(path, out_override: str | None = None, seeds_override=None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    experiment = doc.get("experiment")
    if experiment not in ("synth", "air"):
        raise ConfigError("experiment must be 'synth' or 'air'")
    algo_list = tuple(doc.get("algorithms", ()))
    if not algo_list:
        raise ConfigError("algorithms must be a non-empty list")
    unknown = [a for a in algo_list if a not in algorithms.ALGORITHMS]
    if unknown:
        raise ConfigError(f"unknown algorithms {unknown}; valid: {list(algorithms.ALGORITHMS)}")

    seeds = tuple(int(s) for s in (seeds_override or doc.get("seeds", ())))
    if not seeds:
        raise ConfigError("at least one seed is required")

    eta_values = _as_tuple(doc.get("eta"))
    eta_over_k = _as_tuple(doc.get("eta_over_k"))
    if bool(eta_values) == bool(eta_over_k):
        raise ConfigError("exactly one of 'eta' or 'eta_over_k' is required")

    p_values = _as_tuple(doc.get("p"))
    tau_values = _as_tuple(doc.get("mixing_time"), kind=int)
    if experiment == "synth" and bool(p_values) == bool(tau_values):
        raise ConfigError("synth configs need exactly one of 'p' or 'mixing_time'")

    config = ExperimentConfig(
        experiment=experiment,
        algorithms=algo_list,
        m_values=_as_tuple(doc.get("M"), kind=int),
        k_values=_as_tuple(doc.get("K"), kind=int),
        t=int(doc.get("T", 0)),
        gamma=float(doc.get("gamma", -1.0)),
        eta_values=eta_values,
        eta_over_k=eta_over_k,
        beta=float(doc.get("beta", 0.0)),
        lam=float(doc.get("lambda", 0.0)),
        p_values=p_values,
        tau_values=tau_values,
        seeds=seeds,
        out_dir=out_override or doc.get("out_dir", "out"),
        data_dir=doc.get("data_dir"),
        n_months=int(doc["n_months"]) if "n_months" in doc else None,
    )
    if not config.m_values or not config.k_values:
        raise ConfigError("M and K are required")
    if config.t < 1:
        raise ConfigError("T must be >= 1")
    if config.gamma < 0.0 or config.beta <= 0.0 or config.beta > 1.0:
        raise ConfigError("gamma must be >= 0 and beta in (0, 1]")
    if experiment == "air":
        if config.data_dir is None or config.n_months is None:
            raise ConfigError("air configs need 'data_dir' and 'n_months'")
    return config


def _cells(config: ExperimentConfig):
    """Cartesian sweep cells: (m, k, eta, tag-parts)."""
    chain_axis = (
        [("tau", tau) for tau in config.tau_values]
        or [("p", p) for p in config.p_values]
        or [(None, None)]
    )
    eta_axis = (
        [("etaOverK", b) for b in config.eta_over_k]
        or [("eta", e) for e in config.eta_values]
    )
    for m, k, (ckind, cval), (ekind, eval_) in itertools.product(
        config.m_values, config.k_values, chain_axis, eta_axis
    ):
        eta = eval_ / k if ekind == "etaOverK" else eval_
        tags = [f"M{m}", f"K{k}"]
        if ckind == "tau" and len(config.tau_values) > 1:
            tags.append(f"tau{cval}")
        if ckind == "p" and len(config.p_values) > 1:
            tags.append(f"p{cval}")
        if ekind == "etaOverK":
            tags.append(f"etaOverK{eval_}")
        elif len(config.eta_values) > 1:
            tags.append(f"eta{eval_}")
        yield {
            "m": m, "k": k, "eta": eta,
            "chain_kind": ckind, "chain_value": cval,
            "tag": "_".join(tags),
            "suffix": "".join(
                f"[{kind}={val}]"
                for kind, val in (
                    (ckind, cval) if ckind and len(chain_axis) > 1 else (None, None),
                    (ekind, eval_) if len(eta_axis) > 1 else (None, None),
                )
                if kind
            ),
        }


def _flip_probability(cell) -> float:
    if cell["chain_kind"] == "tau":
        return p_for_mixing_time(int(cell["chain_value"]))
    return float(cell["chain_value"])


def _load_air_datasets(config: ExperimentConfig) -> dict[str, ingest.Dataset]:
    data_dir = Path(config.data_dir)
    if not data_dir.exists():
        raise ConfigError(f"data_dir {data_dir} does not exist")
    paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        raise ConfigError(f"no station CSVs found under {data_dir}")
    datasets = {}
    for path in paths:
        ds = ingest.run_pipeline(path)
        datasets[ds.station] = ds
    return datasets


def _run_experiment(config: ExperimentConfig) -> int:
    """Shared synth/air sweep driver. Returns the number of failed runs."""
    out_dir = Path(config.out_dir)
    datasets = _load_air_datasets(config) if config.experiment == "air" else None

    summary_rows, failure_rows = [], []
    for cell in _cells(config):
        trajectory_rows = []
        finals: dict[str, list[float]] = {a: [] for a in config.algorithms}
        failed: dict[str, int] = {a: 0 for a in config.algorithms}
        for seed in config.seeds:
            setups = _build_setup(config, cell, seed, datasets)
            for algorithm in config.algorithms:
                run_config = dataclasses.replace(
                    setups["config"], algorithm=algorithm
                )
                objectives, streams = setups["factory"]()
                try:
                    result = algorithms.run(run_config, objectives, streams)
                except DivergenceError as exc:
                    failed[algorithm] += 1
                    failure_rows.append({
                        "seed": seed, "algorithm": algorithm,
                        "M": cell["m"], "K": cell["k"],
                        "error": f"diverged at round {exc.round_index}",
                    })
                    continue
                trajectory_rows.extend(algorithms.trajectory_rows(run_config, result))
                finals[algorithm].append(result.records[-1].grad_norm_sq)
        _write_csv(
            out_dir / f"traj_{config.experiment}_{cell['tag']}.csv",
            algorithms.TRAJECTORY_COLUMNS,
            trajectory_rows,
        )
        for algorithm in config.algorithms:
            values = finals[algorithm]
            if values:
                for stat, series in (
                    ("final_grad_norm_sq", values),
                    ("final_grad_norm", [math.sqrt(v) for v in values]),
                ):
                    mean, ci = mean_ci(series)
                    summary_rows.append({
                        "algorithm": algorithm, "M": cell["m"], "K": cell["k"],
                        "statistic": stat + cell["suffix"],
                        "mean": mean, "ci_halfwidth": ci,
                    })
            if failed[algorithm]:
                summary_rows.append({
                    "algorithm": algorithm, "M": cell["m"], "K": cell["k"],
                    "statistic": "failed_runs" + cell["suffix"],
                    "mean": float(failed[algorithm]), "ci_halfwidth": 0.0,
                })
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summary_rows)
    n_failures = len(failure_rows)
    if failure_rows:
        _write_csv(out_dir / "failures.csv", FAILURE_COLUMNS, failure_rows)
    return n_failures


def _build_setup(config: ExperimentConfig, cell, seed: int, datasets):
    """Run-config plus a factory yielding fresh (objectives, streams)."""
    base = algorithms.FedConfig(
        algorithm=config.algorithms[0],
        m=cell["m"], k=cell["k"], t=config.t,
        gamma=config.gamma, eta=cell["eta"], beta=config.beta,
        lam=config.lam, seed=seed,
    )
    if config.experiment == "synth":
        p = _flip_probability(cell)
        # Provenance: the problem instance every algorithm of this
        # (cell, seed) pair optimizes.
        problem_dir = Path(config.out_dir) / "problems"
        problem_path = problem_dir / f"problem_{cell['tag']}_seed{seed}.json"
        if not problem_path.exists():
            problem_dir.mkdir(parents=True, exist_ok=True)
            problem_path.write_text(
                generate_synthetic(seed, cell["m"], p, config.lam).to_json()
            )

        def factory():
            problem = generate_synthetic(seed, cell["m"], p, config.lam)
            objectives = SyntheticObjectives(problem, seed=seed)
            streams = [
                StreamCursor(problem.kernel(), state=0, seed=seed, client_id=i)
                for i in range(cell["m"])
            ]
            return objectives, streams

    else:
        stations = sorted(datasets)
        windows = ingest.partition_clients(
            stations, config.n_months, cell["m"], seed=seed
        )

        def factory():
            xs, ys = [], []
            for window in windows:
                x, y = ingest.window_slice(datasets[window.station], window)
                xs.append(x)
                ys.append(y)
            return RegressionObjectives(xs, ys, lam=config.lam), None

    return {"config": base, "factory": factory}


# ------------------------------------------------------------- subcommands


def cmd_synth_run(args) -> int:
    config = load_config(args.config, args.out, _parse_seeds(args.seeds))
    if config.experiment != "synth":
        raise ConfigError("synth-run requires a synth config")
    return 1 if _run_experiment(config) else 0


def cmd_air_run(args) -> int:
    config = load_config(args.config, args.out, _parse_seeds(args.seeds))
    if config.experiment != "air":
        raise ConfigError("air-run requires an air config")
    if args.data:
        config = dataclasses.replace(config, data_dir=args.data)
    return 1 if _run_experiment(config) else 0


def _parse_seeds(text: str | None):
    if not text:
        return None
    return [int(s) for s in text.split(",") if s.strip() != ""]


def cmd_analyze_chain(args) -> int:
    if args.two_state is not None:
        kernel = two_state(args.two_state)
    else:
        kernel = markov.kernel_from_csv(args.kernel)
    pi = markov.stationary(kernel)
    tau = markov.mixing_time(kernel, eps=args.eps)
    nu = markov.pseudo_spectral_gap(kernel, k_max=args.k_max)
    c_inf = markov.c_infinity(kernel)
    bound = markov.product_mixing_bound([max(tau, 1)] * args.clients)
    print(f"states: {kernel.n}")
    print("stationary: " + " ".join(_disp(round(float(v), 15)) for v in pi.probs))
    print(f"mixing_time(eps={args.eps}): {tau}")
    print(f"pseudo_spectral_gap: {_disp(nu)}")
    print(f"c_infinity: {_disp(c_inf)}")
    print(f"product_mixing_bound(M={args.clients}): {bound}")
    return 0


def cmd_theory(args) -> int:
    constants = theory.ProblemConstants(
        L=args.L, sigma=args.sigma, theta=args.theta, delta=args.delta,
        c_inf=args.c_inf, nu_ps=args.nu_ps, delta0=args.delta0, g0=args.g0,
        m=args.M, k=args.K, t=args.T, beta=args.beta, eps=args.eps,
    )
    gamma_mb = min(args.gamma, 1.0 / constants.L) if args.gamma else 1.0 / constants.L
    k_mb, t_mb = theory.minibatch_complexity(constants)
    eta_cap_ls, k_ls, t_ls = theory.local_sgd_complexity(constants)
    eta_run_ls = min(eta_cap_ls, 1.0 / (10.0 * constants.L * constants.delta**2 * constants.k))
    gamma_m = constants.beta / (math.sqrt(60.0) * constants.L)
    eta_cap_m = theory.momentum_step_caps(constants, gamma_m)

    rows = [
        {
            "algorithm": "minibatch",
            "bound": theory.minibatch_bound(constants, gamma_mb),
            "K_required": k_mb, "T_required": t_mb,
            "step_cap": 1.0 / constants.L,
        },
        {
            "algorithm": "local_sgd",
            "bound": theory.local_sgd_bound(constants, eta_run_ls),
            "K_required": k_ls, "T_required": t_ls,
            "step_cap": eta_cap_ls,
        },
        {
            "algorithm": "local_sgd_m",
            "bound": theory.momentum_bound(constants, gamma_m, eta_cap_m),
            "K_required": "-", "T_required": "-",
            "step_cap": eta_cap_m,
        },
    ]
    columns = ["algorithm", "bound", "K_required", "T_required", "step_cap"]
    if args.format == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    else:
        widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in columns}
        print("  ".join(c.ljust(widths[c]) for c in columns))
        for row in rows:
            print("  ".join(_fmt(row[c]).ljust(widths[c]) for c in columns))
    return 0


def cmd_ingest(args) -> int:
    data = Path(args.data)
    paths = sorted(data.glob("*.csv")) if data.is_dir() else [data]
    if not paths:
        raise ConfigError(f"no CSV files under {data}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        dataset = ingest.run_pipeline(path, training_months=args.training_months)
        ingest.dataset_to_csv(dataset, out_dir / f"{dataset.station}_normalized.csv")
        (out_dir / f"{dataset.station}_stats.json").write_text(
            json.dumps(dataset.stats, indent=2, sort_keys=True)
        )
        print(f"{dataset.station}: {len(dataset)} rows")
    return 0


def _read_trajectories(paths: list[str]):
    frames = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != algorithms.TRAJECTORY_COLUMNS:
                raise MergeError(
                    f"{path}: columns {reader.fieldnames} do not match "
                    f"{algorithms.TRAJECTORY_COLUMNS}"
                )
            for row in reader:
                row["source"] = Path(path).stem
                frames.append(row)
    if not frames:
        raise MergeError("no data rows in the given trajectory files")
    return frames


def cmd_report(args) -> int:
    rows = _read_trajectories(args.csv)
    # Final-round metric per (source, algorithm, M, K, seed).
    finals: dict[tuple, tuple[int, float]] = {}
    for row in rows:
        key = (row["source"], row["algorithm"], int(row["M"]), int(row["K"]), int(row["seed"]))
        t = int(row["t"])
        if key not in finals or t > finals[key][0]:
            finals[key] = (t, float(row["grad_norm_sq"]))
    groups: dict[tuple, list[float]] = {}
    for (source, algorithm, m, k, _seed), (_t, value) in sorted(finals.items()):
        groups.setdefault((source, algorithm, m, k), []).append(value)

    summary = []
    for (source, algorithm, m, k), values in groups.items():
        norm_mean, norm_ci = mean_ci([math.sqrt(v) for v in values])
        summary.append({
            "algorithm": algorithm, "M": m, "K": k,
            "statistic": f"final_grad_norm[{source}]",
            "mean": norm_mean, "ci_halfwidth": norm_ci,
        })
    if args.out:
        _write_csv(Path(args.out), SUMMARY_COLUMNS, summary)

    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in summary)) for c in SUMMARY_COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in SUMMARY_COLUMNS))
    for row in summary:
        print("  ".join(_fmt(row[c]).ljust(widths[c]) for c in SUMMARY_COLUMNS))

    if args.step_size_table:
        _print_step_size_table(groups)
    return 0


def _print_step_size_table(groups) -> None:
    """eta-by-K pivot of mean final gradient norm (step-size scaling table).

    Row labels come from the etaOverK tag embedded in the trajectory file
    names, because the trajectory schema itself carries no eta column.
    """
    cells = {}
    for (source, _algorithm, _m, k), values in groups.items():
        tag = next((p for p in source.split("_") if p.startswith("etaOverK")), None)
        if tag is None:
            continue
        eta_label = f"eta={tag[len('etaOverK'):]}/K"
        mean, ci = mean_ci([math.sqrt(v) for v in values])
        cells[(eta_label, k)] = f"{mean:.5f} +/- {ci:.5f}"
    if not cells:
        print("step-size-table: no etaOverK tags found in file names")
        return
    ks = sorted({k for (_e, k) in cells})
    etas = sorted({e for (e, _k) in cells}, reverse=True)
    width = max(len(v) for v in cells.values())
    label_width = max(len(e) for e in etas)
    print("\nmean final gradient norm")
    print(" " * label_width + "  " + "  ".join(f"K={k}".ljust(width) for k in ks))
    for eta_label in etas:
        row = [cells.get((eta_label, k), "-").ljust(width) for k in ks]
        print(eta_label.ljust(label_width) + "  " + "  ".join(row))


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmarkov",
        description="Federated optimization on Markov-chain data streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_common = {
        "--config": dict(required=True, help="JSON experiment config"),
        "--out": dict(default=None, help="output directory (overrides config)"),
        "--seeds": dict(default=None, help="comma-separated seed list override"),
    }
    p_synth = sub.add_parser("synth-run", help="run a synthetic-chain experiment")
    p_air = sub.add_parser("air-run", help="run an air-quality experiment")
    for p in (p_synth, p_air):
        for flag, kw in run_common.items():
            p.add_argument(flag, **kw)
    p_air.add_argument("--data", default=None, help="station CSV directory (overrides config)")
    p_synth.set_defaults(func=cmd_synth_run)
    p_air.set_defaults(func=cmd_air_run)

    p_chain = sub.add_parser("analyze-chain", help="chain diagnostics")
    group = p_chain.add_mutually_exclusive_group(required=True)
    group.add_argument("--two-state", type=float, default=None, metavar="P")
    group.add_argument("--kernel", default=None, help="kernel CSV path")
    p_chain.add_argument("--eps", type=float, default=0.25)
    p_chain.add_argument("--k-max", type=int, default=None)
    p_chain.add_argument("--clients", type=int, default=1)
    p_chain.set_defaults(func=cmd_analyze_chain)

    p_theory = sub.add_parser("theory", help="bound/complexity calculators")
    for flag, required, default in [
        ("--L", True, None), ("--sigma", True, None), ("--eps", True, None),
        ("--theta", False, 0.0), ("--delta", False, 1.0),
        ("--c-inf", False, 1.0), ("--nu-ps", False, 1.0),
        ("--delta0", False, 1.0), ("--g0", False, 0.0),
        ("--gamma", False, 0.0), ("--beta", False, 1.0),
    ]:
        p_theory.add_argument(flag, type=float, required=required, default=default)
    for flag, default in [("--M", 1), ("--K", 1), ("--T", 1)]:
        p_theory.add_argument(flag, type=int, default=default)
    p_theory.add_argument("--format", choices=("text", "csv"), default="text")
    p_theory.set_defaults(func=cmd_theory)

    p_ingest = sub.add_parser("ingest", help="normalize station CSVs")
    p_ingest.add_argument("--data", required=True, help="station CSV file or directory")
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.add_argument("--training-months", type=int, default=ingest.TRAINING_MONTHS)
    p_ingest.set_defaults(func=cmd_ingest)

    p_report = sub.add_parser("report", help="summaries from trajectory CSVs")
    p_report.add_argument("--csv", nargs="+", required=True, help="trajectory CSV files")
    p_report.add_argument("--out", default=None, help="summary CSV output path")
    p_report.add_argument("--step-size-table", action="store_true",
                          help="print the eta-by-K step-size scaling pivot")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FedMarkovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
