"""Config-driven experiment runner: problem/algorithm dispatch, CSV emission,
seed averaging, sweep orchestration, and convergence-rate slope fitting.

An experiment is one JSON file (diffable, versionable); a run produces one
CSV per seed plus a seed-averaged CSV and a manifest recording the resolved
configuration and code version.  Reruns with the same config are
byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, majority_vote, optimizers, oracles
from .metrics import mean_rows, run_average, write_metrics_csv

PROBLEM_NAMES = ("noisy_quadratic", "finite_sum_quadratic", "nonconvex_logistic",
                 "heterogeneous_quadratic", "sign_conflict_pair")
ALGORITHM_NAMES = ("ssvr", "ssvr_fs", "signsgd", "signum", "sgd", "ssvr_mv", "signsgd_mv")


@dataclass
class ExperimentConfig:
    name: str
    problem: dict
    algorithm: str
    T: int
    seeds: list
    preset: str = None
    scale_constants: float = 1.0
    hyper: dict = field(default_factory=dict)
    metrics_every: int = 1
    x0: object = None
    T_grid: list = None          # sweeps only
    sweep_metric: str = "grad_l1"

    def __post_init__(self):
        if self.algorithm not in ALGORITHM_NAMES:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHM_NAMES}")
        if self.problem.get("name") not in PROBLEM_NAMES:
            raise ValueError(f"unknown problem {self.problem.get('name')!r}; "
                             f"expected one of {PROBLEM_NAMES}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.metrics_every < 1:
            raise ValueError(f"metrics_every must be >= 1, got {self.metrics_every}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_problem(spec: dict):
    params = {k: v for k, v in spec.items() if k != "name"}
    name = spec["name"]
    if name == "noisy_quadratic":
        return oracles.make_noisy_quadratic(
            params.pop("d"), params.pop("condition_number", 10.0),
            params.pop("sigma", 1.0), params.pop("seed", 0), **params)
    if name == "finite_sum_quadratic":
        return oracles.make_finite_sum_quadratic(
            params.pop("d"), params.pop("m"), params.pop("seed", 0))
    if name == "nonconvex_logistic":
        return oracles.make_nonconvex_logistic(
            params.pop("d"), params.pop("n_samples"),
            params.pop("reg_lambda", 0.0), params.pop("seed", 0))
    if name == "heterogeneous_quadratic":
        return oracles.partition_heterogeneous(
            params.pop("n"), params.pop("d"), params.pop("heterogeneity"),
            params.pop("seed", 0), **params)
    if name == "sign_conflict_pair":
        return oracles.make_sign_conflict_pair(**params)
    raise ValueError(f"unknown problem {name!r}")


def _as_stochastic(problem):
    if isinstance(problem, oracles.StochasticGradOracle):
        return problem
    if isinstance(problem, oracles.FiniteSumProblem):
        return oracles.FiniteSumStochastic(problem)
    raise ValueError(f"{type(problem).__name__} cannot be sampled as a stochastic oracle")


def _resolve_x0(x0, dim):
    if x0 is None:
        return None
    if isinstance(x0, (int, float)):
        return np.full(dim, float(x0))
    return np.asarray(x0, dtype=np.float64)


def _algorithm_config(cfg: ExperimentConfig, problem, seed: int):
    """Build the concrete algorithm config for one seed (preset first, then overrides)."""
    hyper = dict(cfg.hyper)
    alg = cfg.algorithm
    dim = problem.dim if not isinstance(problem, oracles.NodePartition) else problem.dim

    if alg in ("ssvr", "ssvr_fs"):
        if cfg.preset is not None:
            m = getattr(problem, "m", None) or hyper.pop("m", None)
            base = optimizers.preset(cfg.preset, cfg.T, dim, m=m,
                                     scale_constants=cfg.scale_constants, seed=seed)
            base = dataclasses.replace(base, **hyper) if hyper else base
        else:
            klass = optimizers.SsvrConfig if alg == "ssvr" else optimizers.SsvrFsConfig
            base = klass(T=cfg.T, seed=seed, **hyper)
        expected = optimizers.SsvrConfig if alg == "ssvr" else optimizers.SsvrFsConfig
        if not isinstance(base, expected):
            raise ValueError(f"preset {cfg.preset!r} builds a {type(base).__name__}, "
                             f"which does not drive algorithm {alg!r}")
        return dataclasses.replace(base, x0=_resolve_x0(cfg.x0, dim))
    if alg in ("signsgd", "signum", "sgd"):
        return optimizers.BaselineConfig(T=cfg.T, seed=seed, x0=_resolve_x0(cfg.x0, dim), **hyper)
    # vote protocols
    if not isinstance(problem, oracles.NodePartition):
        raise ValueError(f"algorithm {alg!r} needs a node partition problem")
    option = hyper.pop("option", None)
    G = hyper.pop("G", None)
    if cfg.preset is not None:
        if G is None:
            G = problem.bound_ginf_sample if cfg.preset == "theorem3" else problem.bound_g2
        base = majority_vote.preset_mv(cfg.preset, cfg.T, dim, problem.n, G,
                                       scale_constants=cfg.scale_constants, seed=seed,
                                       tie_mode=hyper.pop("tie_mode", "ternary"))
        base = dataclasses.replace(base, **hyper) if hyper else base
    else:
        option = 1 if option is None else option
        if G is None:
            G = problem.bound_ginf_sample if option == 1 else problem.bound_g2
        base = majority_vote.MvConfig(option=option, n=problem.n, T=cfg.T, G=G,
                                      seed=seed, **hyper)
    return dataclasses.replace(base, x0=_resolve_x0(cfg.x0, dim))


def run_single(cfg: ExperimentConfig, seed: int):
    """Run one seed of an experiment; returns the RunResult."""
    problem = build_problem(cfg.problem)
    algo_cfg = _algorithm_config(cfg, problem, seed)
    stride = cfg.metrics_every
    if cfg.algorithm == "ssvr":
        return optimizers.ssvr_run(_as_stochastic(problem), algo_cfg, stride)
    if cfg.algorithm == "ssvr_fs":
        return optimizers.ssvr_fs_run(problem, algo_cfg, stride)
    if cfg.algorithm == "signsgd":
        return optimizers.signsgd_run(_as_stochastic(problem), algo_cfg, stride)
    if cfg.algorithm == "signum":
        return optimizers.signum_run(_as_stochastic(problem), algo_cfg, stride)
    if cfg.algorithm == "sgd":
        return optimizers.sgd_run(_as_stochastic(problem), algo_cfg, stride)
    if cfg.algorithm == "ssvr_mv":
        return majority_vote.mv_run(problem, algo_cfg, stride)
    if cfg.algorithm == "signsgd_mv":
        return majority_vote.baseline_mv_run(problem, algo_cfg, stride)
    raise ValueError(f"unknown algorithm {cfg.algorithm!r}")


def _write_json_atomic(path, payload: dict):
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, seed_offset: int = 0) -> dict:
    """Run every seed of an experiment.

    Returns {seed: list[MetricsRow]}.  With ``out_dir`` set, writes one CSV
    per seed, a seed-averaged CSV, and a manifest; all writes are atomic so a
    failure never leaves partial files behind.
    """
    seeds = [s + seed_offset for s in cfg.seeds]
    results = {seed: run_single(cfg, seed) for seed in seeds}
    rows_by_seed = {seed: res.rows for seed, res in results.items()}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        files = {}
        for seed, rows in rows_by_seed.items():
            path = os.path.join(out_dir, f"{cfg.name}_seed{seed}.csv")
            write_metrics_csv(path, rows)
            files[str(seed)] = os.path.basename(path)
        mean_path = os.path.join(out_dir, f"{cfg.name}_mean.csv")
        write_metrics_csv(mean_path, mean_rows(list(rows_by_seed.values())))
        _write_json_atomic(os.path.join(out_dir, f"{cfg.name}_manifest.json"), {
            "config": cfg.as_dict(),
            "seed_offset": seed_offset,
            "resolved_seeds": seeds,
            "files": files,
            "mean_file": os.path.basename(mean_path),
            "version": __version__,
        })
    return rows_by_seed


# ---------------------------------------------------------------------------
# rate fitting and sweeps
# ---------------------------------------------------------------------------

@dataclass
class SlopeFit:
    exponent: float
    intercept: float
    r_squared: float
    t_grid: list


def fit_rate_exponent(t_values, metric_values) -> SlopeFit:
    """Least-squares slope of log(metric) against log(T) over >= 3 grid points."""
    t = np.asarray(t_values, dtype=np.float64)
    y = np.asarray(metric_values, dtype=np.float64)
    if t.size != y.size or t.size < 3:
        raise ValueError(f"need >= 3 (T, metric) points, got {t.size} and {y.size}")
    if np.any(t <= 0) or np.any(y <= 0):
        raise ValueError("rate fitting needs positive T and metric values")
    if np.unique(t).size < 3:
        raise ValueError("degenerate T grid: need >= 3 distinct values")
    lx, ly = np.log(t), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SlopeFit(exponent=float(slope), intercept=float(intercept), r_squared=r2,
                    t_grid=[float(v) for v in t])


def _sweep_point(args):
    cfg_dict, T, seed_offset = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    cfg = dataclasses.replace(cfg, T=T, T_grid=None, name=f"{cfg.name}_T{T}")
    rows_by_seed = run_experiment(cfg, out_dir=None, seed_offset=seed_offset)
    per_seed = [run_average(rows, cfg.sweep_metric) for rows in rows_by_seed.values()]
    return T, float(np.mean(per_seed)), per_seed


def sweep_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1,
                     seed_offset: int = 0) -> dict:
    """Run the experiment over its T grid and fit the rate exponent.

    The per-T metric is the run-average of ``sweep_metric`` (mean over the
    recorded iterations, then over seeds), matching a uniformly selected
    output iterate in expectation.
    """
    if not cfg.T_grid or len(cfg.T_grid) < 3:
        raise ValueError("sweep needs a T_grid with >= 3 entries")
    tasks = [(cfg.as_dict(), int(T), seed_offset) for T in cfg.T_grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_sweep_point, tasks))
    else:
        points = [_sweep_point(task) for task in tasks]
    points.sort(key=lambda p: p[0])
    fit = fit_rate_exponent([p[0] for p in points], [p[1] for p in points])
    summary = {
        "config": cfg.as_dict(),
        "metric": cfg.sweep_metric,
        "points": [{"T": p[0], "mean": p[1], "per_seed": p[2]} for p in points],
        "fit": dataclasses.asdict(fit),
        "version": __version__,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_json_atomic(os.path.join(out_dir, f"{cfg.name}_sweep.json"), summary)
    return summary
