"""Experiment runner: benchmark estimation studies at configurable scale.

Each experiment draws seeded problem instances, runs the configured
estimators, and emits a reproducible report: ``report.json`` (byte-stable
for a fixed config and seed, independent of the thread count) plus
``instances.csv`` with one row per instance and estimator, and optional
per-start optimizer traces.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import (
    DEFAULT_GRAVITY,
    Trajectory,
    cartesian_states,
    double_pendulum_system,
    integrate,
    lorenz_system,
)
from .errors import ConfigError, DynofitError
from .estimator import (
    EstimationResult,
    OptimizerConfig,
    ParameterBox,
    estimation_error,
    grid_search,
    make_grid,
    multistart_estimate,
    prediction_error,
)
from .kernelscore import (
    EstimationProblem,
    gram_from_samples,
    make_kernel_objective,
    make_linear_objective,
    make_oracle_objective,
)
from .observation import (
    Canvas,
    NoiseSpec,
    legendre_basis,
    observe_lorenz_full,
    observe_lorenz_noisy,
    observe_lorenz_partial,
    render_pendulum_video,
)

THREADS_ENV_VAR = "DYNOFIT_THREADS"

EXPERIMENT_KINDS = ("pendulum", "lorenz", "signal_length", "grid_refinement",
                    "baselines")

_PENDULUM_OBS_KINDS = ("linear", "video", "cartesian")
_LORENZ_OBS_KINDS = ("identity", "legendre", "legendre-noisy", "legendre-partial")

# Variance 0.5 for the random initial conditions, expressed as a std dev.
_INIT_STD = math.sqrt(0.5)

_OPTIMIZER_DEFAULTS = {
    "n_starts": 10,
    "max_iters_per_start": 30,
    "fd_step": 1e-3,
    "step_init": 0.1,
    "shrink": 0.5,
    "start_rel_window": None,  # float -> starts drawn near the true parameter
}

_DEFAULTS = {
    "pendulum": {
        "n_instances": 5,
        "n_samples": 200,
        "dt": 0.05,
        "algorithms": ["grid", "multistart"],
        "box": {"names": ["l1", "l2", "m2"],
                "lower": [1.0, 1.0, 1.0], "upper": [10.0, 10.0, 10.0]},
        "grid_points": [8, 8, 8],
        "optimizer": dict(_OPTIMIZER_DEFAULTS),
        "observation": {"kind": "linear", "dim": 40, "noise_sigma": 0.0},
        "init": {"std": _INIT_STD, "angles_only": False},
        "gravity": DEFAULT_GRAVITY,
    },
    "lorenz": {
        "n_instances": 5,
        "n_samples": 200,
        "dt": 0.01,
        "algorithms": ["grid"],
        "box": {"names": ["sigma", "rho"],
                "lower": [15.0, 40.0], "upper": [25.0, 80.0]},
        "grid_points": [20, 20],
        "optimizer": dict(_OPTIMIZER_DEFAULTS),
        "observation": {"kind": "legendre", "noise_sigma": 15.0},
        "estimate_beta": False,
        "beta": 8.0 / 3.0,
        "beta_bounds": [2.0, 3.0],
    },
    "signal_length": {
        "n_repetitions": 10,
        "t_f_values": [1.0, 5.0, 10.0],
        "dt": 0.05,
        "parameter_set": [1.5 + 0.5 * k for k in range(12)],  # 1.5 .. 7.0
        "box": {"names": ["l1", "l2", "m2"],
                "lower": [1.5, 1.5, 1.5], "upper": [7.0, 7.0, 7.0]},
        "grid_points": [8, 8, 8],
        "observation": {"kind": "linear", "dim": 40, "noise_sigma": 0.0},
        "init": {"std": _INIT_STD, "angles_only": False},
        "gravity": DEFAULT_GRAVITY,
    },
    "grid_refinement": {
        "n_repetitions": 20,
        "grid_sizes": [10, 100, 1000],
        "n_samples": 200,
        "dt": 0.01,
        "sigma_bounds": [15.0, 25.0],
        "rho_bounds": [40.0, 80.0],
        "beta": 8.0 / 3.0,
    },
    "baselines": {
        "n_instances": 5,
        "n_samples": 200,
        "dt": 0.05,
        "algorithms": ["grid", "linear1", "linear2"],
        "box": {"names": ["l1", "l2", "m2"],
                "lower": [1.0, 1.0, 1.0], "upper": [10.0, 10.0, 10.0]},
        "grid_points": [8, 8, 8],
        "observation": {"kind": "video", "noise_sigma": 0.0},
        "init": {"std": _INIT_STD, "angles_only": False},
        "gravity": DEFAULT_GRAVITY,
    },
}

_COMMON_DEFAULTS = {"seed": 0, "threads": 1, "write_traces": False,
                    "output_dir": None}


def default_config(experiment: str) -> dict:
    """Fully-populated desk-scale config for one experiment kind."""
    if experiment not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"expected one of {EXPERIMENT_KINDS}", "$.experiment")
    data = copy.deepcopy(_COMMON_DEFAULTS)
    data["experiment"] = experiment
    data.update(copy.deepcopy(_DEFAULTS[experiment]))
    return data


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out and key != "experiment":
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _expect(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise ConfigError(message, path)


def normalize_config(data: dict) -> dict:
    """Merge user config over the experiment defaults and validate it."""
    _expect(isinstance(data, dict), "config must be a JSON object", "$")
    experiment = data.get("experiment")
    _expect(isinstance(experiment, str) and experiment in EXPERIMENT_KINDS,
            f"must be one of {list(EXPERIMENT_KINDS)}", "$.experiment")
    cfg = _merge(default_config(experiment), data, "$")

    _expect(isinstance(cfg["seed"], int) and cfg["seed"] >= 0,
            "seed must be a non-negative integer", "$.seed")
    _expect(isinstance(cfg["threads"], int) and cfg["threads"] >= 1,
            "threads must be a positive integer", "$.threads")
    for key in ("n_instances", "n_repetitions", "n_samples"):
        if key in cfg:
            _expect(isinstance(cfg[key], int) and cfg[key] >= 1,
                    f"{key} must be a positive integer", f"$.{key}")
    if "n_samples" in cfg:
        _expect(cfg["n_samples"] >= 3, "n_samples must be >= 3", "$.n_samples")
    if "dt" in cfg:
        _expect(isinstance(cfg["dt"], (int, float)) and cfg["dt"] > 0,
                "dt must be positive", "$.dt")
    if "box" in cfg:
        box = cfg["box"]
        _expect(isinstance(box, dict) and
                len(box.get("names", [])) == len(box.get("lower", [])) ==
                len(box.get("upper", [])) > 0,
                "box needs matching names/lower/upper lists", "$.box")
        _expect(all(lo < hi for lo, hi in zip(box["lower"], box["upper"])),
                "box requires lower < upper componentwise", "$.box")
    if "grid_points" in cfg:
        pts = cfg["grid_points"]
        _expect(isinstance(pts, list) and all(isinstance(p, int) and p >= 2
                                              for p in pts),
                "grid_points must be a list of integers >= 2", "$.grid_points")
        if "box" in cfg:
            _expect(len(pts) == len(cfg["box"]["names"]),
                    "grid_points must match the box dimension", "$.grid_points")
    if "algorithms" in cfg:
        allowed = ({"grid", "linear1", "linear2"} if experiment == "baselines"
                   else {"grid", "multistart", "oracle"})
        _expect(isinstance(cfg["algorithms"], list) and cfg["algorithms"] and
                all(a in allowed for a in cfg["algorithms"]),
                f"algorithms must be a non-empty subset of {sorted(allowed)}",
                "$.algorithms")
    if "observation" in cfg:
        kinds = _PENDULUM_OBS_KINDS if experiment != "lorenz" else _LORENZ_OBS_KINDS
        kind = cfg["observation"].get("kind")
        _expect(kind in kinds, f"must be one of {list(kinds)}",
                "$.observation.kind")
        _expect(cfg["observation"].get("noise_sigma", 0.0) >= 0,
                "noise_sigma must be >= 0", "$.observation.noise_sigma")
    if experiment == "signal_length":
        _expect(all(t > 0 for t in cfg["t_f_values"]) and cfg["t_f_values"],
                "t_f_values must be positive", "$.t_f_values")
    if experiment == "grid_refinement":
        _expect(all(isinstance(g, int) and g >= 2 for g in cfg["grid_sizes"]),
                "grid_sizes must be integers >= 2", "$.grid_sizes")
    if experiment == "lorenz":
        _expect(cfg["beta"] > 0, "beta must be positive", "$.beta")
        lo, hi = cfg["beta_bounds"]
        _expect(lo < hi, "beta_bounds must be increasing", "$.beta_bounds")
    return cfg


def apply_scale(data: dict, factor: float) -> dict:
    """Uniformly shrink (or grow) the size knobs of a config.

    Scales instance/repetition counts, sample counts, per-dimension grid
    points, explicit grid sizes, and optimizer start counts; never touches
    estimator logic, so factor 1 reproduces the input exactly.
    """
    if factor <= 0:
        raise ConfigError("scale factor must be positive", "$.scale")
    if factor == 1.0:
        return copy.deepcopy(data)
    out = copy.deepcopy(data)

    def scaled(value: int, floor: int) -> int:
        return max(floor, round(value * factor))

    for key, floor in (("n_instances", 1), ("n_repetitions", 1),
                       ("n_samples", 8)):
        if key in out:
            out[key] = scaled(out[key], floor)
    if "grid_points" in out:
        out["grid_points"] = [scaled(p, 2) for p in out["grid_points"]]
    if "grid_sizes" in out:
        out["grid_sizes"] = [scaled(g, 2) for g in out["grid_sizes"]]
    if "optimizer" in out and "n_starts" in out["optimizer"]:
        out["optimizer"]["n_starts"] = scaled(out["optimizer"]["n_starts"], 1)
    return out


def load_config(path, scale: float = 1.0, seed: int | None = None,
                threads: int | None = None) -> dict:
    """Read, override, scale, and validate an experiment config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}")
    if seed is not None:
        data["seed"] = seed
    if threads is not None:
        data["threads"] = threads
    if scale != 1.0:
        data = apply_scale(data, scale)
    return normalize_config(data)


def resolve_threads(config_threads: int) -> int:
    """Thread count with the DYNOFIT_THREADS env var taking precedence."""
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1")
        return value
    return config_threads


@dataclass(frozen=True)
class ExperimentReport:
    """Per-instance records plus summary statistics, reproducible from
    (config, seed) alone."""

    config: dict
    records: list
    summary: dict
    traces: dict

    def to_json_dict(self) -> dict:
        records = [{k: v for k, v in rec.items() if k != "wall_time"}
                   for rec in self.records]
        return _jsonify({"config": self.config, "records": records,
                         "summary": self.summary})


def _jsonify(value):
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _seed_int(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1, np.uint64)[0])


def _box_from_config(box_cfg: dict) -> ParameterBox:
    return ParameterBox(np.asarray(box_cfg["lower"], float),
                        np.asarray(box_cfg["upper"], float),
                        tuple(box_cfg["names"]))


def _optimizer_config(opt_cfg: dict, seed: int,
                      start_center: np.ndarray | None = None) -> OptimizerConfig:
    window = opt_cfg.get("start_rel_window")
    return OptimizerConfig(
        n_starts=opt_cfg["n_starts"],
        max_iters_per_start=opt_cfg["max_iters_per_start"],
        fd_step=opt_cfg["fd_step"],
        step_init=opt_cfg["step_init"],
        shrink=opt_cfg["shrink"],
        seed=seed,
        start_center=start_center if window is not None else None,
        start_rel_width=window if window is not None else 0.1,
    )


def _box_stats(values) -> dict:
    arr = np.asarray(values, dtype=float)
    q25, med, q75 = (float(q) for q in np.percentile(arr, [25, 50, 75]))
    mean = float(arr.mean())
    std = float(arr.std())
    lo, hi = mean - 2.7 * std, mean + 2.7 * std
    return {
        "median": med, "q25": q25, "q75": q75,
        "whisker_lo": lo, "whisker_hi": hi,
        "n_outliers": int(np.sum((arr < lo) | (arr > hi))),
        "n": int(arr.size),
    }


def _draw_pendulum_init(rng: np.random.Generator, std: float,
                        angles_only: bool) -> np.ndarray:
    x0 = rng.normal(0.0, std, size=4)
    if angles_only:
        x0[2:] = 0.0
    return x0


def _pendulum_model_map(states: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return cartesian_states(states, omega[0], omega[1])


def _pendulum_observation(obs_cfg: dict, cart: np.ndarray, omega_star: np.ndarray,
                          dt: float, linear_map: np.ndarray | None,
                          obs_seed: int) -> tuple[np.ndarray, bool]:
    kind = obs_cfg["kind"]
    sigma = float(obs_cfg.get("noise_sigma", 0.0))
    if kind == "cartesian":
        samples = cart
        clipped = False
    elif kind == "linear":
        samples = cart @ linear_map.T
        clipped = False
    elif kind == "video":
        extent = 1.1 * (omega_star[0] + omega_star[1])
        obs = render_pendulum_video(Trajectory(0.0, dt, cart), Canvas(extent))
        samples = obs.samples
        clipped = bool(obs.meta.get("clipped", False))
    else:
        raise ConfigError(f"unknown pendulum observation kind {kind!r}",
                          "$.observation.kind")
    if sigma > 0:
        rng = np.random.default_rng(obs_seed)
        samples = samples + rng.normal(0.0, sigma, size=samples.shape)
    return samples, clipped


def _result_record(algorithm: str, result: EstimationResult,
                   omega_star: np.ndarray, names, pred_fn) -> dict:
    errors = estimation_error(result.omega_hat.values, omega_star)
    pe = prediction_error(pred_fn(result.omega_hat.values), pred_fn(omega_star))
    return {
        "algorithm": algorithm,
        "omega_star": [float(v) for v in omega_star],
        "omega_hat": [float(v) for v in result.omega_hat.values],
        "names": list(names),
        "errors": [float(e) for e in errors],
        "prediction_error": float(pe),
        "score": float(result.score),
        "n_ode_solves": int(result.n_ode_solves),
        "wall_time": float(result.wall_time),
    }


def _parameter_summary(records: list, names, algorithms) -> dict:
    summary = {}
    for alg in algorithms:
        rows = [r for r in records if r["algorithm"] == alg]
        if not rows:
            continue
        per_param = {}
        for j, name in enumerate(names):
            per_param[name] = _box_stats([r["errors"][j] for r in rows])
        pooled = [e for r in rows for e in r["errors"]]
        summary[alg] = {
            "per_parameter": per_param,
            "overall_median_error": float(np.median(pooled)),
            "median_prediction_error": float(np.median(
                [r["prediction_error"] for r in rows])),
            "total_ode_solves": int(sum(r["n_ode_solves"] for r in rows)),
        }
    return summary


def _run_indexed(fn, count: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(i) for i in range(count)]


def _instance_guard(fn, kind_key: str):
    """Per-instance failures become records instead of killing the run."""
    def guarded(index: int):
        try:
            return fn(index)
        except DynofitError as exc:
            record = {kind_key: index, "failed": True,
                      "error": f"{type(exc).__name__}: {exc}"}
            return [record], []
    return guarded


def _split_results(results):
    records = [rec for recs, _ in results for rec in recs]
    traces = {t["instance"]: t["traces"] for _, ts in results for t in ts}
    return records, traces


def _ok(records: list) -> list:
    return [r for r in records if not r.get("failed")]


# ---------------------------------------------------------------------------
# Pendulum estimation study (also drives the baselines study)


def _pendulum_instance(cfg: dict, box: ParameterBox, grid, linear_map,
                       inst_ss: np.random.SeedSequence, index: int,
                       score_kinds=("kernel",)) -> tuple[list, list]:
    data_ss, obs_ss, opt_ss = inst_ss.spawn(3)
    rng = np.random.default_rng(data_ss)
    omega_star = rng.uniform(box.lower, box.upper)
    x0 = _draw_pendulum_init(rng, cfg["init"]["std"], cfg["init"]["angles_only"])
    system = double_pendulum_system(cfg["gravity"])
    n, dt = cfg["n_samples"], cfg["dt"]

    traj = integrate(system, omega_star, x0, n, dt)
    cart = cartesian_states(traj.states, omega_star[0], omega_star[1])
    y_samples, clipped = _pendulum_observation(
        cfg["observation"], cart, omega_star, dt, linear_map, _seed_int(obs_ss))

    problem = EstimationProblem(system, x0, n, dt, model_map=_pendulum_model_map)

    def pred_fn(omega):
        t = integrate(system, omega, x0, n, dt)
        return Trajectory(0.0, dt, _pendulum_model_map(t.states, omega))

    records = []
    traces = []
    objectives = {}
    if "kernel" in score_kinds:
        objectives["kernel"] = make_kernel_objective(
            problem, gram_from_samples(y_samples))
    if "linear1" in score_kinds:
        objectives["linear1"] = make_linear_objective(problem, y_samples, 1)
    if "linear2" in score_kinds:
        objectives["linear2"] = make_linear_objective(problem, y_samples, 2)

    for alg in cfg["algorithms"]:
        if alg == "grid":
            result = grid_search(objectives["kernel"], box, grid)
            label = "grid"
        elif alg == "multistart":
            opt = _optimizer_config(cfg["optimizer"], _seed_int(opt_ss),
                                    start_center=omega_star)
            result = multistart_estimate(objectives["kernel"], box, opt)
            traces.append({"instance": index, "traces": result.traces})
            label = "multistart"
        elif alg in ("linear1", "linear2"):
            result = grid_search(objectives[alg], box, grid)
            label = alg
        else:
            raise ConfigError(f"algorithm {alg!r} not supported here",
                              "$.algorithms")
        record = _result_record(label, result, omega_star, box.names, pred_fn)
        record["instance"] = index
        record["clipped"] = clipped
        records.append(record)
    return records, traces


def _run_pendulum_like(cfg: dict, score_kinds) -> ExperimentReport:
    box = _box_from_config(cfg["box"])
    grid = make_grid(box, cfg["grid_points"])
    master = np.random.SeedSequence(cfg["seed"])
    children = master.spawn(cfg["n_instances"] + 1)
    shared_rng = np.random.default_rng(children[0])
    linear_map = None
    if cfg["observation"]["kind"] == "linear":
        linear_map = shared_rng.normal(size=(cfg["observation"]["dim"], 4))

    def one(i: int):
        return _pendulum_instance(cfg, box, grid, linear_map, children[i + 1],
                                  i, score_kinds)

    threads = resolve_threads(cfg["threads"])
    results = _run_indexed(_instance_guard(one, "instance"),
                           cfg["n_instances"], threads)
    records, traces = _split_results(results)

    summary = _parameter_summary(_ok(records), box.names, cfg["algorithms"])
    if "grid" in summary:
        kernel_median = summary["grid"]["overall_median_error"]
        for alg in ("linear1", "linear2", "multistart"):
            if alg in summary and kernel_median > 0:
                summary[alg]["median_ratio_vs_grid"] = float(
                    summary[alg]["overall_median_error"] / kernel_median)
    return ExperimentReport(cfg, records, summary, traces)


def run_pendulum_experiment(cfg: dict) -> ExperimentReport:
    """Estimate (l1, l2, m2) for random double-pendulum instances."""
    return _run_pendulum_like(cfg, score_kinds=("kernel",))


def run_baselines(cfg: dict) -> ExperimentReport:
    """Kernel grid search against the two linear baseline scores."""
    kinds = ["kernel" if a in ("grid", "multistart") else a
             for a in cfg["algorithms"]]
    return _run_pendulum_like(cfg, score_kinds=tuple(dict.fromkeys(kinds)))


# ---------------------------------------------------------------------------
# Lorenz estimation study


def _lorenz_observation(kind: str, traj: Trajectory, basis, noise_sigma: float,
                        obs_seed: int) -> np.ndarray:
    if kind == "identity":
        return traj.states
    if kind == "legendre":
        return observe_lorenz_full(traj, basis).samples
    if kind == "legendre-noisy":
        noise = NoiseSpec("state_gaussian", noise_sigma, obs_seed)
        return observe_lorenz_noisy(traj, noise, basis).samples
    if kind == "legendre-partial":
        return observe_lorenz_partial(traj, basis).samples
    raise ConfigError(f"unknown Lorenz observation kind {kind!r}",
                      "$.observation.kind")


def _lorenz_true_map(kind: str, basis):
    """The clean observation map handed to the oracle estimator."""
    if kind == "identity":
        return lambda traj: traj.states
    if kind == "legendre-partial":
        return lambda traj: observe_lorenz_partial(traj, basis).samples
    return lambda traj: observe_lorenz_full(traj, basis).samples


def _lorenz_instance(cfg: dict, box: ParameterBox, grid, basis,
                     inst_ss: np.random.SeedSequence, index: int) -> tuple[list, list]:
    data_ss, obs_ss, opt_ss = inst_ss.spawn(3)
    rng = np.random.default_rng(data_ss)
    sigma_star = rng.uniform(15.0, 25.0)
    rho_star = rng.uniform(40.0, 80.0)
    beta = float(cfg["beta"])
    x0 = rng.uniform(0.0, 1.0, size=3)
    n, dt = cfg["n_samples"], cfg["dt"]
    kind = cfg["observation"]["kind"]

    truth = integrate(lorenz_system(), (sigma_star, rho_star, beta), x0, n, dt)
    y_samples = _lorenz_observation(
        kind, truth, basis, float(cfg["observation"].get("noise_sigma", 0.0)),
        _seed_int(obs_ss))

    if cfg["estimate_beta"]:
        system = lorenz_system()
        omega_star = np.array([sigma_star, rho_star, beta])
    else:
        system = lorenz_system(fixed={"beta": beta})
        omega_star = np.array([sigma_star, rho_star])

    model_map = None
    if kind == "legendre-partial":
        def model_map(states, omega):
            return states[:, :2]

    problem = EstimationProblem(system, x0, n, dt, model_map=model_map)

    def pred_fn(omega):
        return integrate(system, omega, x0, n, dt)

    kernel_objective = None
    if "grid" in cfg["algorithms"] or "multistart" in cfg["algorithms"]:
        kernel_objective = make_kernel_objective(problem,
                                                 gram_from_samples(y_samples))

    records = []
    traces = []
    for alg in cfg["algorithms"]:
        if alg == "grid":
            result = grid_search(kernel_objective, box, grid)
        elif alg == "multistart":
            opt = _optimizer_config(cfg["optimizer"], _seed_int(opt_ss),
                                    start_center=omega_star)
            result = multistart_estimate(kernel_objective, box, opt)
            traces.append({"instance": index, "traces": result.traces})
        elif alg == "oracle":
            oracle = make_oracle_objective(problem, _lorenz_true_map(kind, basis),
                                           y_samples)
            result = grid_search(oracle, box, grid)
        else:
            raise ConfigError(f"algorithm {alg!r} not supported here",
                              "$.algorithms")
        record = _result_record(alg, result, omega_star, box.names, pred_fn)
        record["instance"] = index
        records.append(record)
    return records, traces


def run_lorenz_experiment(cfg: dict) -> ExperimentReport:
    """Estimate (sigma, rho[, beta]) for random Lorenz '63 instances."""
    box_cfg = copy.deepcopy(cfg["box"])
    grid_points = list(cfg["grid_points"])
    if cfg["estimate_beta"] and "beta" not in box_cfg["names"]:
        box_cfg["names"].append("beta")
        box_cfg["lower"].append(cfg["beta_bounds"][0])
        box_cfg["upper"].append(cfg["beta_bounds"][1])
        grid_points.append(grid_points[-1])
    box = _box_from_config(box_cfg)
    grid = make_grid(box, grid_points)
    basis = legendre_basis()
    master = np.random.SeedSequence(cfg["seed"])
    children = master.spawn(cfg["n_instances"] + 1)

    def one(i: int):
        return _lorenz_instance(cfg, box, grid, basis, children[i + 1], i)

    threads = resolve_threads(cfg["threads"])
    results = _run_indexed(_instance_guard(one, "instance"),
                           cfg["n_instances"], threads)
    records, traces = _split_results(results)
    summary = _parameter_summary(_ok(records), box.names, cfg["algorithms"])
    return ExperimentReport(cfg, records, summary, traces)


# ---------------------------------------------------------------------------
# Signal-length study


def _signal_length_rep(cfg: dict, box: ParameterBox, grid, linear_map,
                       rep_ss: np.random.SeedSequence, rep: int) -> list:
    data_ss, _ = rep_ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    params = np.asarray(cfg["parameter_set"], dtype=float)
    omega_star = rng.choice(params, size=3)
    x0 = _draw_pendulum_init(rng, cfg["init"]["std"], cfg["init"]["angles_only"])
    system = double_pendulum_system(cfg["gravity"])
    dt = cfg["dt"]

    records = []
    for t_f in cfg["t_f_values"]:
        n = max(3, round(t_f / dt))
        traj = integrate(system, omega_star, x0, n, dt)
        cart = cartesian_states(traj.states, omega_star[0], omega_star[1])
        y_samples = cart @ linear_map.T
        problem = EstimationProblem(system, x0, n, dt,
                                    model_map=_pendulum_model_map)
        objective = make_kernel_objective(problem, gram_from_samples(y_samples))
        result = grid_search(objective, box, grid)
        errors = estimation_error(result.omega_hat.values, omega_star)
        records.append({
            "rep": rep,
            "t_f": float(t_f),
            "n_samples": int(n),
            "omega_star": [float(v) for v in omega_star],
            "omega_hat": [float(v) for v in result.omega_hat.values],
            "names": list(box.names),
            "errors": [float(e) for e in errors],
            "score": float(result.score),
            "n_ode_solves": int(result.n_ode_solves),
            "wall_time": float(result.wall_time),
        })
    return records, []


def run_signal_length_experiment(cfg: dict) -> ExperimentReport:
    """Mean estimation error as a function of the signal duration."""
    box = _box_from_config(cfg["box"])
    grid = make_grid(box, cfg["grid_points"])
    master = np.random.SeedSequence(cfg["seed"])
    children = master.spawn(cfg["n_repetitions"] + 1)
    shared_rng = np.random.default_rng(children[0])
    linear_map = shared_rng.normal(size=(cfg["observation"]["dim"], 4))

    def one(i: int):
        return _signal_length_rep(cfg, box, grid, linear_map, children[i + 1], i)

    threads = resolve_threads(cfg["threads"])
    results = _run_indexed(_instance_guard(one, "rep"),
                           cfg["n_repetitions"], threads)
    records, _ = _split_results(results)

    summary = {}
    for t_f in cfg["t_f_values"]:
        rows = [r for r in _ok(records) if r["t_f"] == float(t_f)]
        pooled = np.array([e for r in rows for e in r["errors"]])
        summary[f"t_f={t_f:g}"] = {
            "mean_error": float(pooled.mean()),
            "std_error": float(pooled.std()),
            "n_samples": int(rows[0]["n_samples"]) if rows else 0,
            "n": int(pooled.size),
        }
    return ExperimentReport(cfg, records, summary, {})


# ---------------------------------------------------------------------------
# Grid-refinement study


def _grid_refinement_rep(cfg: dict, basis, rep_ss: np.random.SeedSequence,
                         rep: int) -> list:
    data_ss, _ = rep_ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    sigma_lo, sigma_hi = cfg["sigma_bounds"]
    sigma_star = rng.uniform(sigma_lo, sigma_hi)
    rho_star = rng.uniform(*cfg["rho_bounds"])
    beta = float(cfg["beta"])
    x0 = rng.uniform(0.0, 1.0, size=3)
    n, dt = cfg["n_samples"], cfg["dt"]

    truth = integrate(lorenz_system(), (sigma_star, rho_star, beta), x0, n, dt)
    y_samples = observe_lorenz_full(truth, basis).samples
    system = lorenz_system(fixed={"rho": rho_star, "beta": beta})
    box = ParameterBox(np.array([sigma_lo]), np.array([sigma_hi]), ("sigma",))
    problem = EstimationProblem(system, x0, n, dt)
    objective = make_kernel_objective(problem, gram_from_samples(y_samples))

    records = []
    for size in cfg["grid_sizes"]:
        grid = make_grid(box, [size])
        result = grid_search(objective, box, grid)
        sigma_hat = float(result.omega_hat.values[0])
        nearest = float(np.abs(grid.axes[0] - sigma_star).min())
        records.append({
            "rep": rep,
            "grid_size": int(size),
            "sigma_star": float(sigma_star),
            "rho_star": float(rho_star),
            "sigma_hat": sigma_hat,
            "error": abs(sigma_hat - sigma_star) / sigma_star,
            "nearest_grid_error": nearest / sigma_star,
            "score": float(result.score),
            "n_ode_solves": int(result.n_ode_solves),
            "wall_time": float(result.wall_time),
        })
    return records, []


def run_grid_refinement(cfg: dict) -> ExperimentReport:
    """Median single-parameter error as the search grid is refined."""
    basis = legendre_basis()
    master = np.random.SeedSequence(cfg["seed"])
    children = master.spawn(cfg["n_repetitions"] + 1)

    def one(i: int):
        return _grid_refinement_rep(cfg, basis, children[i + 1], i)

    threads = resolve_threads(cfg["threads"])
    results = _run_indexed(_instance_guard(one, "rep"),
                           cfg["n_repetitions"], threads)
    records, _ = _split_results(results)

    summary = {}
    for size in cfg["grid_sizes"]:
        errs = [r["error"] for r in _ok(records) if r["grid_size"] == int(size)]
        summary[f"grid={size}"] = _box_stats(errs)
    return ExperimentReport(cfg, records, summary, {})


# ---------------------------------------------------------------------------
# Dispatch and report output


_RUNNERS = {
    "pendulum": run_pendulum_experiment,
    "lorenz": run_lorenz_experiment,
    "signal_length": run_signal_length_experiment,
    "grid_refinement": run_grid_refinement,
    "baselines": run_baselines,
}


def run_experiment(cfg: dict) -> ExperimentReport:
    """Run the experiment named by a normalized config."""
    return _RUNNERS[cfg["experiment"]](cfg)


def _flatten_record(record: dict) -> dict:
    flat = {}
    names = record.get("names")
    for key, value in record.items():
        if key == "names":
            continue
        if isinstance(value, list) and names and len(value) == len(names):
            for name, v in zip(names, value):
                flat[f"{key}_{name}"] = v
        elif isinstance(value, list):
            for i, v in enumerate(value):
                flat[f"{key}_{i}"] = v
        else:
            flat[key] = value
    return flat


def write_report(report: ExperimentReport, out_dir) -> dict:
    """Write report.json, instances.csv, and optional optimizer traces.

    report.json excludes wall-clock timings so that reruns with the same
    config and seed are byte-identical; per-row timings live in the CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "instances": out / "instances.csv"}

    payload = json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    paths["report"].write_text(payload)

    rows = [_flatten_record(r) for r in report.records]
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(paths["instances"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)

    if report.config.get("write_traces") and report.traces:
        for instance, start_traces in sorted(report.traces.items()):
            trace_path = out / f"trace_{instance}.csv"
            with open(trace_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                names = report.config["box"]["names"]
                writer.writerow(["start", "iter", *names, "score"])
                for start_idx, trace in enumerate(start_traces):
                    for it, omega, score in trace:
                        writer.writerow([start_idx, it, *omega, score])
            paths[f"trace_{instance}"] = trace_path
    return paths
