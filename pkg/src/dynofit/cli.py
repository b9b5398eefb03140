"""Command-line entry points: simulate, observe, estimate, experiment."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .dynamics import (
    DEFAULT_GRAVITY,
    cartesian_trajectory,
    double_pendulum_system,
    integrate,
    lorenz_system,
    trajectory_from_csv,
    trajectory_to_csv,
)
from .errors import ConfigError, DynofitError
from .estimator import (
    estimation_error,
    grid_search,
    make_grid,
    multistart_estimate,
)
from .harness import _box_from_config, _optimizer_config  # shared config plumbing
from .kernelscore import EstimationProblem, gram_from_samples, make_kernel_objective
from .observation import (
    Canvas,
    NoiseSpec,
    ObservationSeries,
    observation_from_binary,
    observation_from_csv,
    observation_to_binary,
    observation_to_csv,
    observe_linear,
    observe_lorenz_full,
    observe_lorenz_noisy,
    observe_lorenz_partial,
    render_pendulum_video,
)

_OBSERVE_KINDS = ("identity", "legendre", "legendre-noisy", "legendre-partial",
                  "linear", "video")


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError:
        raise ConfigError(f"expected a comma-separated float list, got {text!r}")


def _build_system(name: str, gravity: float, fixed: dict | None = None):
    if name == "lorenz63":
        return lorenz_system(fixed=fixed)
    if name in ("double-pendulum", "double_pendulum"):
        return double_pendulum_system(gravity)
    raise ConfigError(f"unknown system {name!r}")


def _cmd_simulate(args) -> int:
    system = _build_system(args.system, args.gravity)
    params = _parse_floats(args.params)
    x0 = _parse_floats(args.x0)
    traj = integrate(system, params, x0, args.n, args.dt, substeps=args.substeps)
    if args.cartesian:
        if system.kind != "double_pendulum":
            raise ConfigError("--cartesian only applies to the double pendulum")
        traj = cartesian_trajectory(traj, params[0], params[1])
    trajectory_to_csv(traj, args.out)
    print(f"wrote {traj.n_samples} x {traj.state_dim} trajectory to {args.out}")
    return 0


def _write_observation(obs: ObservationSeries, path: str) -> None:
    if str(path).endswith(".obs"):
        observation_to_binary(obs, path)
    else:
        observation_to_csv(obs, path)


def _read_observation(path: str) -> ObservationSeries:
    if str(path).endswith(".obs"):
        return observation_from_binary(path)
    return observation_from_csv(path)


def _cmd_observe(args) -> int:
    traj = trajectory_from_csv(args.traj)
    kind = args.kind
    if kind == "identity":
        obs = ObservationSeries(traj.dt, traj.states)
    elif kind == "legendre":
        obs = observe_lorenz_full(traj)
    elif kind == "legendre-noisy":
        obs = observe_lorenz_noisy(
            traj, NoiseSpec("state_gaussian", args.noise_sigma, args.seed))
    elif kind == "legendre-partial":
        obs = observe_lorenz_partial(traj)
    elif kind == "linear":
        rng = np.random.default_rng(args.seed)
        matrix = rng.normal(size=(args.linear_dim, traj.state_dim))
        obs = observe_linear(traj, matrix, args.noise_sigma, args.seed)
    elif kind == "video":
        extent = args.world_half_extent
        if extent is None:
            extent = 1.1 * float(np.abs(traj.states).max())
        obs = render_pendulum_video(traj, Canvas(extent))
    else:
        raise ConfigError(f"unknown observation kind {kind!r}")
    _write_observation(obs, args.out)
    print(f"wrote {obs.n_samples} x {obs.dim} observation to {args.out}")
    return 0


def _load_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path))
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}")


def _cmd_estimate(args) -> int:
    cfg = _load_json(args.config)
    for key in ("system", "x0", "box", "algorithm"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}", f"$.{key}")
    obs = _read_observation(args.obs)

    system_cfg = cfg["system"]
    system = _build_system(system_cfg.get("kind", ""),
                           system_cfg.get("gravity", DEFAULT_GRAVITY),
                           system_cfg.get("fixed"))
    box = _box_from_config(cfg["box"])
    if box.dim != len(system.parameter_names):
        raise ConfigError("box dimension must match the system's free parameters",
                          "$.box")

    coords = cfg.get("model_coords", "states")
    if coords == "states":
        model_map = None
    elif coords == "cartesian":
        def model_map(states, omega):
            return harness._pendulum_model_map(states, omega)
    elif coords == "first2":
        def model_map(states, omega):
            return states[:, :2]
    else:
        raise ConfigError(f"unknown model_coords {coords!r}", "$.model_coords")

    problem = EstimationProblem(system, np.asarray(cfg["x0"], float),
                                obs.n_samples, obs.dt, model_map=model_map,
                                eps_x=cfg.get("eps_x"))
    objective = make_kernel_objective(problem, gram_from_samples(obs.samples))

    algorithm = cfg["algorithm"]
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    start = time.perf_counter()
    if algorithm == "grid":
        grid_points = cfg.get("grid_points")
        if not grid_points:
            raise ConfigError("grid algorithm needs grid_points", "$.grid_points")
        result = grid_search(objective, box, make_grid(box, grid_points),
                             threads=args.threads or 1)
    elif algorithm == "multistart":
        opt_cfg = dict(harness._OPTIMIZER_DEFAULTS)
        opt_cfg.update(cfg.get("optimizer", {}))
        result = multistart_estimate(objective, box,
                                     _optimizer_config(opt_cfg, seed),
                                     threads=args.threads or 1)
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}", "$.algorithm")
    elapsed = time.perf_counter() - start

    payload = result.to_json_dict()
    payload["wall_time"] = elapsed
    if "omega_star" in cfg:
        star = np.asarray(cfg["omega_star"], float)
        payload["errors"] = [float(e)
                             for e in estimation_error(result.omega_hat.values, star)]
    out_path = Path(args.out or "estimate_result.json")
    out_path.write_text(json.dumps(harness._jsonify(payload), sort_keys=True,
                                   indent=2) + "\n")
    names = ", ".join(f"{n}={v:.6g}"
                      for n, v in zip(result.omega_hat.names,
                                      result.omega_hat.values))
    print(f"omega_hat: {names}  score={result.score:.6f}  -> {out_path}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = harness.load_config(args.config, scale=args.scale, seed=args.seed,
                              threads=args.threads)
    report = harness.run_experiment(cfg)
    out_dir = args.out or cfg.get("output_dir") or "dynofit_report"
    paths = harness.write_report(report, out_dir)
    print(f"experiment {cfg['experiment']!r}: {len(report.records)} records")
    for key, stats in sorted(report.summary.items()):
        if isinstance(stats, dict) and "overall_median_error" in stats:
            print(f"  {key}: overall median error "
                  f"{stats['overall_median_error']:.4f}")
        elif isinstance(stats, dict) and "median" in stats:
            print(f"  {key}: median error {stats['median']:.4f}")
        elif isinstance(stats, dict) and "mean_error" in stats:
            print(f"  {key}: mean error {stats['mean_error']:.4f}")
    print(f"report: {paths['report']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynofit",
        description="Estimate ODE parameters from observations with an "
                    "unknown observation function.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="integrate a system to a CSV trajectory")
    p_sim.add_argument("--system", required=True,
                       choices=["lorenz63", "double-pendulum"])
    p_sim.add_argument("--params", required=True,
                       help="comma-separated parameter values")
    p_sim.add_argument("--x0", required=True, help="comma-separated initial state")
    p_sim.add_argument("--n", type=int, required=True, help="number of samples")
    p_sim.add_argument("--dt", type=float, required=True)
    p_sim.add_argument("--substeps", type=int, default=1)
    p_sim.add_argument("--gravity", type=float, default=DEFAULT_GRAVITY)
    p_sim.add_argument("--cartesian", action="store_true",
                       help="emit Cartesian bob coordinates (pendulum only)")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_obs = sub.add_parser("observe", help="apply an observation map to a trajectory")
    p_obs.add_argument("--traj", required=True, help="input trajectory CSV")
    p_obs.add_argument("--kind", required=True, choices=_OBSERVE_KINDS)
    p_obs.add_argument("--noise-sigma", type=float, default=0.0)
    p_obs.add_argument("--seed", type=int, default=0)
    p_obs.add_argument("--linear-dim", type=int, default=40)
    p_obs.add_argument("--world-half-extent", type=float, default=None)
    p_obs.add_argument("--out", required=True,
                       help="output path (.csv dense or .obs binary)")
    p_obs.set_defaults(func=_cmd_observe)

    p_est = sub.add_parser("estimate", help="estimate parameters from an observation")
    p_est.add_argument("--obs", required=True, help="observation file (.csv or .obs)")
    p_est.add_argument("--config", required=True, help="estimation config JSON")
    p_est.add_argument("--seed", type=int, default=None)
    p_est.add_argument("--threads", type=int, default=None)
    p_est.add_argument("--out", default=None, help="result JSON path")
    p_est.set_defaults(func=_cmd_estimate)

    p_exp = sub.add_parser("experiment", help="run a full experiment from a config")
    p_exp.add_argument("--config", required=True, help="experiment config JSON")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--threads", type=int, default=None)
    p_exp.add_argument("--scale", type=float, default=1.0,
                       help="uniformly shrink instance/sample/grid sizes")
    p_exp.add_argument("--out", default=None, help="output directory")
    p_exp.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DynofitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
