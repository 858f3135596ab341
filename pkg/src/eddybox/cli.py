"""Command-line entry point.

Configuration comes from a flat INI-style file (sections per subcommand plus
[model], [integrator], [run]) overlaid by command-line flags; defaults
reproduce the reference parameter set and run settings (dt = 2e-6, save
stride 100, burn-in 4, end time 10).  Every run writes its artifacts plus a
resolved-config echo and a manifest into one output directory; artifacts are
reproducible byte-for-byte given identical configuration and seed (the only
timestamp lives in the manifest and is excluded from hashed content).

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 failed
checks in `verify` mode.
"""

from __future__ import annotations

import argparse
import configparser
import math
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import homogenization, model, stats
from .ensemble import (
    EnsembleConfig,
    EnsembleDataset,
    forecast_experiment,
    run_ensemble,
    transition_experiment,
)
from .integrator import (
    IntegratorConfig,
    StepFailureError,
    load_trajectory,
    save_trajectory,
    save_trajectory_csv,
    simulate_trajectory,
)
from .ioutil import sha256_hex, stable_json_dumps
from .model import DimensionalScales, ModelParams, ModelVariant, standard_params
from .stats import EventSpec

__all__ = ["main", "parse_config", "dispatch", "ConfigError", "RunConfig"]


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration schema: section -> key -> (type tag, default)

_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "model": {
        "eps_t": ("float", 1.0 / 400.0),
        "eps": ("float", 1.0 / 5000.0),
        "p_a": ("float", 6.0),
        "p_e": ("float", 80.0),
        "sigma_x": ("float", 0.005),
        "sigma_y": ("float", 0.15),
        "sigma_eps": ("float", 0.0),
        "mean_diffusion": ("bool", True),
    },
    "integrator": {
        "dt": ("float", 2e-6),
        "solver": ("str", "auto"),
        "fixed_point_iters": ("int", 10),
        "save_stride": ("int", 100),
        "residual_check_stride": ("int", 10_000),
    },
    "run": {
        "variant": ("str", "full"),
        "members": ("int", 200),
        "seed": ("int", 0),
        "units": ("str", "nd"),
        "workers": ("int", 0),
    },
    "simulate": {
        "t0": ("float", 0.0),
        "t_end": ("float", 10.0),
        "initial_state": ("str", ""),
        "write_csv": ("bool", True),
    },
    "ensemble": {
        "t_end": ("float", 10.0),
        "t_burn": ("float", 4.0),
        "initial_state": ("str", ""),
        "hist_regime": ("str", "single"),
        "events": ("str", "x<=0.96,x>=0.985"),
        "acf_max_lag": ("float", 1.0),
    },
    "equilibria": {
        "box": ("str", "0.85,1.15,-0.1,1.6"),
        "grid_n": ("int", 40),
    },
    "bifurcation": {
        "p_min": ("float", 0.05),
        "p_max": ("float", 0.3),
        "n_steps": ("int", 40),
        "grid_n": ("int", 25),
    },
    "homogenize": {
        "x": ("float", 1.0),
        "y": ("float", 0.093),
        "n_trajectories": ("int", 10_000),
        "lag_horizon": ("float", 0.0),
        "dt_fast": ("float", 0.0),
    },
    "forecast": {
        "truth": ("str", ""),
        "event": ("str", "x>=0.985"),
        "verification_time": ("float", float("nan")),
        "leads": ("str", "0.00913,0.00457,0.00228,0.00114,0.00046,0.0"),
        "n_members": ("int", 500),
    },
    "transitions": {
        "low": ("float", 0.5),
        "high": ("float", 0.8),
        "t_end": ("float", 54.0),
        "t_burn": ("float", 4.0),
        "tau_max": ("float", 5.0),
        "n_tau": ("int", 20),
        "initial_state": ("str", ""),
        "save_stride": ("int", 1000),
    },
    "stats": {
        "data": ("str", ""),
        "hist_regime": ("str", "single"),
        "events": ("str", "x<=0.96,x>=0.985"),
        "acf_max_lag": ("float", 1.0),
    },
    "lyapunov": {
        "alpha": ("float", 0.0),
        "beta": ("float", 0.0),
        "radius": ("float", 1000.0),
        "n_samples": ("int", 200_000),
    },
    "verify": {
        "level": ("str", "quick"),
    },
}

_SUBCOMMANDS = (
    "simulate", "ensemble", "equilibria", "bifurcation", "homogenize",
    "forecast", "transitions", "stats", "lyapunov", "verify",
)

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(section: str, key: str, kind: str, raw: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from None


def _load_file(path: str) -> dict[str, dict[str, object]]:
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(file_path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            kind = _SCHEMA[section][key][0]
            values.setdefault(section, {})[key] = _convert(section, key, kind, raw)
    return values


@dataclass
class RunConfig:
    """A fully resolved run: typed objects plus the flat echo that is hashed."""

    subcommand: str
    params: ModelParams
    variant: ModelVariant
    integrator: IntegratorConfig
    out_dir: Path
    seed: int
    members: int
    units: str
    workers: int | None
    payload: dict
    resolved: dict
    resolved_text: str
    config_sha256: str

    def scales(self) -> DimensionalScales:
        return DimensionalScales()


def _resolve(subcommand: str, file_values: dict, overrides: dict) -> dict[str, dict[str, object]]:
    resolved: dict[str, dict[str, object]] = {}
    for section in ("model", "integrator", "run", subcommand):
        resolved[section] = {}
        for key, (kind, default) in _SCHEMA[section].items():
            value = default
            if section in file_values and key in file_values[section]:
                value = file_values[section][key]
            if (section, key) in overrides and overrides[(section, key)] is not None:
                value = overrides[(section, key)]
            resolved[section][key] = value
    return resolved


def _render(resolved: dict[str, dict[str, object]], derived_p: float) -> str:
    lines = []
    for section in sorted(resolved):
        lines.append(f"[{section}]")
        for key in sorted(resolved[section]):
            value = resolved[section][key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        if section == "model":
            lines.append(f"p = {derived_p!r}")
        lines.append("")
    return "\n".join(lines)


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Parse flags (and an optional config file) into a resolved RunConfig."""
    args = _build_parser().parse_args(argv)
    if args.subcommand is None:
        raise ConfigError("no subcommand given (see --help)")
    file_values = _load_file(args.config) if args.config else {}

    overrides: dict[tuple[str, str], object] = {
        ("run", "seed"): args.seed,
        ("run", "members"): args.members,
        ("run", "variant"): args.variant,
        ("run", "units"): args.units,
        ("run", "workers"): args.workers,
        ("model", "p_e"): args.p_e,
        ("model", "sigma_eps"): args.sigma_eps,
        ("integrator", "dt"): args.dt,
    }
    if args.no_mean_diffusion:
        overrides[("model", "mean_diffusion")] = False
    for key in _SCHEMA[args.subcommand]:
        attr = f"sub_{key}"
        if hasattr(args, attr):
            overrides[(args.subcommand, key)] = getattr(args, attr)

    resolved = _resolve(args.subcommand, file_values, overrides)

    m = resolved["model"]
    try:
        params = ModelParams(
            eps_T=m["eps_t"], eps=m["eps"], P_a=m["p_a"], P_e=m["p_e"],
            sigma_x=m["sigma_x"], sigma_y=m["sigma_y"], sigma_eps=m["sigma_eps"],
            mean_diffusion=m["mean_diffusion"],
        )
        i = resolved["integrator"]
        integrator = IntegratorConfig(
            dt=i["dt"], solver=i["solver"], n_fixed_point_iters=i["fixed_point_iters"],
            save_stride=i["save_stride"], residual_check_stride=i["residual_check_stride"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    r = resolved["run"]
    if r["variant"] not in ("full", "averaged", "gaussian"):
        raise ConfigError(f"[run] variant: unknown variant {r['variant']!r}")
    if r["units"] not in ("nd", "years"):
        raise ConfigError(f"[run] units: must be 'nd' or 'years', got {r['units']!r}")
    variant = params.variant(r["variant"])

    text = _render(resolved, params.P)
    out_dir = Path(args.out) if args.out else Path("runs") / args.subcommand
    return RunConfig(
        subcommand=args.subcommand,
        params=params,
        variant=variant,
        integrator=integrator,
        out_dir=out_dir,
        seed=r["seed"],
        members=r["members"],
        units=r["units"],
        workers=r["workers"] or None,
        payload=dict(resolved[args.subcommand]),
        resolved=resolved,
        resolved_text=text,
        config_sha256=sha256_hex(text),
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eddybox",
        description="Stochastic two-box ocean model with eddy noise: "
                    "simulation, reduced-model closures, and statistics.",
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="output directory (default runs/<subcommand>)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--members", type=int, default=None)
    parser.add_argument("--variant", choices=("full", "averaged", "gaussian"), default=None)
    parser.add_argument("--no-mean-diffusion", action="store_true",
                        help="drop the linear diffusive exchange terms")
    parser.add_argument("--units", choices=("nd", "years"), default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--p-e", type=float, default=None, dest="p_e",
                        help="eddy Peclet number (P is derived as sqrt(eps)*P_e)")
    parser.add_argument("--sigma-eps", type=float, default=None, dest="sigma_eps")
    parser.add_argument("--dt", type=float, default=None)

    subs = parser.add_subparsers(dest="subcommand")
    for name in _SUBCOMMANDS:
        sub = subs.add_parser(name)
        for key, (kind, _default) in _SCHEMA[name].items():
            flag = "--" + key.replace("_", "-")
            if kind == "bool":
                sub.add_argument(flag, dest=f"sub_{key}", default=None,
                                 type=lambda s: _convert(name, key, "bool", s))
            else:
                sub.add_argument(flag, dest=f"sub_{key}", default=None,
                                 type={"float": float, "int": int, "str": str}[kind])
    return parser


# ---------------------------------------------------------------------------
# artifact helpers


def _parse_state(raw: str, dim: int) -> np.ndarray:
    if not raw.strip():
        return np.zeros(dim)
    try:
        values = np.array([float(tok) for tok in raw.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse state {raw!r}") from None
    if len(values) != dim:
        raise ConfigError(f"state {raw!r} has {len(values)} components, expected {dim}")
    return values


def _parse_events(raw: str) -> tuple[EventSpec, ...]:
    events = []
    for token in filter(None, (t.strip() for t in raw.split(","))):
        match = re.fullmatch(r"([xy])\s*(<=|>=)\s*([-+0-9.eE]+)", token)
        if match is None:
            raise ConfigError(f"cannot parse event {token!r} (expected e.g. 'x<=0.96')")
        events.append(EventSpec(
            observable=match.group(1),
            direction="le" if match.group(2) == "<=" else "ge",
            threshold=float(match.group(3)),
        ))
    return tuple(events)


class _RunWriter:
    def __init__(self, rc: RunConfig):
        self.rc = rc
        self.dir = rc.out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.extra: dict = {}
        (self.dir / "config.resolved.ini").write_text(rc.resolved_text)
        self.artifacts.append("config.resolved.ini")

    def write_json(self, name: str, payload: dict) -> None:
        body = {
            "config": self.rc.resolved,
            "config_sha256": self.rc.config_sha256,
            **payload,
        }
        (self.dir / name).write_text(stable_json_dumps(body) + "\n")
        self.artifacts.append(name)

    def write_csv(self, name: str, header: str, rows) -> None:
        lines = [f"# config_sha256: {self.rc.config_sha256}", header]
        for row in rows:
            lines.append(",".join("" if v is None else f"{v!r}" if isinstance(v, float) else str(v)
                                  for v in row))
        (self.dir / name).write_text("\n".join(lines) + "\n")
        self.artifacts.append(name)

    def finish(self, status: str) -> None:
        manifest = {
            "subcommand": self.rc.subcommand,
            "config_sha256": self.rc.config_sha256,
            "artifacts": sorted(self.artifacts),
            "status": status,
            "created_unix": time.time(),
        }
        manifest.update(self.extra)
        (self.dir / "manifest.json").write_text(stable_json_dumps(manifest) + "\n")


def _maybe_years(rc: RunConfig, payload: dict, keys: tuple[str, ...]) -> dict:
    if rc.units != "years":
        return payload
    scale = rc.scales().tau_d_years
    extra = {}
    for key, value in payload.items():
        if any(key.startswith(k) for k in keys) and isinstance(value, (int, float)):
            extra[key + "_years"] = value * scale
    payload.update(extra)
    return payload


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_simulate(rc: RunConfig, w: _RunWriter) -> int:
    s0 = _parse_state(rc.payload["initial_state"], rc.variant.state_dim)
    traj = simulate_trajectory(
        rc.variant, s0, (rc.payload["t0"], rc.payload["t_end"]),
        rc.integrator, rc.params, rng_seed=rc.seed,
    )
    save_trajectory(traj, w.dir / "trajectory.traj")
    w.artifacts.append("trajectory.traj")
    if rc.payload["write_csv"]:
        save_trajectory_csv(traj, w.dir / "trajectory.csv")
        w.artifacts.append("trajectory.csv")
    w.write_json("summary.json", {
        "variant": rc.variant.label,
        "n_samples": len(traj),
        "final_state": traj.states[-1].tolist(),
        "max_residual": traj.max_residual,
    })
    return 0


def _stats_outputs(rc: RunConfig, w: _RunWriter, dataset: EnsembleDataset, payload: dict) -> None:
    events = _parse_events(payload["events"])
    ranges = (stats.BISTABLE_RANGES if payload["hist_regime"] == "bistable"
              else stats.SINGLE_EQUILIBRIUM_RANGES)
    acc = stats.EnsembleStats(x_range=ranges[0], y_range=ranges[1], events=events)
    for member in dataset.members:
        if member is not None:
            acc.accumulate(member.states[:, :2])

    acfs = {}
    for var in ("x", "y"):
        series = dataset.series(var)
        acfs[var] = stats.autocorrelation(series, dataset.sample_dt, payload["acf_max_lag"])

    summary = {
        "n_samples": acc.n,
        "n_members": dataset.n_members,
        "n_failures": len(dataset.failures),
        "burn_in_flag": dataset.burn_in_flag,
        "mean_x": acc.mean_x,
        "mean_y": acc.mean_y,
        "std_x": acc.std_x,
        "std_y": acc.std_y,
        "corr_xy": acc.corr_xy,
        "skewness_x": acc.skewness_x,
        "mode_xy": list(acc.mode_xy()),
        "decorrelation_time_x": acfs["x"].decorrelation_time,
        "decorrelation_time_y": acfs["y"].decorrelation_time,
        "events": {},
    }
    for event in events:
        acf = acfs[event.observable]
        ep = stats.event_probability(acc, event, acf)
        summary["events"][event.describe()] = {
            "probability": ep.probability,
            "std_error": ep.std_error,
            "count": ep.count,
            "n_eff": ep.n_eff,
        }
    _maybe_years(rc, summary, ("decorrelation_time",))
    w.write_json("summary.json", summary)

    dens = stats.density_estimate(acc)
    for name, table in (("density_x", dens.x), ("density_y", dens.y)):
        centers = 0.5 * (table.edges_x[:-1] + table.edges_x[1:])
        w.write_csv(f"{name}.csv", "bin_center,density",
                    [(float(c), float(d)) for c, d in zip(centers, table.density)])
    xy = dens.xy
    rows = []
    for i in range(len(xy.edges_x) - 1):
        for j in range(len(xy.edges_y) - 1):
            rows.append((
                float(0.5 * (xy.edges_x[i] + xy.edges_x[i + 1])),
                float(0.5 * (xy.edges_y[j] + xy.edges_y[j + 1])),
                float(xy.density[i, j]),
            ))
    w.write_csv("density_xy.csv", "x,y,density", rows)
    for var in ("x", "y"):
        acf = acfs[var]
        w.write_csv(f"acf_{var}.csv", "lag,acf",
                    [(float(l), float(a)) for l, a in zip(acf.lags, acf.acf)])


def _cmd_ensemble(rc: RunConfig, w: _RunWriter) -> int:
    init = rc.payload["initial_state"]
    cfg = EnsembleConfig(
        variant=rc.variant,
        params=rc.params,
        integrator=rc.integrator,
        n_members=rc.members,
        t_end=rc.payload["t_end"],
        t_burn=rc.payload["t_burn"],
        initial_condition=_parse_state(init, rc.variant.state_dim) if init.strip() else None,
        base_seed=rc.seed,
        n_workers=rc.workers,
    )
    dataset = run_ensemble(cfg, out_dir=w.dir / "dataset")
    w.artifacts.append("dataset/manifest.json")
    _stats_outputs(rc, w, dataset, rc.payload)
    if dataset.failures:
        w.extra["failed_members"] = [f.member for f in dataset.failures]
        return 2
    return 0


def _cmd_stats(rc: RunConfig, w: _RunWriter) -> int:
    data = rc.payload["data"]
    if not data.strip():
        raise ConfigError("[stats] data: path to a dataset directory is required")
    path = Path(data)
    if not (path / "manifest.json").exists():
        raise ConfigError(f"[stats] data: no dataset manifest under {path}")
    dataset = EnsembleDataset.load(path)
    _stats_outputs(rc, w, dataset, rc.payload)
    return 0


def _cmd_equilibria(rc: RunConfig, w: _RunWriter) -> int:
    tokens = [float(t) for t in rc.payload["box"].split(",")]
    if len(tokens) != 4:
        raise ConfigError(f"[equilibria] box: expected 4 comma-separated floats")
    box = ((tokens[0], tokens[1]), (tokens[2], tokens[3]))
    eqs = model.find_equilibria(rc.variant, rc.params, search_box=box,
                                grid_n=rc.payload["grid_n"])
    w.write_csv("equilibria.csv", "x,y,stability",
                [(e.x, e.y, e.stability.value) for e in eqs])
    w.write_json("summary.json", {
        "variant": rc.variant.label,
        "P": rc.params.P,
        "equilibria": [{"x": e.x, "y": e.y, "stability": e.stability.value} for e in eqs],
    })
    return 0


def _cmd_bifurcation(rc: RunConfig, w: _RunWriter) -> int:
    result = model.bifurcation_scan(
        rc.variant, rc.params,
        (rc.payload["p_min"], rc.payload["p_max"]),
        rc.payload["n_steps"],
        grid_n=rc.payload["grid_n"],
    )
    w.write_csv("bifurcation.csv", "P,equilibrium_count",
                [(float(P), int(c)) for P, c in zip(result.P_values, result.counts)])
    w.write_json("summary.json", {
        "critical_values": result.critical_values,
        "brackets": [list(b) for b in result.brackets],
        "unreliable_intervals": [list(b) for b in result.unreliable_intervals],
    })
    return 0


def _cmd_homogenize(rc: RunConfig, w: _RunWriter) -> int:
    x, y = rc.payload["x"], rc.payload["y"]
    p = rc.params
    closed_cov = homogenization.fast_stationary_covariance(x, y, p)
    flux = homogenization.mean_eddy_flux(x, y, p)
    corr = homogenization.diffusion_correction(x, y, p)
    est = homogenization.oracle_estimate(
        x, y, p,
        n_trajectories=rc.payload["n_trajectories"],
        lag_horizon=rc.payload["lag_horizon"] or None,
        dt_fast=rc.payload["dt_fast"] or None,
        rng_seed=rc.seed,
    )
    emp_cov = np.cov(est.final_states.T, ddof=1)
    rows = []
    labels = ("flux_x", "flux_y")
    for i in range(2):
        se = est.mean_flux_se[i]
        z = (est.mean_flux_hat[i] - flux[i]) / se if se > 0 else 0.0
        rows.append((labels[i], float(flux[i]), float(est.mean_flux_hat[i]), float(se), float(z)))
    for (i, j), label in (((0, 0), "C_xx"), ((0, 1), "C_xy"), ((1, 1), "C_yy")):
        se = est.C_se[i, j]
        z = (est.C_hat[i, j] - corr.C[i, j]) / se if se > 0 else 0.0
        rows.append((label, float(corr.C[i, j]), float(est.C_hat[i, j]), float(se), float(z)))
    w.write_csv("homogenize.csv", "quantity,closed_form,oracle,std_error,z", rows)
    w.write_json("homogenize.json", {
        "evaluated_at": [x, y],
        "sigma_eps": p.sigma_eps,
        "mean_eddy_flux": flux.tolist(),
        "C": corr.C.tolist(),
        "A_limit": corr.A.tolist(),
        "A_general": corr.general_square_root().tolist(),
        "stationary_cov": closed_cov.matrix.tolist(),
        "oracle": {
            "mean_flux_hat": est.mean_flux_hat.tolist(),
            "mean_flux_se": est.mean_flux_se.tolist(),
            "C_hat": est.C_hat.tolist(),
            "C_se": est.C_se.tolist(),
            "n_samples": est.n_samples,
            "lag_horizon": est.lag_horizon,
            "dt_fast": est.dt_fast,
            "stationarity_flag": est.stationarity_flag,
            "empirical_final_cov": emp_cov.tolist(),
        },
    })
    max_z = max(abs(r[4]) for r in rows)
    return 0 if max_z <= 5.0 else 2


def _cmd_forecast(rc: RunConfig, w: _RunWriter) -> int:
    truth_path = rc.payload["truth"]
    if not truth_path.strip():
        raise ConfigError("[forecast] truth: path to a full-model trajectory is required")
    if math.isnan(rc.payload["verification_time"]):
        raise ConfigError("[forecast] verification_time is required")
    truth = load_trajectory(truth_path)
    event = _parse_events(rc.payload["event"])
    if len(event) != 1:
        raise ConfigError("[forecast] event: exactly one event required")
    leads = [float(t) for t in rc.payload["leads"].split(",")]
    result = forecast_experiment(
        truth, event[0], rc.payload["verification_time"], leads,
        rc.payload["n_members"], rc.variant, rc.params, rc.integrator, base_seed=rc.seed,
    )
    w.write_csv("forecast.csv", "lead,snapped_lead,probability",
                [(float(a), float(b), float(c)) for a, b, c in
                 zip(result.lead_times, result.snapped_lead_times, result.probabilities)])
    summary = {
        "event": event[0].describe(),
        "variant": rc.variant.label,
        "verification_time": result.verification_time,
        "n_members": result.n_members,
        "lead_times": result.lead_times.tolist(),
        "probabilities": result.probabilities.tolist(),
    }
    _maybe_years(rc, summary, ("verification_time",))
    w.write_json("summary.json", summary)
    return 0


def _cmd_transitions(rc: RunConfig, w: _RunWriter) -> int:
    init = rc.payload["initial_state"]
    integ = IntegratorConfig(
        dt=rc.integrator.dt, solver=rc.integrator.solver,
        n_fixed_point_iters=rc.integrator.n_fixed_point_iters,
        save_stride=rc.payload["save_stride"],
        residual_check_stride=rc.integrator.residual_check_stride,
    )
    cfg = EnsembleConfig(
        variant=rc.variant, params=rc.params, integrator=integ,
        n_members=rc.members, t_end=rc.payload["t_end"], t_burn=rc.payload["t_burn"],
        initial_condition=_parse_state(init, rc.variant.state_dim) if init.strip() else None,
        base_seed=rc.seed, n_workers=rc.workers,
    )
    tau_grid = np.linspace(0.0, rc.payload["tau_max"], rc.payload["n_tau"] + 1)
    curves = transition_experiment(cfg, rc.payload["low"], rc.payload["high"], tau_grid)
    w.write_csv(
        "transitions.csv",
        "tau,p01,p10,n01_events,n01_conditioning,n10_events,n10_conditioning",
        [(float(t), float(a), float(b), int(c), int(d), int(e), int(f))
         for t, a, b, c, d, e, f in zip(
             curves.tau, curves.p01, curves.p10,
             curves.n01_events, curves.n01_conditioning,
             curves.n10_events, curves.n10_conditioning)],
    )
    w.write_json("summary.json", {
        "variant": rc.variant.label,
        "low": curves.low,
        "high": curves.high,
        "n_members": rc.members,
        "burn_in_flag": curves.dataset.burn_in_flag if curves.dataset else None,
    })
    if curves.dataset is not None and curves.dataset.failures:
        return 2
    return 0


def _cmd_lyapunov(rc: RunConfig, w: _RunWriter) -> int:
    p = rc.params
    beta = rc.payload["beta"] or min(1.0 / p.eps, p.eps_T / 2.0) / 10.0
    alpha = rc.payload["alpha"]
    if alpha == 0.0:
        alpha = model.suggest_alpha(p, rc.variant, beta, rc.payload["radius"],
                                    rc.payload["n_samples"], rng_seed=rc.seed)
        alpha = alpha * 1.05 + 1e-9
    report = model.lyapunov_certificate(
        p, rc.variant, alpha, beta, rc.payload["radius"], rc.payload["n_samples"],
        rng_seed=rc.seed,
    )
    w.write_json("summary.json", {
        "alpha": report.alpha,
        "beta": report.beta,
        "radius": report.radius,
        "n_samples": report.n_samples,
        "min_margin": report.min_margin,
        "argmin": report.argmin.tolist(),
        "certified_on_samples": report.min_margin >= 0.0,
    })
    return 0


def _cmd_verify(rc: RunConfig, w: _RunWriter) -> int:
    """Fast subset of the acceptance checks (equilibria, bifurcation
    thresholds, noise amplitudes, integrator residuals, a small oracle run).
    The full desk-scale suite lives in the test module."""
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str) -> None:
        checks.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    p_md = standard_params()
    p_nmd = standard_params(P_e=32.0, mean_diffusion=False)

    eqs = model.find_equilibria(p_md.variant("full"), p_md)
    stable = sorted([(e.x, e.y) for e in eqs if e.stability is model.Stability.STABLE],
                    key=lambda t: t[1])
    ok = (len(eqs) == 3 and len(stable) == 2
          and abs(stable[0][0] - 0.989) < 5e-3 and abs(stable[0][1] - 0.22) < 5e-3
          and abs(stable[1][0] - 0.998) < 5e-3 and abs(stable[1][1] - 1.00) < 5e-3)
    check("full-model equilibria", ok, f"{[(round(e.x, 4), round(e.y, 4)) for e in eqs]}")

    eqs = model.find_equilibria(p_md.variant("averaged"), p_md)
    ok = (len(eqs) == 1 and abs(eqs[0].x - 0.974) < 5e-3 and abs(eqs[0].y - 0.093) < 5e-3
          and eqs[0].stability is model.Stability.STABLE)
    check("averaged-model equilibrium", ok, f"({eqs[0].x:.4f}, {eqs[0].y:.4f})")

    eqs = model.find_equilibria(p_nmd.variant("averaged"), p_nmd)
    targets = [(0.99, 0.24), (1.00, 0.65), (1.00, 1.11)]
    ok = len(eqs) == 3 and all(
        abs(e.x - tx) < 5e-3 and abs(e.y - ty) < 5e-3 for e, (tx, ty) in zip(eqs, targets)
    )
    check("no-mean-diffusion equilibria", ok,
          f"{[(round(e.x, 4), round(e.y, 4)) for e in eqs]}")

    scan = model.bifurcation_scan(p_md.variant("averaged"), p_md, (0.05, 0.3), 26)
    ok = len(scan.critical_values) == 1 and abs(scan.critical_values[0] - 0.117) < 5e-3
    check("bifurcation threshold (mean diffusion)", ok, f"{scan.critical_values}")

    scan = model.bifurcation_scan(p_nmd.variant("averaged"), p_nmd, (0.25, 0.6), 36)
    ok = (len(scan.critical_values) == 2
          and abs(min(scan.critical_values) - 0.301) < 5e-3
          and abs(max(scan.critical_values) - 0.514) < 5e-3)
    check("bifurcation thresholds (no mean diffusion)", ok, f"{scan.critical_values}")

    amp = model.diffusion(p_md.variant("gaussian"), np.array([1.0, 0.093]), p_md)[:, 2]
    ok = abs(amp[0] - 0.16) < 5e-3 and abs(amp[1] - 0.015) < 5e-4
    check("gaussian eddy-noise amplitude", ok, f"({amp[0]:.4f}, {amp[1]:.5f})")

    cfg = IntegratorConfig(residual_check_stride=1)
    worst = 0.0
    for kind in ("full", "averaged", "gaussian"):
        traj = simulate_trajectory(
            p_md.variant(kind), np.zeros(p_md.variant(kind).state_dim),
            (0.0, 100_000 * cfg.dt), cfg, p_md, rng_seed=rc.seed,
        )
        worst = max(worst, traj.max_residual)
    check("implicit-solve residuals (1e5 steps/variant)", worst <= 1e-9, f"max {worst:.2e}")

    p_h = standard_params(sigma_eps=0.01)
    est = homogenization.oracle_estimate(1.0, 0.093, p_h, n_trajectories=2000, rng_seed=rc.seed)
    flux = homogenization.mean_eddy_flux(1.0, 0.093, p_h)
    corr = homogenization.diffusion_correction(1.0, 0.093, p_h)
    zf = np.max(np.abs((est.mean_flux_hat - flux) / est.mean_flux_se))
    zc = np.max(np.abs((est.C_hat - corr.C) / est.C_se))
    check("homogenization oracle (2000 trajectories)", zf < 3.0 and zc < 3.0,
          f"max |z| flux {zf:.2f}, C {zc:.2f}")

    failures = [name for name, ok, _ in checks if not ok]
    w.write_json("verify.json", {
        "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in checks],
        "failures": failures,
    })
    return 3 if failures else 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "ensemble": _cmd_ensemble,
    "equilibria": _cmd_equilibria,
    "bifurcation": _cmd_bifurcation,
    "homogenize": _cmd_homogenize,
    "forecast": _cmd_forecast,
    "transitions": _cmd_transitions,
    "stats": _cmd_stats,
    "lyapunov": _cmd_lyapunov,
    "verify": _cmd_verify,
}


def dispatch(rc: RunConfig) -> int:
    """Run a resolved configuration; returns the process exit status."""
    writer = _RunWriter(rc)
    try:
        status = _COMMANDS[rc.subcommand](rc, writer)
    except ConfigError:
        raise
    except StepFailureError as exc:
        writer.extra["error"] = str(exc)
        writer.finish("failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    writer.finish("ok" if status == 0 else "failed")
    return status


def main(argv: list[str] | None = None) -> int:
    try:
        rc = parse_config(argv)
        return dispatch(rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
