"""Ensembles of independent trajectories: climatology, rare-event forecasts,
and regime-transition experiments.

Members are mutually independent realizations distinguished only by their
noise streams.  Member m of a run with base seed s draws from the generator
seeded by SeedSequence(s, spawn_key=(0, m)), so no Gaussian increment is ever
shared between members, results are identical regardless of worker scheduling,
and a one-member ensemble reduces exactly to a single trajectory simulation
with the derived stream.  Other experiment families (forecasts, the
homogenization oracle, dissipativity sampling) use distinct leading spawn-key
tags so their streams never collide with ensemble members.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .integrator import (
    IntegratorConfig,
    StepFailureError,
    Trajectory,
    load_trajectory,
    save_trajectory,
    simulate_trajectory,
)
from .ioutil import (
    integrator_from_dict,
    integrator_to_dict,
    params_from_dict,
    params_to_dict,
    sha256_hex,
    stable_json_dumps,
    variant_from_dict,
    variant_to_dict,
)
from .model import ModelParams, ModelVariant, VariantKind
from .stats import EventSpec

__all__ = [
    "TAG_ENSEMBLE",
    "TAG_FORECAST",
    "EnsembleConfig",
    "EnsembleDataset",
    "MemberFailure",
    "ForecastResult",
    "TransitionCurves",
    "member_rng",
    "run_ensemble",
    "forecast_experiment",
    "transition_experiment",
]

# spawn-key namespaces; 2, 3, 4 are used by the homogenization oracle, the
# dissipativity sampler, and the weak-convergence probe
TAG_ENSEMBLE = 0
TAG_FORECAST = 1


def member_rng(base_seed: int, member: int, tag: int = TAG_ENSEMBLE) -> np.random.Generator:
    """The independent noise stream of one ensemble member."""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(tag, member)))


@dataclass
class EnsembleConfig:
    """Everything needed to reproduce an ensemble run bit-for-bit."""

    variant: ModelVariant
    params: ModelParams
    integrator: IntegratorConfig
    n_members: int
    t_end: float
    t_burn: float = 0.0
    initial_condition: np.ndarray | list[np.ndarray] | None = None
    base_seed: int = 0
    retain_burn_in: bool = False
    n_workers: int | None = None

    def __post_init__(self) -> None:
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        if not (0.0 <= self.t_burn < self.t_end):
            raise ValueError("need 0 <= t_burn < t_end")
        if isinstance(self.initial_condition, list):
            if len(self.initial_condition) != self.n_members:
                raise ValueError("per-member initial conditions must match n_members")

    def member_initial(self, m: int) -> np.ndarray:
        if self.initial_condition is None:
            return np.zeros(self.variant.state_dim)
        if isinstance(self.initial_condition, list):
            return np.asarray(self.initial_condition[m], dtype=float)
        return np.asarray(self.initial_condition, dtype=float)

    def to_dict(self) -> dict:
        init = self.initial_condition
        if isinstance(init, np.ndarray):
            init = init.tolist()
        elif isinstance(init, list):
            init = [np.asarray(s).tolist() for s in init]
        return {
            "variant": variant_to_dict(self.variant),
            "params": params_to_dict(self.params),
            "integrator": integrator_to_dict(self.integrator),
            "n_members": self.n_members,
            "t_end": self.t_end,
            "t_burn": self.t_burn,
            "initial_condition": init,
            "base_seed": self.base_seed,
            "retain_burn_in": self.retain_burn_in,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        init = d.get("initial_condition")
        if isinstance(init, list) and init and isinstance(init[0], list):
            init = [np.asarray(s, dtype=float) for s in init]
        elif init is not None:
            init = np.asarray(init, dtype=float)
        return cls(
            variant=variant_from_dict(d["variant"]),
            params=params_from_dict(d["params"]),
            integrator=integrator_from_dict(d["integrator"]),
            n_members=d["n_members"],
            t_end=d["t_end"],
            t_burn=d.get("t_burn", 0.0),
            initial_condition=init,
            base_seed=d.get("base_seed", 0),
            retain_burn_in=d.get("retain_burn_in", False),
        )

    def config_hash(self) -> str:
        return sha256_hex(stable_json_dumps(self.to_dict()))


@dataclass(frozen=True)
class MemberFailure:
    member: int
    step: int
    message: str


@dataclass
class EnsembleDataset:
    """Post-burn-in samples of every member plus run provenance.

    ``members`` holds one trajectory per member index (None where the member
    failed); statistics helpers refuse datasets with failures unless
    explicitly overridden.
    """

    config: EnsembleConfig
    members: list[Trajectory | None]
    failures: list[MemberFailure] = field(default_factory=list)
    burn_segments: list[Trajectory] | None = None
    burn_in_flag: bool = False
    burn_in_z: tuple[float, float] = (0.0, 0.0)

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def sample_dt(self) -> float:
        return self.config.integrator.dt * self.config.integrator.save_stride

    def require_clean(self) -> None:
        if self.failures:
            raise RuntimeError(
                f"dataset has {len(self.failures)} failed members; "
                "pass allow_failures=True to use it anyway"
            )

    def series(self, variable: str = "x", allow_failures: bool = False) -> np.ndarray:
        """Post-burn-in records stacked as (members, n_samples)."""
        if not allow_failures:
            self.require_clean()
        col = {"x": 0, "y": 1, "v": 2, "T": 3, "S": 4}[variable]
        rows = [m.states[:, col] for m in self.members if m is not None]
        return np.stack(rows)

    def slow_samples(self, allow_failures: bool = False) -> np.ndarray:
        """All post-burn-in (x, y) samples pooled, shape (N, 2)."""
        if not allow_failures:
            self.require_clean()
        return np.concatenate([m.states[:, :2] for m in self.members if m is not None])

    def times(self) -> np.ndarray:
        for m in self.members:
            if m is not None:
                return m.times
        raise RuntimeError("dataset has no successful members")

    # -- persistence ---------------------------------------------------------
    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i, member in enumerate(self.members):
            entry = {"index": i, "seed_key": [TAG_ENSEMBLE, i]}
            if member is None:
                failure = next(f for f in self.failures if f.member == i)
                entry.update(failed=True, step=failure.step, message=failure.message)
            else:
                name = f"member_{i:05d}.traj"
                save_trajectory(member, out / name)
                entry.update(failed=False, file=name, n_samples=len(member))
            rows.append(entry)
        manifest = {
            "format": "eddybox-ensemble-1",
            "config": self.config.to_dict(),
            "config_sha256": self.config.config_hash(),
            "members": rows,
            "burn_in_flag": self.burn_in_flag,
            "burn_in_z": list(self.burn_in_z),
        }
        (out / "manifest.json").write_text(stable_json_dumps(manifest) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "EnsembleDataset":
        import json

        path = Path(in_dir)
        manifest = json.loads((path / "manifest.json").read_text())
        if manifest.get("format") != "eddybox-ensemble-1":
            raise ValueError(f"{path}: not an ensemble dataset directory")
        config = EnsembleConfig.from_dict(manifest["config"])
        members: list[Trajectory | None] = []
        failures: list[MemberFailure] = []
        for entry in manifest["members"]:
            if entry.get("failed"):
                members.append(None)
                failures.append(
                    MemberFailure(entry["index"], entry.get("step", -1), entry.get("message", ""))
                )
            else:
                traj = load_trajectory(
                    path / entry["file"], params=config.params, config=config.integrator
                )
                members.append(traj)
        return cls(
            config=config,
            members=members,
            failures=failures,
            burn_in_flag=manifest.get("burn_in_flag", False),
            burn_in_z=tuple(manifest.get("burn_in_z", (0.0, 0.0))),
        )


def _burn_in_adequacy(dataset: EnsembleDataset) -> tuple[bool, tuple[float, float]]:
    """Paired first-half vs second-half member means; |z| > 3 flags a run
    whose post-burn record is still drifting (slow convergence to the
    invariant law)."""
    clean = [m for m in dataset.members if m is not None]
    if len(clean) < 2 or len(clean[0]) < 4:
        return False, (0.0, 0.0)
    z = []
    for col in (0, 1):
        diffs = np.empty(len(clean))
        for i, m in enumerate(clean):
            half = len(m) // 2
            diffs[i] = m.states[:half, col].mean() - m.states[half:, col].mean()
        se = diffs.std(ddof=1) / math.sqrt(len(diffs))
        z.append(float(diffs.mean() / se) if se > 0 else 0.0)
    return bool(np.any(np.abs(z) > 3.0)), (z[0], z[1])


def run_ensemble(cfg: EnsembleConfig, out_dir=None) -> EnsembleDataset:
    """Run n_members independent trajectories and keep post-burn-in samples.

    Members run concurrently on a thread pool (the integrator kernels release
    the GIL); the result is independent of scheduling because every member's
    stream is derived from (base_seed, member index) alone and members merge
    in index order.  Member failures are recorded in the failure manifest and
    do not abort the run.  With ``out_dir`` set, the dataset and manifest are
    written there as one file per member.
    """

    def one_member(m: int):
        rng = member_rng(cfg.base_seed, m)
        s0 = cfg.member_initial(m)
        traj = simulate_trajectory(
            cfg.variant, s0, (0.0, cfg.t_end), cfg.integrator, cfg.params, rng=rng
        )
        burn = None
        if cfg.retain_burn_in:
            keep = traj.times <= cfg.t_burn
            burn = replace(traj, times=traj.times[keep], states=traj.states[keep])
        return traj.crop(cfg.t_burn), burn

    members: list[Trajectory | None] = [None] * cfg.n_members
    burns: list[Trajectory] = []
    failures: list[MemberFailure] = []
    n_workers = cfg.n_workers or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = {pool.submit(one_member, m): m for m in range(cfg.n_members)}
        for fut, m in futures.items():
            try:
                traj, burn = fut.result()
                members[m] = traj
                if burn is not None:
                    burns.append(burn)
            except StepFailureError as exc:
                failures.append(MemberFailure(member=m, step=exc.step, message=str(exc)))

    dataset = EnsembleDataset(
        config=cfg,
        members=members,
        failures=sorted(failures, key=lambda f: f.member),
        burn_segments=burns if cfg.retain_burn_in else None,
    )
    dataset.burn_in_flag, dataset.burn_in_z = _burn_in_adequacy(dataset)
    if out_dir is not None:
        dataset.save(out_dir)
    return dataset


@dataclass
class ForecastResult:
    """Event probabilities from forecast ensembles at decreasing lead times."""

    lead_times: np.ndarray
    probabilities: np.ndarray
    n_members: int
    event: EventSpec
    verification_time: float
    snapped_lead_times: np.ndarray
    snap_distances: np.ndarray
    variant: ModelVariant | None = None


def forecast_experiment(
    truth: Trajectory,
    event: EventSpec,
    verification_time: float,
    lead_times,
    n_members: int,
    variant: ModelVariant,
    params: ModelParams,
    cfg: IntegratorConfig,
    base_seed: int = 0,
) -> ForecastResult:
    """Probability that `event` holds at `verification_time`, forecast from
    the true trajectory at each lead time.

    Every forecast member is initialized at the truth state at
    verification_time - lead (reduced variants copy only (x, y); the full
    variant copies the realized eddy state as well) and integrated to the
    verification time.  Lead times are snapped to the truth save grid and
    the snap distances reported.  A zero lead returns exactly the indicator
    of the truth state.
    """
    if truth.variant.kind is not VariantKind.FULL:
        raise ValueError("forecasts must be initialized from a full-model trajectory")
    leads = np.sort(np.asarray(list(lead_times), dtype=float))[::-1]
    if np.any(leads < 0.0):
        raise ValueError("lead times must be nonnegative")
    t_v, state_v, _ = truth.state_at(verification_time)

    probs = np.empty(len(leads))
    snapped = np.empty(len(leads))
    snap_dist = np.empty(len(leads))
    for i, lead in enumerate(leads):
        if lead == 0.0:
            probs[i] = 1.0 if bool(event.indicator(state_v[:2][None, :])[0]) else 0.0
            snapped[i] = 0.0
            snap_dist[i] = 0.0
            continue
        t_init, truth_state, _ = truth.state_at(t_v - lead)
        snapped[i] = t_v - t_init
        snap_dist[i] = abs(snapped[i] - lead)
        s0 = truth_state.copy() if variant.kind is VariantKind.FULL else truth_state[:2].copy()
        n_steps = max(1, round((t_v - t_init) / cfg.dt))
        run_cfg = IntegratorConfig(
            dt=cfg.dt,
            solver=cfg.solver,
            n_fixed_point_iters=cfg.n_fixed_point_iters,
            save_stride=n_steps,
            residual_check_stride=0,
        )
        hits = 0
        for m in range(n_members):
            rng = np.random.default_rng(
                np.random.SeedSequence(base_seed, spawn_key=(TAG_FORECAST, i, m))
            )
            traj = simulate_trajectory(variant, s0, (t_init, t_v), run_cfg, params, rng=rng)
            hits += int(event.indicator(traj.states[-1, :2][None, :])[0])
        probs[i] = hits / n_members
    return ForecastResult(
        lead_times=leads,
        probabilities=probs,
        n_members=n_members,
        event=event,
        verification_time=t_v,
        snapped_lead_times=snapped,
        snap_distances=snap_dist,
        variant=variant,
    )


@dataclass
class TransitionCurves:
    """Pooled conditional regime-transition frequencies.

    p_up(tau) = P(y(t+tau) > high | y(t) < low) and
    p_down(tau) = P(y(t+tau) < low | y(t) > high), estimated by pooling all
    (member, time) pairs with t + tau inside the record.  Probabilities are
    NaN (undefined, not zero) where the conditioning set is empty; the raw
    counts are reported so other estimators can be applied downstream.
    """

    tau: np.ndarray
    p01: np.ndarray
    p10: np.ndarray
    n01_events: np.ndarray
    n01_conditioning: np.ndarray
    n10_events: np.ndarray
    n10_conditioning: np.ndarray
    low: float
    high: float
    dataset: EnsembleDataset | None = None


def transition_experiment(
    cfg: EnsembleConfig,
    low: float,
    high: float,
    tau_grid,
    dataset: EnsembleDataset | None = None,
) -> TransitionCurves:
    """Estimate transition probability curves between the two regimes.

    Runs the configured ensemble (or reuses `dataset`), then counts pooled
    conditional frequencies at each requested lag, snapped to the save grid.
    """
    if not low < high:
        raise ValueError("need low < high")
    if dataset is None:
        dataset = run_ensemble(cfg)
    ys = dataset.series("y")
    n = ys.shape[1]
    delta = dataset.sample_dt

    taus = np.asarray(list(tau_grid), dtype=float)
    ks = np.round(taus / delta).astype(int)
    out = {key: np.empty(len(ks)) for key in ("p01", "p10")}
    counts = {key: np.zeros(len(ks), dtype=np.int64)
              for key in ("n01", "d01", "n10", "d10")}
    below = ys < low
    above = ys > high
    for i, k in enumerate(ks):
        if k >= n:
            out["p01"][i] = np.nan
            out["p10"][i] = np.nan
            continue
        b0 = below[:, : n - k] if k > 0 else below
        a1 = above[:, k:] if k > 0 else above
        a0 = above[:, : n - k] if k > 0 else above
        b1 = below[:, k:] if k > 0 else below
        d01 = int(b0.sum())
        n01 = int((b0 & a1).sum())
        d10 = int(a0.sum())
        n10 = int((a0 & b1).sum())
        counts["n01"][i], counts["d01"][i] = n01, d01
        counts["n10"][i], counts["d10"][i] = n10, d10
        out["p01"][i] = n01 / d01 if d01 > 0 else np.nan
        out["p10"][i] = n10 / d10 if d10 > 0 else np.nan
    return TransitionCurves(
        tau=ks * delta,
        p01=out["p01"],
        p10=out["p10"],
        n01_events=counts["n01"],
        n01_conditioning=counts["d01"],
        n10_events=counts["n10"],
        n10_conditioning=counts["d10"],
        low=low,
        high=high,
        dataset=dataset,
    )
