"""Stable serialization helpers shared by the ensemble store and the CLI.

All JSON emitted by the package is deterministic (sorted keys, fixed
separators, shortest round-tripping float repr) so that artifacts are
byte-for-byte reproducible given identical configuration and seeds.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .integrator import IntegratorConfig
from .model import ModelParams, ModelVariant, make_variant

__all__ = [
    "stable_json_dumps",
    "sha256_hex",
    "params_to_dict",
    "params_from_dict",
    "variant_to_dict",
    "variant_from_dict",
    "integrator_to_dict",
    "integrator_from_dict",
]


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def stable_json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_plain)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def params_to_dict(p: ModelParams) -> dict:
    return {
        "eps_T": p.eps_T,
        "eps": p.eps,
        "P_a": p.P_a,
        "P_e": p.P_e,
        "P": p.P,
        "sigma_x": p.sigma_x,
        "sigma_y": p.sigma_y,
        "sigma_eps": p.sigma_eps,
        "mean_diffusion": p.mean_diffusion,
    }


def params_from_dict(d: dict) -> ModelParams:
    return ModelParams(
        eps_T=d["eps_T"],
        eps=d["eps"],
        P_a=d["P_a"],
        P_e=d["P_e"],
        sigma_x=d["sigma_x"],
        sigma_y=d["sigma_y"],
        sigma_eps=d.get("sigma_eps", 0.0),
        mean_diffusion=d.get("mean_diffusion", True),
    )


def variant_to_dict(v: ModelVariant) -> dict:
    return {"kind": v.kind.value, "mean_diffusion": v.mean_diffusion}


def variant_from_dict(d: dict) -> ModelVariant:
    return make_variant(d["kind"], mean_diffusion=d["mean_diffusion"])


def integrator_to_dict(cfg: IntegratorConfig) -> dict:
    return {
        "dt": cfg.dt,
        "solver": cfg.solver,
        "n_fixed_point_iters": cfg.n_fixed_point_iters,
        "save_stride": cfg.save_stride,
        "residual_check_stride": cfg.residual_check_stride,
    }


def integrator_from_dict(d: dict) -> IntegratorConfig:
    return IntegratorConfig(
        dt=d["dt"],
        solver=d.get("solver", "auto"),
        n_fixed_point_iters=d.get("n_fixed_point_iters", 10),
        save_stride=d.get("save_stride", 100),
        residual_check_stride=d.get("residual_check_stride", 10_000),
    )
