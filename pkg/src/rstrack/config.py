"""YAML run configuration: schema-validated, unknown keys rejected.

Three sections: `datagen` describes the synthetic stream, `tracker` the
algorithm parameters (several accept the string "auto" to derive the value
from the guarantee formulas), `bench` the trial harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .datagen import (
    BernoulliSupport,
    CoeffModel,
    DatasetConfig,
    MovingObjectSupport,
    NoiseModel,
    SubspaceChangeSpec,
    coeff_model_for_condition_number,
)
from .errors import ConfigError
from .sparse_recovery import (
    ADAPTIVE_FIXED,
    ADAPTIVE_XI_FROM_PREV_LHAT,
    ADAPTIVE_XMIN_FROM_PREV_SUPPORT,
    ProjCsParams,
)
from .tracker import ALPHA_SCALE, TrackerParams


def _require_keys(section: dict, allowed: set, required: set, where: str) -> None:
    keys = set(section)
    unknown = keys - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _support_model(node: dict, where: str):
    _require_keys(node, {"kind", "s", "c0", "tau", "clamp", "rho"}, {"kind"}, where)
    kind = node["kind"]
    if kind == "moving_object":
        _require_keys(node, {"kind", "s", "c0", "tau", "clamp"},
                      {"kind", "s", "c0", "tau"}, where)
        return MovingObjectSupport(
            s=int(node["s"]), c0=float(node["c0"]), tau=int(node["tau"]),
            clamp=bool(node.get("clamp", False)),
        )
    if kind == "bernoulli":
        _require_keys(node, {"kind", "rho"}, {"kind", "rho"}, where)
        return BernoulliSupport(rho=float(node["rho"]))
    raise ConfigError(f"{where}: unknown support kind {kind!r}")


@dataclass
class TrackerConfig:
    params: TrackerParams
    init_kind: str = "batch"  # or "oracle"
    init_iters: int = 30
    init_oracle_se: float = 0.0
    zeta: float = 1e-3


@dataclass
class BenchConfig:
    trials: int = 1
    seed: int = 0
    workers: int = 1
    keep_artifacts: bool = True


@dataclass
class RunConfig:
    datagen: DatasetConfig
    tracker: TrackerConfig
    bench: BenchConfig
    raw_bytes: bytes = b""


def _parse_datagen(node: dict) -> DatasetConfig:
    where = "datagen"
    allowed = {
        "n", "t_max", "t_train", "r", "f", "lambdas", "basis_mode",
        "x_min", "x_max", "signed_outliers", "noise_sigma",
        "changes", "support", "train_support",
    }
    _require_keys(node, allowed, {"n", "t_max", "t_train", "r", "support"}, where)
    r = int(node["r"])
    if "lambdas" in node:
        coeff = CoeffModel(np.asarray(node["lambdas"], dtype=float))
    else:
        coeff = coeff_model_for_condition_number(r, float(node.get("f", 16.0)))
    changes = []
    for i, ch in enumerate(node.get("changes", []) or []):
        _require_keys(ch, {"t_j", "theta_deg", "theta", "ch_index"}, {"t_j"},
                      f"{where}.changes[{i}]")
        if "theta" in ch and "theta_deg" in ch:
            raise ConfigError(f"{where}.changes[{i}]: give theta or theta_deg, not both")
        theta = float(ch["theta"]) if "theta" in ch else math.radians(
            float(ch.get("theta_deg", 0.0))
        )
        changes.append(
            SubspaceChangeSpec(
                t_j=int(ch["t_j"]), theta_j=theta,
                ch_index=int(ch.get("ch_index", -1)),
            )
        )
    noise_sigma = float(node.get("noise_sigma", 0.0))
    return DatasetConfig(
        n=int(node["n"]),
        t_max=int(node["t_max"]),
        t_train=int(node["t_train"]),
        r=r,
        coeff=coeff,
        changes=tuple(changes),
        support=_support_model(node["support"], f"{where}.support"),
        train_support=_support_model(node["train_support"], f"{where}.train_support")
        if "train_support" in node else None,
        x_min=float(node.get("x_min", 10.0)),
        x_max=float(node.get("x_max", 25.0)),
        signed_outliers=bool(node.get("signed_outliers", False)),
        noise=NoiseModel(sigma=noise_sigma) if noise_sigma > 0 else None,
        basis_mode=str(node.get("basis_mode", "preallocated_q")),
    )


def _auto_or(value, auto_fn, where: str, cast=float):
    if isinstance(value, str):
        if value == "auto":
            return auto_fn()
        raise ConfigError(f"{where}: expected a number or 'auto', got {value!r}")
    return cast(value)


def _parse_lambda_thresh(node, zeta: float, coeff: CoeffModel, where: str) -> float:
    if isinstance(node, dict):
        _require_keys(node, {"preset", "value"}, {"preset"}, where)
        preset = node["preset"]
        if preset == "theorem":
            return 5.0 * zeta * zeta * coeff.f * coeff.lambda_plus
        if preset == "lambda_minus_scale":
            if "value" not in node:
                raise ConfigError(f"{where}: lambda_minus_scale needs value")
            return float(node["value"]) * coeff.lambda_minus
        raise ConfigError(f"{where}: unknown preset {preset!r}")
    if isinstance(node, str):
        if node == "auto":
            return 5.0 * zeta * zeta * coeff.f * coeff.lambda_plus
        raise ConfigError(f"{where}: expected number, 'auto', or preset mapping")
    return float(node)


def _parse_tracker(node: dict, dg: DatasetConfig) -> TrackerConfig:
    where = "tracker"
    allowed = {
        "r", "alpha", "K", "lambda_thresh", "zeta", "xi", "omega_supp",
        "adaptive", "solver_tol", "solver_max_iter", "t_train",
        "store_offline", "init",
    }
    _require_keys(node, allowed, set(), where)
    r = int(node.get("r", dg.r))
    zeta = float(node.get("zeta", 1e-3))
    coeff = dg.coeff
    alpha = _auto_or(
        node.get("alpha", "auto"),
        lambda: math.ceil(round(ALPHA_SCALE * coeff.f**2 * r * math.log(dg.n), 9)),
        f"{where}.alpha", int,
    )
    K = _auto_or(
        node.get("K", "auto"),
        lambda: max(1, math.ceil(-0.8 * math.log(0.9 * zeta))),
        f"{where}.K", int,
    )
    xi = _auto_or(node.get("xi", "auto"), lambda: dg.x_min / 15.0, f"{where}.xi")
    omega = _auto_or(
        node.get("omega_supp", "auto"), lambda: dg.x_min / 2.0, f"{where}.omega_supp"
    )
    lam = _parse_lambda_thresh(
        node.get("lambda_thresh", "auto"), zeta, coeff, f"{where}.lambda_thresh"
    )
    adaptive = str(node.get("adaptive", ADAPTIVE_FIXED))
    if adaptive not in (ADAPTIVE_FIXED, ADAPTIVE_XI_FROM_PREV_LHAT,
                        ADAPTIVE_XMIN_FROM_PREV_SUPPORT):
        raise ConfigError(f"{where}.adaptive: unknown mode {adaptive!r}")
    cs = ProjCsParams(
        xi=xi, omega_supp=omega,
        solver_tol=float(node.get("solver_tol", 1e-6)),
        solver_max_iter=int(node.get("solver_max_iter", 2000)),
        adaptive=adaptive,
    )
    try:
        params = TrackerParams(
            r=r,
            alpha=alpha,
            K=K,
            lambda_thresh=lam,
            t_train=int(node.get("t_train", dg.t_train)),
            cs=cs,
            store_offline=bool(node.get("store_offline", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    init = node.get("init", {"kind": "batch"})
    _require_keys(init, {"kind", "iters", "se"}, {"kind"}, f"{where}.init")
    kind = init["kind"]
    if kind not in ("batch", "oracle"):
        raise ConfigError(f"{where}.init.kind: unknown kind {kind!r}")
    return TrackerConfig(
        params=params,
        init_kind=kind,
        init_iters=int(init.get("iters", 30)),
        init_oracle_se=float(init.get("se", 0.0)),
        zeta=zeta,
    )


def _parse_bench(node: dict) -> BenchConfig:
    where = "bench"
    _require_keys(node, {"trials", "seed", "workers", "keep_artifacts"}, set(), where)
    return BenchConfig(
        trials=int(node.get("trials", 1)),
        seed=int(node.get("seed", 0)),
        workers=int(node.get("workers", 1)),
        keep_artifacts=bool(node.get("keep_artifacts", True)),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid yaml: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    _require_keys(doc, {"datagen", "tracker", "bench"}, {"datagen"}, "config")
    dg = _parse_datagen(doc["datagen"])
    tracker = _parse_tracker(doc.get("tracker", {}) or {}, dg)
    bench = _parse_bench(doc.get("bench", {}) or {})
    return RunConfig(datagen=dg, tracker=tracker, bench=bench, raw_bytes=raw)
