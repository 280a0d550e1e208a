"""Batch command-line front end.

``macfusion run <config-or-preset> [--set k=v]... [--workers N] [--out p]``
executes one experiment described by a JSON config and emits an RFC-4180
CSV plus a JSON manifest embedding the fully resolved config, so a run can
be reproduced byte-identically from the manifest alone.
``macfusion presets`` lists the built-in figure-reproduction recipes.

Exit codes: 0 success, 2 config error (diagnostics name the offending
field), 3 numerical non-convergence (diagnostics name the integral).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import detection as det
from . import estimation as est
from . import harness, kernels
from . import noise as noise_mod
from . import transmit as tx
from .numerics import QuadratureConvergenceError, QuadratureSpec

ENV_SEED = "MACFUSION_SEED"

EXPERIMENT_KINDS = (
    "asv_vs_omega",
    "lvar_vs_L",
    "consistency",
    "af_compare",
    "dc_vs_omega",
    "pe_vs_omega",
    "pe_vs_L",
    "theorem3_degeneration",
    "duality_check",
)


class ConfigError(Exception):
    """Invalid experiment configuration; message names the field."""


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def _require_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"config error at {path}: expected an object, got {type(value).__name__}")
    return value


def _check_keys(d: dict, path: str, required: set[str], optional: set[str] = frozenset()):
    unknown = set(d) - required - set(optional)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"config error at {path}.{name}: unknown key")
    missing = required - set(d)
    if missing:
        name = sorted(missing)[0]
        raise ConfigError(f"config error at {path}.{name}: required key is missing")


def _number(d: dict, key: str, path: str, *, positive=False, integer=False, minimum=None):
    if key not in d:
        raise ConfigError(f"config error at {path}.{key}: required key is missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config error at {path}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"config error at {path}.{key}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"config error at {path}.{key}: must be positive, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"config error at {path}.{key}: must be >= {minimum}, got {v!r}")
    return int(v) if integer else float(v)


def build_noise(d, path="noise") -> noise_mod.NoiseModel:
    d = _require_mapping(d, path)
    _check_keys(d, path, {"kind", "scale"})
    kind = d.get("kind")
    if kind not in noise_mod.NOISE_KINDS:
        raise ConfigError(
            f"config error at {path}.kind: unknown noise kind {kind!r}; expected one of {list(noise_mod.NOISE_KINDS)}"
        )
    scale = _number(d, "scale", path, positive=True)
    return noise_mod.NoiseModel(kind, scale)


def build_transmit(d, path="transmit") -> tx.TransmitFunction:
    d = _require_mapping(d, path)
    kind = d.get("kind")
    if kind not in tx.TRANSMIT_KINDS:
        raise ConfigError(
            f"config error at {path}.kind: unknown transmit kind {kind!r}; expected one of {list(tx.TRANSMIT_KINDS)}"
        )
    try:
        if kind in (tx.TANH, tx.GUDERMANNIAN, tx.RATIONAL):
            _check_keys(d, path, {"kind"}, {"omega"})
            omega = _number(d, "omega", path, positive=True) if "omega" in d else 1.0
            return tx.TransmitFunction(kind, omega=omega)
        if kind == tx.SIGNED_POWER:
            _check_keys(d, path, {"kind", "p_exponent"})
            return tx.TransmitFunction(kind, p_exponent=_number(d, "p_exponent", path, positive=True))
        if kind == tx.UNIFORM_QUANTIZER:
            _check_keys(d, path, {"kind", "x_max", "M"})
            return tx.TransmitFunction(
                kind,
                x_max=_number(d, "x_max", path, positive=True),
                levels=_number(d, "M", path, positive=True, integer=True),
            )
        _check_keys(d, path, {"kind", "alpha"})
        alpha = d.get("alpha")
        if alpha == "power":
            # Resolved later against the experiment's power budget.
            return tx.TransmitFunction(tx.LINEAR, alpha=1.0)
        return tx.TransmitFunction(kind, alpha=_number(d, "alpha", path, positive=True))
    except ValueError as exc:
        raise ConfigError(f"config error at {path}: {exc}") from exc


def _transmit_wants_power_alpha(d) -> bool:
    return isinstance(d, dict) and d.get("kind") == tx.LINEAR and d.get("alpha") == "power"


def build_sigmas(d, path="sigmas") -> est.SigmaSequence:
    d = _require_mapping(d, path)
    kind = d.get("kind")
    if kind not in est.SIGMA_KINDS:
        raise ConfigError(
            f"config error at {path}.kind: unknown sigma sequence kind {kind!r}; expected one of {list(est.SIGMA_KINDS)}"
        )
    try:
        if kind == est.EXPLICIT_LIST:
            _check_keys(d, path, {"kind", "values"})
            values = d.get("values")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"config error at {path}.values: expected a non-empty list")
            return est.SigmaSequence(kind, values=tuple(float(v) for v in values))
        _check_keys(d, path, {"kind", "sigma"})
        return est.SigmaSequence(kind, sigma=_number(d, "sigma", path, positive=True))
    except ValueError as exc:
        raise ConfigError(f"config error at {path}: {exc}") from exc


def build_quadrature(d, path="quadrature") -> QuadratureSpec:
    if d is None:
        return QuadratureSpec()
    d = _require_mapping(d, path)
    _check_keys(d, path, set(), {"rel_tol", "abs_tol", "tail_mass", "max_subdivisions"})
    kwargs = {}
    for key in ("rel_tol", "abs_tol", "tail_mass"):
        if key in d:
            kwargs[key] = _number(d, key, path, positive=True)
    if "max_subdivisions" in d:
        kwargs["max_subdivisions"] = _number(d, "max_subdivisions", path, positive=True, integer=True)
    try:
        return QuadratureSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config error at {path}: {exc}") from exc


def _grid(d, path) -> list[float]:
    d = _require_mapping(d, path)
    _check_keys(d, path, {"lo", "hi", "points"})
    lo = _number(d, "lo", path)
    hi = _number(d, "hi", path)
    points = _number(d, "points", path, integer=True, minimum=2)
    if not lo < hi:
        raise ConfigError(f"config error at {path}.lo: lo must be smaller than hi")
    return [float(v) for v in np.linspace(lo, hi, points)]


def _values_list(cfg, key, path="") -> list[float]:
    loc = f"{path or key}"
    values = cfg.get(key)
    if not isinstance(values, list) or not values:
        raise ConfigError(f"config error at {loc}: expected a non-empty list")
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"config error at {loc}[{i}]: expected a number, got {v!r}")
        out.append(float(v))
    return out


def _priors(cfg, path="priors") -> tuple[float, float]:
    raw = cfg.get("priors", [0.5, 0.5])
    if not isinstance(raw, list) or len(raw) != 2:
        raise ConfigError(f"config error at {path}: expected [P0, P1]")
    p0, p1 = float(raw[0]), float(raw[1])
    if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0) or abs(p0 + p1 - 1.0) > 1e-12:
        raise ConfigError(f"config error at {path}: priors must be strictly positive and sum to 1")
    return p0, p1


# ---------------------------------------------------------------------------
# experiment runners: each returns (header, rows)
# ---------------------------------------------------------------------------

_COMMON_REQUIRED = {"kind", "master_seed"}
_COMMON_OPTIONAL = {"experiment_id", "output", "quadrature"}


def _parallel_map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _estimation_setup(cfg, path=""):
    return est.EstimationSetup(
        theta=_number(cfg, "theta", path or "config"),
        L=_number(cfg, "L", path or "config", positive=True, integer=True),
        sigmas=build_sigmas(cfg.get("sigmas", {"kind": "constant", "sigma": 1.0})),
        noise=build_noise(cfg.get("noise")),
        transmit=build_transmit(cfg.get("transmit")),
        total_power=_number(cfg, "total_power", path or "config", positive=True),
        channel_noise_var=_number(cfg, "channel_noise_var", path or "config", positive=True),
    )


def _detection_setup(cfg, transmit_cfg=None, L=None):
    transmit_cfg = transmit_cfg if transmit_cfg is not None else cfg.get("transmit")
    L_val = int(L if L is not None else _number(cfg, "L", "config", positive=True, integer=True))
    sigmas = build_sigmas(cfg.get("sigmas", {"kind": "constant", "sigma": 1.0}))
    noise = build_noise(cfg.get("noise"))
    theta = _number(cfg, "theta", "config", positive=True)
    priors = _priors(cfg)
    f = build_transmit(transmit_cfg)
    if _transmit_wants_power_alpha(transmit_cfg):
        f = tx.linear_fn(_power_normalized_alpha(noise, sigmas, L_val, theta, priors[1]))
    return det.DetectionSetup(
        theta=theta,
        L=L_val,
        sigmas=sigmas,
        noise=noise,
        transmit=f,
        total_power=_number(cfg, "total_power", "config", positive=True),
        channel_noise_var=_number(cfg, "channel_noise_var", "config", positive=True),
        priors=priors,
    )


def _power_normalized_alpha(noise, sigmas, L, theta, p1) -> float:
    """Gain making the prior-averaged transmit power meet the budget.

    E[x^2] averaged over hypotheses is p1*theta^2 + mean(sigma_i^2)*var(n);
    Cauchy noise substitutes a nominal unit variance.
    """
    var_n = noise_mod.variance(noise)
    if not math.isfinite(var_n):
        var_n = 1.0
    mean_sq = float(np.mean(sigmas.resolve(L) ** 2))
    return 1.0 / math.sqrt(p1 * theta * theta + mean_sq * var_n)


def _run_asv_vs_omega(cfg, workers):
    multi = "transmits" in cfg
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "L", "noise", "total_power", "channel_noise_var", "omega_grid"}
        | ({"transmits"} if multi else {"transmit"}),
        _COMMON_OPTIONAL | {"sigmas"},
    )
    sigmas = build_sigmas(cfg.get("sigmas", {"kind": "constant", "sigma": 1.0}))
    if not sigmas.is_bounded_constant_one():
        raise ConfigError("config error at sigmas: asymptotic variance requires constant sigma = 1")
    spec = build_quadrature(cfg.get("quadrature"))
    omegas = _grid(cfg.get("omega_grid"), "omega_grid")
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    seed = cfg["master_seed"]
    transmit_cfgs = cfg["transmits"] if multi else [cfg["transmit"]]
    if multi and (not isinstance(transmit_cfgs, list) or not transmit_cfgs):
        raise ConfigError("config error at transmits: expected a non-empty list")

    points = []
    for fi, tcfg in enumerate(transmit_cfgs):
        f = build_transmit(tcfg, path=f"transmits[{fi}]" if multi else "transmit")
        for omega in omegas:
            points.append((fi, f, omega))

    def run_point(indexed):
        index, (fi, f, omega) = indexed
        setup = est.EstimationSetup(
            theta=_number(cfg, "theta", "config"),
            L=_number(cfg, "L", "config", positive=True, integer=True),
            sigmas=sigmas,
            noise=build_noise(cfg.get("noise")),
            transmit=tx.with_omega(f, omega),
            total_power=_number(cfg, "total_power", "config", positive=True),
            channel_noise_var=_number(cfg, "channel_noise_var", "config", positive=True),
        )
        asv = est.asymptotic_variance(setup, spec)
        summary = harness.run_estimation_experiment(
            setup, trials, seed, stream_id_base=index * harness.POINT_STREAM_STRIDE, spec=spec
        )
        l_var = summary.aggregates["l_var"]
        stderr = l_var * math.sqrt(2.0 / max(trials - 1, 1))
        row = [f.kind, omega, asv, l_var, trials, stderr] if multi else [omega, asv, l_var, trials, stderr]
        return row

    rows = _parallel_map(run_point, enumerate(points), workers)
    header = ["function", "omega", "asv", "l_var", "trials", "stderr"] if multi else ["omega", "asv", "l_var", "trials", "stderr"]
    return header, rows


def _run_lvar_vs_L(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "noise", "transmit", "total_power", "channel_noise_var", "L_values"},
        _COMMON_OPTIONAL | {"sigmas"},
    )
    sigmas = build_sigmas(cfg.get("sigmas", {"kind": "constant", "sigma": 1.0}))
    if not sigmas.is_bounded_constant_one():
        raise ConfigError("config error at sigmas: asymptotic variance requires constant sigma = 1")
    spec = build_quadrature(cfg.get("quadrature"))
    L_values = [int(v) for v in _values_list(cfg, "L_values")]
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    base = dict(cfg)
    base["L"] = L_values[0]
    setup = _estimation_setup(base)
    asv = est.asymptotic_variance(setup, spec)
    results = harness.sweep("L", L_values, setup, trials, cfg["master_seed"], workers=workers, spec=spec)
    rows = []
    for L, summary in results:
        l_var = summary.aggregates["l_var"]
        stderr = l_var * math.sqrt(2.0 / max(trials - 1, 1))
        rows.append([int(L), asv, l_var, trials, stderr])
    return ["L", "asv", "l_var", "trials", "stderr"], rows


def _run_consistency(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "noise", "transmit", "total_power", "channel_noise_var", "L_values"},
        _COMMON_OPTIONAL | {"sigmas", "estimator"},
    )
    estimator = cfg.get("estimator", "bounded")
    if estimator not in ("bounded", "af"):
        raise ConfigError(f"config error at estimator: expected 'bounded' or 'af', got {estimator!r}")
    L_values = [int(v) for v in _values_list(cfg, "L_values")]
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    base = dict(cfg)
    base["L"] = L_values[0]
    setup = _estimation_setup(base)
    spec = build_quadrature(cfg.get("quadrature"))
    results = harness.sweep("L", L_values, setup, trials, cfg["master_seed"], workers=workers, estimator=estimator, spec=spec)
    rows = [[int(L), s.aggregates["median_abs_error"], trials] for L, s in results]
    return ["L", "median_abs_error", "trials"], rows


def _run_af_compare(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "noise", "transmit", "total_power", "channel_noise_var", "L_values"},
        _COMMON_OPTIONAL | {"sigmas"},
    )
    L_values = [int(v) for v in _values_list(cfg, "L_values")]
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    base = dict(cfg)
    base["L"] = L_values[0]
    setup = _estimation_setup(base)
    spec = build_quadrature(cfg.get("quadrature"))
    seed = cfg["master_seed"]
    bounded = harness.sweep("L", L_values, setup, trials, seed, workers=workers, estimator="bounded", spec=spec)
    af = harness.sweep("L", L_values, setup, trials, seed, workers=workers, estimator="af", spec=spec)
    rows = []
    for (L, sb), (_, sa) in zip(bounded, af):
        rows.append([int(L), sb.aggregates["median_abs_error"], sa.aggregates["median_abs_error"], trials])
    return ["L", "mae_bounded", "mae_af", "trials"], rows


def _run_dc_vs_omega(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"theta", "L", "noise", "transmit", "total_power", "channel_noise_var", "omega_grid"},
        _COMMON_OPTIONAL | {"sigmas", "priors"},
    )
    spec = build_quadrature(cfg.get("quadrature"))
    omegas = _grid(cfg.get("omega_grid"), "omega_grid")
    setup = _detection_setup(cfg)

    def run_point(omega):
        point = harness.apply_sweep_parameter(setup, "omega", omega)
        return [omega, det.deflection(point, spec)]

    rows = _parallel_map(run_point, omegas, workers)
    return ["omega", "dc"], rows


def _run_pe_vs_omega(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "L", "noise", "transmit", "total_power", "channel_noise_var", "omega_grid"},
        _COMMON_OPTIONAL | {"sigmas", "priors", "stratified"},
    )
    spec = build_quadrature(cfg.get("quadrature"))
    omegas = _grid(cfg.get("omega_grid"), "omega_grid")
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    stratified = bool(cfg.get("stratified", False))
    setup = _detection_setup(cfg)
    seed = cfg["master_seed"]

    def run_point(indexed):
        index, omega = indexed
        point = harness.apply_sweep_parameter(setup, "omega", omega)
        dc = det.deflection(point, spec)
        summary = harness.run_detection_experiment(
            point,
            trials,
            seed,
            stream_id_base=index * harness.POINT_STREAM_STRIDE,
            stratified=stratified,
            spec=spec,
        )
        return [omega, dc, summary.aggregates["pe"], summary.aggregates["stderr"], trials]

    rows = _parallel_map(run_point, enumerate(omegas), workers)
    return ["omega", "dc", "pe", "stderr", "trials"], rows


def _run_pe_vs_L(cfg, workers):
    multi = "transmits" in cfg
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "noise", "total_power", "channel_noise_var", "L_values"}
        | ({"transmits"} if multi else {"transmit"}),
        _COMMON_OPTIONAL | {"sigmas", "priors", "stratified", "omega_search"},
    )
    spec = build_quadrature(cfg.get("quadrature"))
    L_values = [int(v) for v in _values_list(cfg, "L_values")]
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    stratified = bool(cfg.get("stratified", False))
    search = cfg.get("omega_search", {"lo": 0.05, "hi": 8.0, "points": 64})
    search_vals = _grid(search, "omega_search")
    transmit_cfgs = cfg["transmits"] if multi else [cfg["transmit"]]
    if multi and (not isinstance(transmit_cfgs, list) or not transmit_cfgs):
        raise ConfigError("config error at transmits: expected a non-empty list")
    seed = cfg["master_seed"]

    points = [(fi, tcfg, L) for fi, tcfg in enumerate(transmit_cfgs) for L in L_values]

    def run_point(indexed):
        index, (fi, tcfg, L) = indexed
        setup = _detection_setup(cfg, transmit_cfg=tcfg, L=L)
        if setup.transmit.kind in (tx.TANH, tx.GUDERMANNIAN, tx.RATIONAL):
            omega_star, _ = det.optimal_omega(setup, search_vals[0], search_vals[-1], len(search_vals), spec)
            setup = harness.apply_sweep_parameter(setup, "omega", omega_star)
        else:
            omega_star = float("nan")
        summary = harness.run_detection_experiment(
            setup,
            trials,
            seed,
            stream_id_base=index * harness.POINT_STREAM_STRIDE,
            stratified=stratified,
            spec=spec,
        )
        label = setup.transmit.kind if setup.transmit.kind != tx.LINEAR else "linear_af"
        return [label, int(L), omega_star, summary.aggregates["pe"], summary.aggregates["stderr"], trials]

    rows = _parallel_map(run_point, enumerate(points), workers)
    return ["function", "L", "omega_star", "pe", "stderr", "trials"], rows


def _run_theorem3(cfg, workers):
    _check_keys(
        cfg,
        "config",
        _COMMON_REQUIRED | {"trials", "theta", "noise", "transmit", "total_power", "channel_noise_var", "L_values", "sigmas"},
        _COMMON_OPTIONAL,
    )
    spec = build_quadrature(cfg.get("quadrature"))
    L_values = [int(v) for v in _values_list(cfg, "L_values")]
    trials = _number(cfg, "trials", "config", positive=True, integer=True)
    base = dict(cfg)
    base["L"] = L_values[0]
    setup = _estimation_setup(base)
    seed = cfg["master_seed"]

    def run_point(indexed):
        index, L = indexed
        point = harness.apply_sweep_parameter(setup, "L", L)
        gap = abs(est.mean_response(point, point.theta, spec) - est.mean_response(point, 0.0, spec))
        stats = harness.run_signal_statistics(point, trials, seed, stream_id_base=index * harness.POINT_STREAM_STRIDE)
        z_abs_median = float(np.median(np.abs(stats["z_targets"])))
        af_mae = float(np.median(np.abs(stats["af_estimates"] - point.theta)))
        return [int(L), gap, z_abs_median, af_mae, trials]

    rows = _parallel_map(run_point, enumerate(L_values), workers)
    return ["L", "h_gap", "z_abs_median", "af_mae", "trials"], rows


def _run_duality(cfg, workers):
    _check_keys(cfg, "config", _COMMON_REQUIRED | {"transmit", "grid"}, _COMMON_OPTIONAL)
    spec = build_quadrature(cfg.get("quadrature"))
    f = build_transmit(cfg.get("transmit"))
    xs = np.array(_grid(cfg.get("grid"), "grid"))
    density = det.matched_density(f, spec)
    values = np.array([density(x) for x in xs])
    if f.kind == tx.TANH and f.omega == 1.0:
        reference = 1.0 / (np.pi * np.cosh(xs))
    elif f.kind == tx.LINEAR:
        s = 1.0 / math.sqrt(f.alpha)
        reference = np.exp(-0.5 * (xs / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    else:
        reference = np.full_like(xs, np.nan)
    rows = [[x, v, r, abs(v - r)] for x, v, r in zip(xs, values, reference)]
    return ["x", "density", "reference", "abs_error"], rows


KIND_RUNNERS = {
    "asv_vs_omega": _run_asv_vs_omega,
    "lvar_vs_L": _run_lvar_vs_L,
    "consistency": _run_consistency,
    "af_compare": _run_af_compare,
    "dc_vs_omega": _run_dc_vs_omega,
    "pe_vs_omega": _run_pe_vs_omega,
    "pe_vs_L": _run_pe_vs_L,
    "theorem3_degeneration": _run_theorem3,
    "duality_check": _run_duality,
}

_SEEDLESS_KINDS = ("duality_check",)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_SQRT10 = 3.1622776601683795
_RHO_C_3DB = 1.9952623149688795  # 10**0.3
_INV_SQRT2 = 0.7071067811865476

PRESETS: dict[str, tuple[str, dict]] = {
    "fig2": (
        "AsV(omega) vs L*var at L=500, tanh, Gaussian sensing noise (sigma_n^2=1, sigma_v^2=1, P_T=10)",
        {
            "kind": "asv_vs_omega",
            "master_seed": 20251,
            "trials": 10000,
            "theta": 1.0,
            "L": 500,
            "noise": {"kind": "gaussian", "scale": 1.0},
            "transmit": {"kind": "tanh", "omega": 1.0},
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "omega_grid": {"lo": 0.3, "hi": 3.0, "points": 10},
        },
    ),
    "fig3": (
        "Finite-sample gap: L*var vs AsV across L={25,50,500}, Laplacian noise, tanh omega=0.75",
        {
            "kind": "lvar_vs_L",
            "master_seed": 20252,
            "trials": 10000,
            "theta": 1.0,
            "noise": {"kind": "laplacian", "scale": _INV_SQRT2},
            "transmit": {"kind": "tanh", "omega": 0.75},
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "L_values": [25, 50, 500],
        },
    ),
    "fig4": (
        "AsV(omega) for different bounded transmit curves, Gaussian noise, L=500",
        {
            "kind": "asv_vs_omega",
            "master_seed": 20253,
            "trials": 4000,
            "theta": 1.0,
            "L": 500,
            "noise": {"kind": "gaussian", "scale": 1.0},
            "transmits": [
                {"kind": "tanh", "omega": 1.0},
                {"kind": "gudermannian", "omega": 1.0},
                {"kind": "rational", "omega": 1.0},
            ],
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "omega_grid": {"lo": 0.3, "hi": 3.0, "points": 10},
        },
    ),
    "fig5": (
        "D(omega) and Pe(omega) for tanh at rho_s=10 dB, rho_c=3 dB, L=20",
        {
            "kind": "pe_vs_omega",
            "master_seed": 20254,
            "trials": 1000000,
            "theta": _SQRT10,
            "L": 20,
            "noise": {"kind": "gaussian", "scale": 1.0},
            "transmit": {"kind": "tanh", "omega": 1.0},
            "total_power": _RHO_C_3DB,
            "channel_noise_var": 1.0,
            "priors": [0.5, 0.5],
            "omega_grid": {"lo": 0.1, "hi": 3.0, "points": 32},
        },
    ),
    "fig6": (
        "Pe vs L for AF-linear/tanh/gudermannian/rational at DC-optimal omega, rho_s=10 dB, rho_c=0 dB",
        {
            "kind": "pe_vs_L",
            "master_seed": 20255,
            "trials": 1000000,
            "theta": _SQRT10,
            "noise": {"kind": "gaussian", "scale": 1.0},
            "transmits": [
                {"kind": "linear", "alpha": "power"},
                {"kind": "tanh", "omega": 1.0},
                {"kind": "gudermannian", "omega": 1.0},
                {"kind": "rational", "omega": 1.0},
            ],
            "total_power": 1.0,
            "channel_noise_var": 1.0,
            "priors": [0.5, 0.5],
            "L_values": [5, 10, 20, 40],
            "omega_search": {"lo": 0.05, "hi": 8.0, "points": 64},
        },
    ),
    "theorem3": (
        "Degenerating mean response under sigma_i = sqrt(i) growth vs the AF baseline",
        {
            "kind": "theorem3_degeneration",
            "master_seed": 20256,
            "trials": 1000,
            "theta": 1.0,
            "noise": {"kind": "gaussian", "scale": 1.0},
            "transmit": {"kind": "tanh", "omega": 0.75},
            "sigmas": {"kind": "sqrt_growth", "sigma": 1.0},
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "L_values": [100, 1000, 10000],
        },
    ),
    "cauchy-af": (
        "Bounded-tanh vs AF median absolute error under Cauchy sensing noise",
        {
            "kind": "af_compare",
            "master_seed": 20257,
            "trials": 1000,
            "theta": 1.0,
            "noise": {"kind": "cauchy", "scale": 1.0},
            "transmit": {"kind": "tanh", "omega": 0.75},
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "L_values": [100, 1000, 10000],
        },
    ),
    "duality": (
        "Matched density of tanh against the normalized sech curve",
        {
            "kind": "duality_check",
            "master_seed": 20258,
            "transmit": {"kind": "tanh", "omega": 1.0},
            "grid": {"lo": -10.0, "hi": 10.0, "points": 201},
        },
    ),
    "consistency": (
        "Bounded-estimator median absolute error vs L under Cauchy noise",
        {
            "kind": "consistency",
            "master_seed": 20259,
            "trials": 1000,
            "theta": 1.0,
            "noise": {"kind": "cauchy", "scale": 1.0},
            "transmit": {"kind": "tanh", "omega": 0.75},
            "total_power": 10.0,
            "channel_noise_var": 1.0,
            "L_values": [100, 1000, 10000],
        },
    ),
}


# ---------------------------------------------------------------------------
# run / presets commands
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)  # RFC-4180: CRLF line endings, minimal quoting
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    """Round-trip reader for the tool's own CSV output."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"config error at --set {assignment!r}: expected key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def load_config(source: str, overrides=(), env=None) -> dict:
    """Resolve preset name or JSON path, env seed, then overrides."""
    env = os.environ if env is None else env
    if source in PRESETS:
        cfg = json.loads(json.dumps(PRESETS[source][1]))
        cfg.setdefault("experiment_id", source)
    else:
        if not os.path.exists(source):
            raise ConfigError(f"config error at config: {source!r} is neither a preset nor a file")
        try:
            with open(source, "r", encoding="utf-8") as f:
                cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config error at config: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config error at config: top level must be an object")
        cfg.setdefault("experiment_id", os.path.splitext(os.path.basename(source))[0])
    if env.get(ENV_SEED):
        try:
            cfg["master_seed"] = int(env[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"config error at {ENV_SEED}: expected an integer seed") from exc
    for assignment in overrides:
        _apply_override(cfg, assignment)
    return cfg


def validate_common(cfg: dict) -> None:
    kind = cfg.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"config error at kind: unknown experiment kind {kind!r}; expected one of {list(EXPERIMENT_KINDS)}"
        )
    if kind not in _SEEDLESS_KINDS or "master_seed" in cfg:
        seed = cfg.get("master_seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2**64):
            raise ConfigError(f"config error at master_seed: expected an unsigned 64-bit integer, got {seed!r}")
    else:
        cfg["master_seed"] = 0
    if not isinstance(cfg.get("experiment_id", ""), str):
        raise ConfigError("config error at experiment_id: expected a string")


def run_config(cfg: dict, workers: int = 1, out_path: str | None = None) -> dict:
    """Execute a validated config; returns the manifest dictionary."""
    validate_common(cfg)
    runner = KIND_RUNNERS[cfg["kind"]]
    start = time.perf_counter()
    header, rows = runner(cfg, workers)
    elapsed = time.perf_counter() - start
    out_path = out_path or cfg.get("output") or f"{cfg.get('experiment_id', cfg['kind'])}.csv"
    write_csv(out_path, header, rows)
    manifest = {
        "experiment_id": cfg.get("experiment_id", cfg["kind"]),
        "config": cfg,
        "master_seed": cfg["master_seed"],
        "package_version": __version__,
        "kernel_backend": kernels.get_backend(),
        "workers": workers,
        "wall_time_seconds": elapsed,
        "csv_path": out_path,
        "rows": len(rows),
    }
    manifest_path = out_path + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def list_presets() -> str:
    lines = ["Available presets:"]
    for name, (description, _) in PRESETS.items():
        lines.append(f"  {name:12s} {description}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="macfusion", description="Bounded-transmission MAC inference experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config or preset")
    run_p.add_argument("config", help="path to a JSON config, or a preset name")
    run_p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
    run_p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="max parallel sweep points (results are worker-count independent)")
    run_p.add_argument("--out", default=None, help="CSV output path")

    sub.add_parser("presets", help="list built-in experiment presets")

    args = parser.parse_args(argv)
    if args.command == "presets":
        print(list_presets())
        return 0

    try:
        cfg = load_config(args.config, args.overrides)
        manifest = run_config(cfg, workers=max(1, args.workers), out_path=args.out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except QuadratureConvergenceError as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {manifest['csv_path']} ({manifest['rows']} rows) in {manifest['wall_time_seconds']:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
