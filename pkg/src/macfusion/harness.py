"""End-to-end Monte Carlo engine with full seed provenance.

Experiments consume streams keyed by (master_seed, stream_id); within an
experiment, trials are laid out row-major in a single stream (sensors in
ascending index order, then the channel draw), so results are bit-identical
for a given configuration and seed regardless of how sweep points are
distributed over workers. Sweep points own disjoint stream-id blocks:
point k uses stream id k * 2**32.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from . import kernels, transmit as tx
from .detection import DetectionSetup, build_detector, simulate_decisions, summarize_errors
from .estimation import (
    EstimationSetup,
    af_gain,
    build_flat_response,
    sqrt_growth_sigmas,
)
from .noise import sample
from .numerics import QuadratureSpec, RngStream

POINT_STREAM_STRIDE = 2**32


@dataclass(frozen=True)
class ChannelRealization:
    """One channel use: raw output y_L and normalized z_L = y_L / sqrt(L).

    y_L is re-derived as z_L * sqrt(L) so the pair satisfies the identity
    exactly in floating point.
    """

    y_L: float
    z_L: float

    @classmethod
    def from_raw(cls, y_raw: float, L: int) -> "ChannelRealization":
        z = y_raw / math.sqrt(L)
        return cls(y_L=z * math.sqrt(L), z_L=z)


def simulate_channel(setup, trial_stream) -> ChannelRealization:
    """One trial of the sensing/transmit/superpose pipeline.

    Consumes exactly L sensor draws (ascending index) and one channel draw
    from ``trial_stream``.
    """
    sigmas = setup.sigmas.resolve(setup.L)
    noise_draws = sample(setup.noise, trial_stream, setup.L)
    chan_u = trial_stream.uniforms(1)
    code, a, b = tx.kind_params(setup.transmit)
    x = setup.theta + sigmas * noise_draws
    y_raw = math.sqrt(setup.rho) * float(kernels.channel_sums(code, a, b, x[None, :])[0])
    y_raw += math.sqrt(setup.channel_noise_var) * float(ndtri(chan_u[0]))
    return ChannelRealization.from_raw(y_raw, setup.L)


@dataclass
class TrialSummary:
    """Per-experiment Monte Carlo record with recomputable aggregates."""

    experiment_id: str
    master_seed: int
    trials: int
    kind: str  # "estimation" or "detection"
    aggregates: dict = field(default_factory=dict)
    clamp_count: int = 0
    estimates: np.ndarray | None = None
    theta: float | None = None
    L: int | None = None
    hypotheses: np.ndarray | None = None
    errors: np.ndarray | None = None
    priors: tuple[float, float] | None = None
    stratified: bool = False


def _estimation_aggregates(estimates: np.ndarray, theta: float, L: int) -> dict:
    err = estimates - theta
    var = float(np.var(estimates, ddof=1)) if estimates.size > 1 else 0.0
    return {
        "mean": float(np.mean(estimates)),
        "median": float(np.median(estimates)),
        "variance": var,
        "l_var": L * var,
        "median_abs_error": float(np.median(np.abs(err))),
    }


def recompute_aggregates(summary: TrialSummary) -> dict:
    """Re-derive the aggregate block from stored per-trial outputs."""
    if summary.kind == "estimation":
        return _estimation_aggregates(summary.estimates, summary.theta, summary.L)
    pe, stderr = summarize_errors(summary.priors, summary.hypotheses, summary.errors, summary.stratified)
    return {"pe": pe, "stderr": stderr}


def run_estimation_experiment(
    setup: EstimationSetup,
    trials: int,
    master_seed: int,
    *,
    estimator: str = "bounded",
    stream_id_base: int = 0,
    spec: QuadratureSpec | None = None,
    experiment_id: str = "estimation",
    block_size: int = 8192,
) -> TrialSummary:
    """Monte Carlo estimates over the full pipeline.

    ``estimator`` selects the mean-response inversion ("bounded") or the
    amplify-and-forward baseline ("af"). Both consume identical draws:
    L sensor uniforms then one channel uniform per trial, row-major in the
    stream (master_seed, stream_id_base).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if estimator not in ("bounded", "af"):
        raise ValueError(f"unknown estimator {estimator!r}")

    stats = _collect_signal_statistics(setup, trials, master_seed, stream_id_base, block_size)

    clamp_count = 0
    if estimator == "af":
        estimates = stats["af_estimates"]
    else:
        flat = build_flat_response(setup, spec=spec)
        estimates, clamped = flat.invert(stats["z_targets"])
        clamp_count = int(clamped.sum())

    summary = TrialSummary(
        experiment_id=experiment_id,
        master_seed=master_seed,
        trials=trials,
        kind="estimation",
        clamp_count=clamp_count,
        estimates=estimates,
        theta=setup.theta,
        L=setup.L,
    )
    summary.aggregates = recompute_aggregates(summary)
    return summary


def _collect_signal_statistics(setup, trials, master_seed, stream_id_base, block_size=8192) -> dict:
    """Draw all trials and return normalized targets plus AF estimates.

    The two estimators are deliberately fed the same realizations so
    comparisons are paired.
    """
    stream = RngStream(master_seed, stream_id_base)
    sigmas = setup.sigmas.resolve(setup.L)
    code, a, b = tx.kind_params(setup.transmit)
    sqrt_rho = math.sqrt(setup.rho)
    sigma_v = math.sqrt(setup.channel_noise_var)
    alpha, _ = af_gain(setup)
    cols = setup.L + 1

    z_targets = np.empty(trials)
    af_estimates = np.empty(trials)
    done = 0
    while done < trials:
        count = min(block_size, trials - done)
        u = stream.uniforms(count * cols).reshape(count, cols)
        from .noise import transform_uniforms

        noise_draws = transform_uniforms(setup.noise, u[:, : setup.L])
        chan = sigma_v * ndtri(u[:, setup.L])
        scaled = sigmas[None, :] * noise_draws
        x = setup.theta + scaled
        y_raw = sqrt_rho * kernels.channel_sums(code, a, b, x) + chan
        z = y_raw / math.sqrt(setup.L)
        z_targets[done : done + count] = z / math.sqrt(setup.total_power)
        af_estimates[done : done + count] = setup.theta + scaled.mean(axis=1) + chan / (setup.L * alpha)
        done += count
    return {"z_targets": z_targets, "af_estimates": af_estimates}


def run_signal_statistics(setup, trials, master_seed, stream_id_base: int = 0) -> dict:
    """Normalized received values and AF estimates without any inversion.

    Used by the degeneration experiments, where the mean response flattens
    and inversion would be ill-conditioned by design.
    """
    return _collect_signal_statistics(setup, trials, master_seed, stream_id_base)


def run_detection_experiment(
    setup: DetectionSetup,
    trials: int,
    master_seed: int,
    *,
    stream_id_base: int = 0,
    stratified: bool = False,
    spec: QuadratureSpec | None = None,
    experiment_id: str = "detection",
    block_size: int = 65536,
) -> TrialSummary:
    """Monte Carlo error probability with the detector built once."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    detector = build_detector(setup, spec)
    stream = RngStream(master_seed, stream_id_base)
    hypotheses, wrong = simulate_decisions(setup, detector, trials, stream, stratified=stratified, block_size=block_size)
    summary = TrialSummary(
        experiment_id=experiment_id,
        master_seed=master_seed,
        trials=trials,
        kind="detection",
        hypotheses=hypotheses,
        errors=wrong,
        priors=setup.priors,
        stratified=stratified,
    )
    summary.aggregates = recompute_aggregates(summary)
    return summary


SWEEP_PARAMETERS = ("omega", "L", "theta", "sigma_growth")


def apply_sweep_parameter(setup, parameter: str, value):
    """Return a copy of ``setup`` with one swept field replaced."""
    if parameter == "omega":
        return replace(setup, transmit=tx.with_omega(setup.transmit, float(value)))
    if parameter == "L":
        return replace(setup, L=int(value))
    if parameter == "theta":
        return replace(setup, theta=float(value))
    if parameter == "sigma_growth":
        return replace(setup, sigmas=sqrt_growth_sigmas(float(value)))
    raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")


def sweep(
    parameter: str,
    values,
    setup,
    trials: int,
    master_seed: int,
    *,
    workers: int = 1,
    estimator: str = "bounded",
    stratified: bool = False,
    spec: QuadratureSpec | None = None,
) -> list[tuple[float, TrialSummary]]:
    """Run one experiment per value; points are independently seeded.

    Point k draws from stream ids starting at k * 2**32, so the table is
    reproducible for any worker count and any subset of points.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep requires at least one value")

    def run_point(index_value):
        index, value = index_value
        point_setup = apply_sweep_parameter(setup, parameter, value)
        base = index * POINT_STREAM_STRIDE
        if isinstance(point_setup, EstimationSetup):
            summary = run_estimation_experiment(
                point_setup,
                trials,
                master_seed,
                estimator=estimator,
                stream_id_base=base,
                spec=spec,
                experiment_id=f"{parameter}={value}",
            )
        else:
            summary = run_detection_experiment(
                point_setup,
                trials,
                master_seed,
                stream_id_base=base,
                stratified=stratified,
                spec=spec,
                experiment_id=f"{parameter}={value}",
            )
        return value, summary

    items = list(enumerate(values))
    if workers <= 1 or len(items) == 1:
        return [run_point(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_point, items))
