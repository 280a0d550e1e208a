"""Deflection coefficient, moment-matched quadratic detector, and the
locally-optimal nonlinearity duality.

The fusion center distinguishes signal present (theta under H1) from absent
(0 under H0) by watching the superposed channel output. The exact
likelihood ratio needs an (L+1)-fold convolution, so the working detector
is the Bayesian likelihood-ratio test between two moment-matched Gaussians;
its first two moments under each hypothesis come from density quadrature.
The deflection coefficient serves as the detector-free output-SNR surrogate

    D_L = (mean shift)^2 / (normalized H0 variance + channel term)

and the small-signal theory pairs each noise density with the transmit
curve that is locally optimal for it: f = -p'/p, with the inverse map
p = C exp(-int f).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, transmit as tx
from .estimation import SigmaSequence, g_moment
from .noise import NoiseModel, score
from .numerics import (
    DEFAULT_QUADRATURE,
    NumericsError,
    QuadratureSpec,
    adaptive_quadrature,
    minimize_scalar,
)


@dataclass(frozen=True)
class DetectionSetup:
    """Hypothesis-test configuration over the shared channel model."""

    theta: float
    L: int
    sigmas: SigmaSequence
    noise: NoiseModel
    transmit: tx.TransmitFunction
    total_power: float
    channel_noise_var: float
    priors: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.theta < 0.0:
            raise ValueError("theta must be nonnegative (H1 signal level)")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if not (self.total_power > 0.0 and np.isfinite(self.total_power)):
            raise ValueError("total_power must be positive")
        if not (self.channel_noise_var > 0.0 and np.isfinite(self.channel_noise_var)):
            raise ValueError("channel_noise_var must be positive")
        p0, p1 = self.priors
        if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0) or abs(p0 + p1 - 1.0) > 1e-12:
            raise ValueError(f"priors must be strictly positive and sum to 1, got {self.priors}")

    @property
    def rho(self) -> float:
        return self.total_power / self.L


def _sigma_shares(setup: DetectionSetup):
    values, counts = setup.sigmas.distinct(setup.L)
    return values, counts / setup.L


def deflection(setup: DetectionSetup, spec: QuadratureSpec | None = None) -> float:
    """Deflection coefficient D_L of the superposed channel output.

    Numerator: squared average shift of E[f] when theta turns on.
    Denominator: average per-sensor variance of f under H0 plus the channel
    noise term sigma_v^2 / P_T. The per-sigma expectations are deduplicated,
    so for a constant sequence the value is exactly independent of L.
    """
    spec = spec or DEFAULT_QUADRATURE
    values, shares = _sigma_shares(setup)
    shift = 0.0
    var0 = 0.0
    for sigma, share in zip(values, shares):
        sigma = float(sigma)
        g1 = g_moment(setup.noise, setup.transmit, sigma, setup.theta, 1, spec)
        g0 = g_moment(setup.noise, setup.transmit, sigma, 0.0, 1, spec)
        m2 = g_moment(setup.noise, setup.transmit, sigma, 0.0, 2, spec)
        shift += share * (g1 - g0)
        var0 += share * (m2 - g0 * g0)
    return shift * shift / (var0 + setup.channel_noise_var / setup.total_power)


def optimal_omega(
    setup: DetectionSetup,
    lo: float,
    hi: float,
    grid_points: int = 32,
    spec: QuadratureSpec | None = None,
) -> tuple[float, float]:
    """Maximize the deflection coefficient over the transmit scale omega."""
    if setup.transmit.kind not in (tx.TANH, tx.GUDERMANNIAN, tx.RATIONAL):
        # No omega to tune; the deflection is constant so the tie-break
        # convention applies.
        d = deflection(setup, spec)
        return lo, d

    def negative_dc(omega: float) -> float:
        candidate = tx.with_omega(setup.transmit, float(omega))
        return -deflection(_replace_transmit(setup, candidate), spec)

    omega_star, neg = minimize_scalar(negative_dc, lo, hi, grid_points)
    return omega_star, -neg


def _replace_transmit(setup: DetectionSetup, f: tx.TransmitFunction) -> DetectionSetup:
    return DetectionSetup(
        theta=setup.theta,
        L=setup.L,
        sigmas=setup.sigmas,
        noise=setup.noise,
        transmit=f,
        total_power=setup.total_power,
        channel_noise_var=setup.channel_noise_var,
        priors=setup.priors,
    )


@dataclass(frozen=True)
class GaussianApproxDetector:
    """Bayesian LRT between two moment-matched Gaussians.

    ``log_prior_ratio`` is ln(P1/P0); only the ratio enters the decision,
    so rescaling both priors leaves every decision unchanged.
    """

    mean0: float
    mean1: float
    var0: float
    var1: float
    log_prior_ratio: float

    def __post_init__(self):
        if not (self.var0 > 0.0 and self.var1 > 0.0):
            raise ValueError("detector variances must be positive")


def build_detector(setup: DetectionSetup, spec: QuadratureSpec | None = None) -> GaussianApproxDetector:
    """Exact first two moments of the channel output under each hypothesis."""
    spec = spec or DEFAULT_QUADRATURE
    values, shares = _sigma_shares(setup)
    scale = math.sqrt(setup.total_power * setup.L)
    means = []
    variances = []
    for theta in (0.0, setup.theta):
        g_bar = 0.0
        v_bar = 0.0
        for sigma, share in zip(values, shares):
            sigma = float(sigma)
            g1 = g_moment(setup.noise, setup.transmit, sigma, theta, 1, spec)
            m2 = g_moment(setup.noise, setup.transmit, sigma, theta, 2, spec)
            g_bar += share * g1
            v_bar += share * (m2 - g1 * g1)
        means.append(scale * g_bar)
        variances.append(setup.total_power * v_bar + setup.channel_noise_var)
    p0, p1 = setup.priors
    return GaussianApproxDetector(
        mean0=means[0],
        mean1=means[1],
        var0=variances[0],
        var1=variances[1],
        log_prior_ratio=math.log(p1 / p0),
    )


def log_density_ratio(detector: GaussianApproxDetector, y):
    """ln N(y; mean1, var1) - ln N(y; mean0, var0), vectorized."""
    y = np.asarray(y, dtype=np.float64)
    d0 = y - detector.mean0
    d1 = y - detector.mean1
    return (
        0.5 * math.log(detector.var0 / detector.var1)
        - 0.5 * d1 * d1 / detector.var1
        + 0.5 * d0 * d0 / detector.var0
    )


def decide(detector: GaussianApproxDetector, y):
    """0/1 hypothesis decision; ties go to H1. Vectorized over ``y``."""
    llr = log_density_ratio(detector, y)
    out = (llr >= -detector.log_prior_ratio).astype(np.uint8)
    if out.ndim == 0:
        return int(out)
    return out


def error_probability(
    setup: DetectionSetup,
    trials: int,
    stream,
    spec: QuadratureSpec | None = None,
    stratified: bool = False,
    block_size: int = 65536,
) -> tuple[float, float]:
    """Monte Carlo error probability of the quadratic detector.

    Each trial consumes, in order, one hypothesis uniform (skipped when
    stratified), L sensor uniforms, and one channel uniform; trials are laid
    out row-major so the draw accounting is exact. Returns the estimate and
    its binomial standard error.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    detector = build_detector(setup, spec)
    hypotheses, wrong = simulate_decisions(setup, detector, trials, stream, stratified=stratified, block_size=block_size)
    return summarize_errors(setup.priors, hypotheses, wrong, stratified)


def summarize_errors(priors, hypotheses: np.ndarray, wrong: np.ndarray, stratified: bool) -> tuple[float, float]:
    """(Pe, binomial standard error) from per-trial outcomes."""
    p0, p1 = priors
    trials = hypotheses.size
    if stratified:
        mask1 = hypotheses == 1
        n1 = int(mask1.sum())
        n0 = trials - n1
        rate0 = float(wrong[~mask1].mean()) if n0 else 0.0
        rate1 = float(wrong[mask1].mean()) if n1 else 0.0
        pe = p0 * rate0 + p1 * rate1
        stderr = math.sqrt(
            (p0 * p0 * rate0 * (1.0 - rate0) / n0 if n0 else 0.0)
            + (p1 * p1 * rate1 * (1.0 - rate1) / n1 if n1 else 0.0)
        )
        return pe, stderr
    pe = float(wrong.mean())
    return pe, math.sqrt(max(pe * (1.0 - pe), 0.0) / trials)


def simulate_decisions(
    setup: DetectionSetup,
    detector: GaussianApproxDetector,
    trials: int,
    stream,
    stratified: bool = False,
    block_size: int = 65536,
):
    """Run the full transmit/superpose/decide pipeline trial by trial.

    Returns (hypotheses, wrong) as uint8 arrays. Draw order per trial is
    one hypothesis uniform (omitted when stratified), sensors in ascending
    index order, then the channel draw; trials are row-major in the stream.
    """
    from scipy.special import ndtri

    from .noise import transform_uniforms

    code, a, b = tx.kind_params(setup.transmit)
    sigmas = setup.sigmas.resolve(setup.L)
    sqrt_rho = math.sqrt(setup.rho)
    sigma_v = math.sqrt(setup.channel_noise_var)
    p0, _ = setup.priors
    n_h0_total = int(round(p0 * trials)) if stratified else 0

    cols = setup.L + (1 if stratified else 2)
    hypotheses = np.empty(trials, dtype=np.uint8)
    wrong = np.empty(trials, dtype=np.uint8)
    done = 0
    while done < trials:
        count = min(block_size, trials - done)
        u = stream.uniforms(count * cols).reshape(count, cols)
        if stratified:
            idx = np.arange(done, done + count)
            h1 = (idx >= n_h0_total).astype(np.uint8)
            sensor_u = u[:, : setup.L]
            chan_u = u[:, setup.L]
        else:
            h1 = (u[:, 0] >= p0).astype(np.uint8)
            sensor_u = u[:, 1 : setup.L + 1]
            chan_u = u[:, setup.L + 1]
        noise_draws = transform_uniforms(setup.noise, sensor_u)
        x = h1[:, None] * setup.theta + sigmas[None, :] * noise_draws
        y = sqrt_rho * kernels.channel_sums(code, a, b, x) + sigma_v * ndtri(chan_u)
        decisions = decide(detector, y)
        hypotheses[done : done + count] = h1
        wrong[done : done + count] = (decisions != h1).astype(np.uint8)
        done += count
    return hypotheses, wrong


def locally_optimal_nonlinearity(model: NoiseModel):
    """The small-signal optimal transmit curve for ``model``: its score."""

    def f(x):
        return score(model, x)

    return f


class NonNormalizableError(NumericsError):
    """exp(-antiderivative of f) does not integrate to a finite mass."""


def matched_density(f, spec: QuadratureSpec | None = None):
    """Density for which ``f`` is the locally optimal nonlinearity.

    Returns a normalized callable p(x) = C exp(-A(x)) with
    A(x) = integral of f from 0 to x; the lower limit is a convention (any
    other choice is absorbed by C) that keeps p symmetric for odd f.
    ``f`` may be a TransmitFunction or a plain vectorized callable.
    """
    spec = spec or DEFAULT_QUADRATURE
    if isinstance(f, tx.TransmitFunction):
        code, a, b = tx.kind_params(f)
        feval = lambda x: kernels.eval_transmit(code, a, b, np.asarray(x, dtype=np.float64))
        kinks = tx.breakpoints(f)
    else:
        feval = lambda x: np.asarray(f(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        kinks = ()

    def antiderivative_at(t: float) -> float:
        lo, hi = (0.0, t) if t >= 0.0 else (t, 0.0)
        if lo == hi:
            return 0.0
        val, _, _ = adaptive_quadrature(
            feval,
            lo,
            hi,
            rel_tol=spec.rel_tol,
            abs_tol=spec.abs_tol,
            breakpoints=[k for k in kinks if lo < k < hi],
            max_subdivisions=spec.max_subdivisions,
            context="antiderivative of transmit curve",
        )
        return val if t >= 0.0 else -val

    # The density is integrable only if A(x) climbs without bound on both
    # sides; 46 nats leaves the truncated tail below 1e-20 of the mass.
    supports = []
    for sign in (1.0, -1.0):
        t = 1.0
        while t <= 2**40:
            if antiderivative_at(sign * t) >= 46.0:
                break
            t *= 2.0
        else:
            raise NonNormalizableError(
                "antiderivative of f grows too slowly; exp(-A) has a non-integrable tail"
            )
        supports.append(sign * t)
    t_plus, t_minus = supports

    # Freeze A on a refined mesh: panel integrals of f accumulate exactly,
    # and point evaluations finish with a single panel from the nearest
    # left edge.
    _, _, edges = adaptive_quadrature(
        feval,
        t_minus,
        t_plus,
        rel_tol=min(spec.rel_tol, 1e-10),
        abs_tol=spec.abs_tol,
        breakpoints=[k for k in kinks if t_minus < k < t_plus],
        max_subdivisions=spec.max_subdivisions,
        context="matched density antiderivative mesh",
    )
    edges = np.unique(np.concatenate([edges, np.linspace(t_minus, t_plus, 257), [0.0]]))
    from .numerics import _gk15_batch

    panel_vals, _ = _gk15_batch(feval, edges[:-1], edges[1:])
    cumulative = np.concatenate([[0.0], np.cumsum(panel_vals)])
    origin = float(np.interp(0.0, edges, cumulative))

    def antiderivative(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel()
        clipped = np.clip(flat, edges[0], edges[-1])
        idx = np.clip(np.searchsorted(edges, clipped, side="right") - 1, 0, edges.size - 2)
        lefts = edges[idx]
        partial = np.zeros(flat.size)
        nontrivial = clipped > lefts
        if nontrivial.any():
            vals, _ = _gk15_batch(feval, lefts[nontrivial], clipped[nontrivial])
            partial[nontrivial] = vals
        inner = cumulative[idx] + partial - origin
        # Outside the frozen mesh the curve is extended with one panel; f is
        # saturated there for every built-in kind.
        outside = flat != clipped
        if outside.any():
            lo_side = flat < edges[0]
            ext = np.zeros(flat.size)
            if lo_side.any():
                vals, _ = _gk15_batch(feval, flat[lo_side], np.full(lo_side.sum(), edges[0]))
                ext[lo_side] = -vals
            hi_side = outside & ~lo_side
            if hi_side.any():
                vals, _ = _gk15_batch(feval, np.full(hi_side.sum(), edges[-1]), flat[hi_side])
                ext[hi_side] = vals
            inner = inner + ext
        return inner.reshape(x.shape)

    def unnormalized(x):
        return np.exp(-antiderivative(x))

    mass, _, _ = adaptive_quadrature(
        unnormalized,
        t_minus,
        t_plus,
        rel_tol=min(spec.rel_tol, 1e-10),
        abs_tol=spec.abs_tol,
        breakpoints=[k for k in kinks if t_minus < k < t_plus],
        max_subdivisions=spec.max_subdivisions,
        context="matched density normalization",
    )
    if not (mass > 0.0 and np.isfinite(mass)):
        raise NonNormalizableError(f"normalization integral is {mass!r}")

    def density(x):
        scalar = np.isscalar(x) or np.ndim(x) == 0
        out = unnormalized(np.asarray(x, dtype=np.float64)) / mass
        if scalar:
            return float(out)
        return out

    return density
