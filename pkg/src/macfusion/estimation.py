"""Mean-response inversion estimator and the amplify-and-forward baseline.

The fusion center sees a power-scaled sum of nonlinearly mapped sensor
observations. Its estimator inverts the mean response

    h_L(theta) = (1/L) sum_i E[f(theta + sigma_i * n_i)]

at the normalized received value. h_L is strictly increasing whenever f is,
so inversion is well posed; when channel noise pushes the target outside
the attainable range the target is clamped just inside and the event is
reported to the caller.

Two evaluation paths exist. The scalar path evaluates h_L by adaptive
quadrature and solves with Brent's method, one call per target. The batch
path (used by the Monte Carlo harness) freezes the quadrature mesh once per
setup into flat node/weight arrays, validates it against the adaptive
answer, and then solves whole target arrays in a kernel from a monotone
response grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels, transmit as tx
from .noise import NoiseModel, cdf, quantile, variance
from .numerics import (
    DEFAULT_QUADRATURE,
    NumericsError,
    QuadratureSpec,
    adaptive_quadrature,
    expect,
    fixed_mesh_nodes,
    invert_monotone,
)

CONSTANT = "constant"
EXPLICIT_LIST = "explicit_list"
SQRT_GROWTH = "sqrt_growth"

SIGMA_KINDS = (CONSTANT, EXPLICIT_LIST, SQRT_GROWTH)


@dataclass(frozen=True)
class SigmaSequence:
    """Deterministic per-sensor reliability scales sigma_i.

    ``constant`` repeats one value, ``explicit_list`` enumerates values,
    and ``sqrt_growth`` models decreasingly reliable sensing via
    sigma_i = sigma * sqrt(i).
    """

    kind: str
    sigma: float | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma sequence kind {self.kind!r}")
        if self.kind in (CONSTANT, SQRT_GROWTH):
            if self.sigma is None or not (self.sigma > 0.0 and np.isfinite(self.sigma)):
                raise ValueError(f"{self.kind} sigma sequence requires positive sigma")
        else:
            if not self.values or any(not (v > 0.0 and np.isfinite(v)) for v in self.values):
                raise ValueError("explicit_list sigma sequence requires positive entries")

    def resolve(self, length: int) -> np.ndarray:
        """sigma_1 .. sigma_L as an array."""
        if length <= 0:
            raise ValueError("sensor count must be positive")
        if self.kind == CONSTANT:
            return np.full(length, self.sigma)
        if self.kind == SQRT_GROWTH:
            return self.sigma * np.sqrt(np.arange(1, length + 1, dtype=np.float64))
        if len(self.values) != length:
            raise ValueError(f"explicit sigma list has {len(self.values)} entries, setup has L={length}")
        return np.asarray(self.values, dtype=np.float64)

    def distinct(self, length: int):
        """(unique sigma values, multiplicities) for quadrature dedup."""
        values, counts = np.unique(self.resolve(length), return_counts=True)
        return values, counts

    def is_bounded_constant_one(self) -> bool:
        if self.kind == CONSTANT:
            return self.sigma == 1.0
        if self.kind == EXPLICIT_LIST:
            return all(v == 1.0 for v in self.values)
        return False


def constant_sigmas(sigma: float = 1.0) -> SigmaSequence:
    return SigmaSequence(CONSTANT, sigma=sigma)


def sqrt_growth_sigmas(sigma: float = 1.0) -> SigmaSequence:
    return SigmaSequence(SQRT_GROWTH, sigma=sigma)


@dataclass(frozen=True)
class EstimationSetup:
    """Parameter, sensor field, transmit curve, and channel budget."""

    theta: float
    L: int
    sigmas: SigmaSequence
    noise: NoiseModel
    transmit: tx.TransmitFunction
    total_power: float
    channel_noise_var: float

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if not (self.total_power > 0.0 and np.isfinite(self.total_power)):
            raise ValueError("total_power must be positive")
        if not (self.channel_noise_var > 0.0 and np.isfinite(self.channel_noise_var)):
            raise ValueError("channel_noise_var must be positive")

    @property
    def rho(self) -> float:
        """Per-sensor power factor under the total power budget."""
        return self.total_power / self.L


def _transition_width(f: tx.TransmitFunction) -> float:
    """Characteristic x-scale over which f turns; guards quadrature seeding."""
    if f.kind in (tx.TANH, tx.GUDERMANNIAN, tx.RATIONAL):
        return 1.0 / f.omega
    if f.kind == tx.UNIFORM_QUANTIZER:
        return tx.quantizer_step(f)
    return 1.0


def _moment_breakpoints(f: tx.TransmitFunction, sigma: float, theta: float, domain: float):
    """Seed points in n for the integrand f(theta + sigma * n)^k p(n).

    Kinks map exactly; for smooth kinds the transition center and a few
    width multiples are seeded so large sigma cannot hide the feature from
    the first refinement rounds.
    """
    pts = [(b - theta) / sigma for b in tx.breakpoints(f)]
    center = -theta / sigma
    width = _transition_width(f) / sigma
    for k in (0.0, 1.0, -1.0, 10.0, -10.0):
        pts.append(center + k * width)
    return tuple(p for p in pts if abs(p) < domain)


@lru_cache(maxsize=None)
def _g_moment_cached(
    noise: NoiseModel,
    f: tx.TransmitFunction,
    sigma: float,
    theta: float,
    power: int,
    spec: QuadratureSpec,
) -> float:
    from .noise import tail_truncation

    code, a, b = tx.kind_params(f)
    t = tail_truncation(noise, spec.tail_mass)

    if power == 1:
        def g(n):
            return kernels.eval_transmit(code, a, b, theta + sigma * n)
    else:
        def g(n):
            v = kernels.eval_transmit(code, a, b, theta + sigma * n)
            return v * v

    return expect(
        noise,
        g,
        spec,
        breakpoints=_moment_breakpoints(f, sigma, theta, t),
        context=f"E[f^{power}(theta + sigma n)] at sigma={sigma}, theta={theta}",
    )


def g_moment(
    noise: NoiseModel,
    f: tx.TransmitFunction,
    sigma: float,
    theta: float,
    power: int = 1,
    spec: QuadratureSpec | None = None,
) -> float:
    """E[f(theta + sigma n)^power] by adaptive quadrature (memoized)."""
    return _g_moment_cached(noise, f, float(sigma), float(theta), int(power), spec or DEFAULT_QUADRATURE)


def clear_moment_cache() -> None:
    _g_moment_cached.cache_clear()


def mean_response(setup: EstimationSetup, theta: float, spec: QuadratureSpec | None = None) -> float:
    """h_L(theta), deduplicated over distinct sigma values.

    For a constant sequence the average over L identical terms is computed
    as 1.0 * g(theta), so the result is bit-identical for every L.
    """
    values, counts = setup.sigmas.distinct(setup.L)
    total = 0.0
    for sigma, count in zip(values, counts):
        total += (count / setup.L) * g_moment(setup.noise, setup.transmit, sigma, theta, 1, spec)
    return total


def response_limits(setup: EstimationSetup) -> tuple[float, float]:
    """Closure of the range of h_L: (-c, c) for bounded f, else the line."""
    c = tx.bound(setup.transmit)
    if c is None:
        return -math.inf, math.inf
    return -c, c


CLAMP_MARGIN = 1e-9


@dataclass(frozen=True)
class InversionResult:
    theta: float
    clamped: bool


def estimate_info(setup: EstimationSetup, received_z: float, spec: QuadratureSpec | None = None) -> InversionResult:
    """Invert the normalized received signal; reports range clamping."""
    if not tx.is_invertible(setup.transmit):
        raise tx.UnsupportedKindError(f"{setup.transmit.kind} is not invertible; the estimator requires a one-to-one transmit curve")
    target = received_z / math.sqrt(setup.total_power)
    lo, hi = response_limits(setup)
    clamped = False
    if target <= lo + CLAMP_MARGIN:
        target = lo + CLAMP_MARGIN
        clamped = True
    elif target >= hi - CLAMP_MARGIN:
        target = hi - CLAMP_MARGIN
        clamped = True
    theta = invert_monotone(lambda t: mean_response(setup, t, spec), target, bracket_hint=(-1.0, 1.0))
    return InversionResult(theta=theta, clamped=clamped)


def estimate(setup: EstimationSetup, received_z: float, spec: QuadratureSpec | None = None) -> float:
    """theta estimate from the normalized received signal (Brent path)."""
    return estimate_info(setup, received_z, spec).theta


def asymptotic_variance(setup: EstimationSetup, spec: QuadratureSpec | None = None) -> float:
    """Limiting variance of sqrt(L) * (theta_hat - theta).

    Requires the i.i.d. unit-scale regime (sigma_i = 1) and a
    differentiable transmit curve; three density expectations feed the
    closed form.
    """
    if not setup.sigmas.is_bounded_constant_one():
        raise ValueError("asymptotic variance requires sigma_i = 1 for every sensor")
    f = setup.transmit
    if not tx.is_differentiable(f):
        raise tx.UnsupportedKindError(f"asymptotic variance needs a differentiable transmit curve, not {f.kind}")
    spec = spec or DEFAULT_QUADRATURE
    theta = setup.theta
    second = g_moment(setup.noise, f, 1.0, theta, 2, spec)
    mean = g_moment(setup.noise, f, 1.0, theta, 1, spec)
    slope = expect(
        setup.noise,
        lambda n: tx.derivative(f, theta + n),
        spec,
        breakpoints=_moment_breakpoints(f, 1.0, theta, 1e300),
        context=f"E[f'(theta + n)] at theta={theta}",
    )
    noise_part = second - mean * mean + setup.channel_noise_var / setup.total_power
    return noise_part / (slope * slope)


def af_gain(setup: EstimationSetup) -> tuple[float, bool]:
    """Power-normalizing gain alpha_L for amplify-and-forward.

    Returns (alpha_L, used_nominal_variance). Cauchy sensing noise has no
    variance, so the normalization substitutes a nominal unit variance;
    the consistency conclusions do not depend on that stand-in.
    """
    sigma_n2 = variance(setup.noise)
    nominal = not math.isfinite(sigma_n2)
    if nominal:
        sigma_n2 = 1.0
    sigmas = setup.sigmas.resolve(setup.L)
    denom = float(np.sum(setup.theta**2 + sigmas**2 * sigma_n2))
    return math.sqrt(setup.total_power / denom), nominal


def af_estimate(setup: EstimationSetup, sensor_noise: np.ndarray, channel_draw: float) -> float:
    """Amplify-and-forward estimate for one trial's noise realization."""
    sensor_noise = np.asarray(sensor_noise, dtype=np.float64)
    if sensor_noise.shape != (setup.L,):
        raise ValueError(f"expected {setup.L} sensor noise draws, got shape {sensor_noise.shape}")
    alpha, _ = af_gain(setup)
    sigmas = setup.sigmas.resolve(setup.L)
    return setup.theta + float(np.mean(sigmas * sensor_noise)) + channel_draw / (setup.L * alpha)


# ---------------------------------------------------------------------------
# Flat-node fast path
# ---------------------------------------------------------------------------


class MeshValidationError(NumericsError):
    """The frozen quadrature mesh failed to reproduce the adaptive answer."""


@dataclass(frozen=True)
class FlatResponse:
    """h_L frozen into flat shifted-node/weight arrays.

    h(theta) = sum_j weights[j] * f(theta + nodes[j]); the weights absorb
    the probability measure and sigma multiplicities, so evaluation and
    batched inversion reduce to kernel calls.
    """

    nodes: np.ndarray
    weights: np.ndarray
    code: int
    a: float
    b: float
    limit: float  # sup |h|; math.inf for unbounded kinds

    def eval(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        shifted = theta[:, None] + self.nodes[None, :]
        vals = kernels.eval_transmit(self.code, self.a, self.b, shifted.ravel())
        return vals.reshape(shifted.shape) @ self.weights

    def eval_one(self, theta: float) -> float:
        return float(self.eval(np.array([theta]))[0])

    def invert(self, targets: np.ndarray, grid_size: int = 2049) -> tuple[np.ndarray, np.ndarray]:
        """Invert an array of targets; returns (thetas, clamp mask)."""
        targets = np.asarray(targets, dtype=np.float64)
        clamped = np.zeros(targets.shape, dtype=bool)
        if math.isfinite(self.limit):
            lo_t, hi_t = -self.limit + CLAMP_MARGIN, self.limit - CLAMP_MARGIN
            clamped = (targets <= lo_t) | (targets >= hi_t)
            targets = np.clip(targets, lo_t, hi_t)
        t_min = float(targets.min())
        t_max = float(targets.max())
        lo, hi = -1.0, 1.0
        width = 2.0
        while self.eval_one(lo) >= t_min:
            width *= 2.0
            lo -= width
            if lo < -1e18:
                raise NumericsError("failed to bracket inversion targets from below")
        while self.eval_one(hi) <= t_max:
            width *= 2.0
            hi += width
            if hi > 1e18:
                raise NumericsError("failed to bracket inversion targets from above")
        grid_x = np.linspace(lo, hi, grid_size)
        # Enforce nondecreasing grid values; saturation plateaus can wiggle
        # at machine precision and searchsorted needs sorted input.
        grid_h = np.maximum.accumulate(self.eval(grid_x))
        thetas = kernels.invert_h_targets(self.nodes, self.weights, self.code, self.a, self.b, targets, grid_x, grid_h)
        return thetas, clamped


def _probability_mesh(
    noise: NoiseModel,
    f: tx.TransmitFunction,
    sigma: float,
    probes,
    spec: QuadratureSpec,
):
    """Adaptive mesh edges in probability space for E[f(theta + sigma n)].

    Integrating in v with n = Q(v) turns the truncated density expectation
    into integral_{d}^{1-d} f(theta + sigma Q(v)) dv, whose mesh stays
    compact even for heavy-tailed noise. One adaptive pass on the summed
    probe integrand resolves every probe's transition, so a single mesh
    serves the whole inversion bracket. The constant offset keeps the total
    away from zero without touching the panel error estimates, so the
    relative tolerance stays meaningful for odd integrands.
    """
    d = 0.5 * spec.tail_mass
    code, a, b = tx.kind_params(f)
    probes = np.asarray(probes, dtype=np.float64)
    offset = 2.0 * probes.size

    def integrand(v):
        q = sigma * np.asarray(quantile(noise, v))
        acc = np.full(q.shape, offset)
        for theta in probes:
            acc = acc + kernels.eval_transmit(code, a, b, theta + q)
        return acc

    bps = set()
    for theta in probes:
        for p in _moment_breakpoints(f, sigma, float(theta), math.inf):
            u = float(cdf(noise, p))
            if d < u < 1.0 - d:
                bps.add(u)
    _, _, edges = adaptive_quadrature(
        integrand,
        d,
        1.0 - d,
        rel_tol=spec.rel_tol,
        abs_tol=spec.abs_tol,
        breakpoints=sorted(bps),
        max_subdivisions=spec.max_subdivisions,
        context=f"probability-space response mesh at sigma={sigma}",
    )
    return edges


def build_flat_response(
    setup: EstimationSetup,
    theta_span: tuple[float, float] | None = None,
    spec: QuadratureSpec | None = None,
) -> FlatResponse:
    """Freeze h_L into flat arrays and validate against the adaptive path.

    The mesh is built from adaptive runs at probe thetas across
    ``theta_span`` and accepted only if the frozen evaluation matches
    ``mean_response`` to 1e-9 (relative to the response bound) at check
    points; otherwise every panel is halved and the check repeats.
    """
    spec = spec or DEFAULT_QUADRATURE
    if theta_span is None:
        pad = 6.0 * max(1.0, _transition_width(setup.transmit))
        theta_span = (setup.theta - pad, setup.theta + pad)
    lo, hi = theta_span
    if not lo < hi:
        raise ValueError("theta_span must be increasing")
    probes = np.linspace(lo, hi, 7)
    values, counts = setup.sigmas.distinct(setup.L)
    code, a, b = tx.kind_params(setup.transmit)

    parts_nodes = []
    parts_weights = []
    for sigma, count in zip(values, counts):
        edges = _probability_mesh(setup.noise, setup.transmit, float(sigma), probes, spec)
        for _ in range(4):
            v_nodes, v_weights = fixed_mesh_nodes(edges)
            nodes = sigma * np.asarray(quantile(setup.noise, v_nodes))
            weights = (count / setup.L) * v_weights
            if _mesh_is_valid(setup, nodes, weights, code, a, b, sigma, count, probes, spec):
                break
            edges = np.unique(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
        else:
            raise MeshValidationError(f"flat response mesh failed validation at sigma={sigma}")
        parts_nodes.append(nodes)
        parts_weights.append(weights)

    c = tx.bound(setup.transmit)
    return FlatResponse(
        nodes=np.concatenate(parts_nodes),
        weights=np.concatenate(parts_weights),
        code=code,
        a=a,
        b=b,
        limit=math.inf if c is None else c,
    )


def _mesh_is_valid(setup, nodes, weights, code, a, b, sigma, count, probes, spec) -> bool:
    check = np.unique(np.concatenate([probes, 0.5 * (probes[:-1] + probes[1:])]))
    share = count / setup.L
    for theta in check:
        flat = float(kernels.eval_transmit(code, a, b, theta + nodes) @ weights)
        exact = share * g_moment(setup.noise, setup.transmit, float(sigma), float(theta), 1, spec)
        if abs(flat - exact) > 1e-9 * max(1.0, abs(exact)):
            return False
    return True
