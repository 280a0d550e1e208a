"""Numerical substrate: quadrature, inversion, minimization, RNG streams.

Expectations against a noise density are computed by adaptive Gauss-Kronrod
(G7/K15) quadrature over a quantile-truncated interval. Truncation at tail
mass m keeps the error certifiable for the bounded integrands used
throughout: |error| <= sup|g| * m. The refinement loop is round-based and
evaluates every pending panel in one vectorized call, which keeps Python
overhead flat when thousands of expectations are requested (for example
when sweeping per-sensor reliability sequences).

Random streams are counter-keyed Philox generators: the pair
(master_seed, stream_id) fully determines the draw sequence, so any worker
layout that assigns disjoint stream ids reproduces bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .noise import NoiseModel, pdf, tail_truncation


class NumericsError(Exception):
    """Base error for the numerical substrate."""


class QuadratureConvergenceError(NumericsError):
    """Adaptive refinement hit the subdivision cap before the tolerance."""

    def __init__(self, estimate: float, error_bound: float, context: str = ""):
        self.estimate = estimate
        self.error_bound = error_bound
        self.context = context
        label = context or "integral"
        super().__init__(
            f"quadrature did not converge for {label}: "
            f"estimate={estimate!r}, error bound={error_bound!r}"
        )


class InversionRangeError(NumericsError):
    """Target lies outside the closure of the monotone function's range."""

    def __init__(self, target: float, nearest_endpoint: float, at_x: float):
        self.target = target
        self.nearest_endpoint = nearest_endpoint
        self.at_x = at_x
        super().__init__(
            f"target {target!r} is outside the attainable range; "
            f"nearest endpoint {nearest_endpoint!r} at x={at_x!r}"
        )


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances governing every density expectation."""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    tail_mass: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (0.0 < self.rel_tol < 1.0):
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        for name in ("abs_tol", "tail_mass"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_subdivisions <= 0:
            raise ValueError("max_subdivisions must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()

# G7/K15 abscissae and weights (positive half; index 7 is the origin).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.empty(15)
_KW = np.empty(15)
_GW = np.zeros(15)
for _i in range(7):
    _NODES[_i] = -_XGK[_i]
    _NODES[14 - _i] = _XGK[_i]
    _KW[_i] = _KW[14 - _i] = _WGK[_i]
_NODES[7] = 0.0
_KW[7] = _WGK[7]
for _j, _pos in enumerate((1, 3, 5)):
    _GW[_pos] = _GW[14 - _pos] = _WG[_j]
_GW[7] = _WG[3]
del _i, _j, _pos


def _gk15_batch(fun, lefts: np.ndarray, rights: np.ndarray):
    """Evaluate K15 value and error estimate on every panel at once."""
    centers = 0.5 * (lefts + rights)
    half = 0.5 * (rights - lefts)
    points = centers[:, None] + half[:, None] * _NODES[None, :]
    y = np.asarray(fun(points.ravel()), dtype=np.float64).reshape(points.shape)
    vals = half * (y @ _KW)
    gauss = half * (y @ _GW)
    errdiff = np.abs(vals - gauss)
    mean = vals / np.where(rights != lefts, rights - lefts, 1.0)
    resasc = half * (np.abs(y - mean[:, None]) @ _KW)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(
            resasc > 0.0,
            resasc * np.minimum(1.0, (200.0 * errdiff / np.where(resasc > 0.0, resasc, 1.0)) ** 1.5),
            errdiff,
        )
    return vals, scaled


def adaptive_quadrature(
    fun,
    a: float,
    b: float,
    *,
    rel_tol: float = 1e-9,
    abs_tol: float = 1e-12,
    breakpoints=(),
    max_subdivisions: int = 2000,
    context: str = "",
):
    """Integrate ``fun`` over [a, b] with round-based panel refinement.

    ``fun`` must accept a 1-D float array. Interior breakpoints become
    initial panel edges so discontinuous integrands never straddle a panel.
    Returns ``(value, error_bound, edges)`` where ``edges`` is the final
    sorted mesh (useful for building fixed-node re-evaluations).
    """
    if not b > a:
        raise ValueError("integration interval requires b > a")
    interior = sorted(p for p in breakpoints if a < p < b)
    edges = np.array([a, *interior, b], dtype=np.float64)
    edges = np.unique(edges)
    lefts, rights = edges[:-1], edges[1:]
    vals, errs = _gk15_batch(fun, lefts, rights)
    subdivisions = 0
    while True:
        total = math.fsum(vals.tolist())
        err_total = math.fsum(errs.tolist())
        tol = max(abs_tol, rel_tol * abs(total))
        if err_total <= tol:
            order = np.argsort(lefts)
            final_edges = np.append(lefts[order], rights[order][-1])
            return total, err_total, final_edges
        # Split every panel exceeding its fair share of the budget; at least
        # one such panel exists whenever the loop continues.
        split = errs > tol / lefts.size
        if not split.any():
            split = errs == errs.max()
        n_split = int(split.sum())
        if subdivisions + n_split > max_subdivisions:
            raise QuadratureConvergenceError(total, err_total, context)
        subdivisions += n_split
        mids = 0.5 * (lefts[split] + rights[split])
        new_lefts = np.concatenate([lefts[~split], lefts[split], mids])
        new_rights = np.concatenate([rights[~split], mids, rights[split]])
        keep_vals, keep_errs = vals[~split], errs[~split]
        ref_vals, ref_errs = _gk15_batch(fun, np.concatenate([lefts[split], mids]), np.concatenate([mids, rights[split]]))
        lefts, rights = new_lefts, new_rights
        vals = np.concatenate([keep_vals, ref_vals])
        errs = np.concatenate([keep_errs, ref_errs])


def fixed_mesh_nodes(edges: np.ndarray):
    """K15 nodes and weights for a fixed mesh given by sorted ``edges``.

    ``sum(w * fun(x))`` reproduces the adaptive result on the mesh the
    adaptive pass converged to, but as a single weighted dot product.
    """
    edges = np.asarray(edges, dtype=np.float64)
    lefts, rights = edges[:-1], edges[1:]
    centers = 0.5 * (lefts + rights)
    half = 0.5 * (rights - lefts)
    x = (centers[:, None] + half[:, None] * _NODES[None, :]).ravel()
    w = (half[:, None] * _KW[None, :]).ravel()
    return x, w


def expect(
    model: NoiseModel,
    g,
    spec: QuadratureSpec | None = None,
    *,
    breakpoints=(),
    context: str = "",
) -> float:
    """E[g(n)] = integral of g(n) p(n) dn over the truncated support.

    ``g`` must be vectorized over a 1-D array. Callers integrating a
    discontinuous ``g`` (quantizer cells) pass the kink locations through
    ``breakpoints``.
    """
    spec = spec or DEFAULT_QUADRATURE
    t = tail_truncation(model, spec.tail_mass)

    def integrand(x):
        return np.asarray(g(x), dtype=np.float64) * pdf(model, x)

    value, _, _ = adaptive_quadrature(
        integrand,
        -t,
        t,
        rel_tol=spec.rel_tol,
        abs_tol=spec.abs_tol,
        breakpoints=breakpoints,
        max_subdivisions=spec.max_subdivisions,
        context=context or "density expectation",
    )
    return value


def invert_monotone(h, target: float, bracket_hint=(-1.0, 1.0)) -> float:
    """Solve h(x) = target for strictly increasing ``h``.

    The bracket expands geometrically from the hint until the residual
    changes sign. Targets beyond the attainable range raise
    :class:`InversionRangeError` carrying the nearest attainable value, so
    callers can decide whether to clamp.
    """
    lo, hi = (float(bracket_hint[0]), float(bracket_hint[1]))
    if lo > hi:
        lo, hi = hi, lo
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    f_lo = h(lo) - target
    f_hi = h(hi) - target
    width = hi - lo
    limit = 1e15
    while f_lo > 0.0 or f_hi < 0.0:
        if f_lo > 0.0:  # root lies to the left
            if lo <= -limit:
                raise InversionRangeError(target, h(lo), lo)
            width *= 2.0
            lo = max(lo - width, -limit)
            f_lo = h(lo) - target
        else:  # f_hi < 0: root lies to the right
            if hi >= limit:
                raise InversionRangeError(target, h(hi), hi)
            width *= 2.0
            hi = min(hi + width, limit)
            f_hi = h(hi) - target
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    return float(brentq(lambda x: h(x) - target, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


def _golden_section(g, a: float, b: float, tol: float):
    h = b - a
    if h <= tol:
        x = 0.5 * (a + b)
        return x, g(x)
    n = int(math.ceil(math.log(tol / h) / math.log(_INV_PHI)))
    c = a + _INV_PHI_SQ * h
    d = a + _INV_PHI * h
    yc = g(c)
    yd = g(d)
    for _ in range(n - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            h *= _INV_PHI
            c = a + _INV_PHI_SQ * h
            yc = g(c)
        else:
            a, c, yc = c, d, yd
            h *= _INV_PHI
            d = a + _INV_PHI * h
            yd = g(d)
    if yc < yd:
        return c, yc
    return d, yd


def minimize_scalar(g, lo: float, hi: float, grid_points: int = 32):
    """Coarse grid scan followed by golden-section refinement.

    Deterministic, and ties resolve to the smallest abscissa: a constant
    objective returns ``lo``. The grid pass guards against local traps the
    refinement alone could fall into.
    """
    if not lo < hi:
        raise ValueError("minimize_scalar requires lo < hi")
    if grid_points < 8:
        raise ValueError("grid_points must be >= 8")
    grid = np.linspace(lo, hi, grid_points)
    values = np.array([g(x) for x in grid], dtype=np.float64)
    best = int(np.argmin(values))
    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, grid_points - 1)]
    x_ref, v_ref = _golden_section(g, float(left), float(right), tol=1e-10 * max(1.0, abs(hi), abs(lo)))
    if v_ref < values[best]:
        return float(x_ref), float(v_ref)
    return float(grid[best]), float(values[best])


_MAX_UINT64 = 2**64


@dataclass
class RngStream:
    """A counter-keyed random stream owned by exactly one consumer.

    (master_seed, stream_id) keys a Philox generator; ``counter`` counts
    values drawn so far. Every drawn value consumes exactly one uniform,
    which makes draw accounting across a simulated trial exact.
    """

    master_seed: int
    stream_id: int
    counter: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= v < _MAX_UINT64):
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    def _generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def uniforms(self, count: int) -> np.ndarray:
        """``count`` uniforms in the open interval (0, 1)."""
        if count < 0:
            raise ValueError("count must be >= 0")
        u = self._generator().random(count)
        self.counter += count
        # random() yields [0, 1); the half-ulp shift keeps inverse-CDF
        # transforms finite without statistically visible bias.
        return u + 2.0**-54


def split_stream(parent: RngStream, child_id: int) -> RngStream:
    """Derive an independent child stream keyed by (master_seed, child_id).

    The derivation is flat: only the parent's master seed enters, so the
    same child id yields the identical sequence no matter which worker asks
    or in what order. Callers keep ids collision-free by convention
    (for sweeps: point_index * 2**32 + trial_index).
    """
    return RngStream(master_seed=parent.master_seed, stream_id=int(child_id))
