"""Per-sensor transmission nonlinearities.

Every analytic bounded kind (tanh, gudermannian, rational) is normalized so
that sup |f| = 1; the gudermannian carries a 2/pi factor for that reason.
The uniform quantizer follows the mid-rise-free convention with odd level
count M = 2K + 1, step Delta = 2*x_max/M, half-open cells
[(k-1/2)Delta, (k+1/2)Delta), and saturation at +/- K*Delta. ``linear`` and
``signed_power`` are deliberately unbounded; they exist as the
amplify-and-forward baseline and the heavy-tail side experiment.

Hot array evaluation is delegated to :mod:`macfusion.kernels` so the numba
and numpy backends share one definition of each curve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels

TANH = "tanh"
GUDERMANNIAN = "gudermannian"
RATIONAL = "rational"
SIGNED_POWER = "signed_power"
UNIFORM_QUANTIZER = "uniform_quantizer"
LINEAR = "linear"

TRANSMIT_KINDS = (TANH, GUDERMANNIAN, RATIONAL, SIGNED_POWER, UNIFORM_QUANTIZER, LINEAR)

# Kind codes shared with the kernel backends.
KIND_CODES = {
    TANH: 0,
    GUDERMANNIAN: 1,
    RATIONAL: 2,
    SIGNED_POWER: 3,
    UNIFORM_QUANTIZER: 4,
    LINEAR: 5,
}

# Kinds satisfying smooth strict monotonicity with bounded range.
BOUNDED_SMOOTH_KINDS = (TANH, GUDERMANNIAN, RATIONAL)


class UnsupportedKindError(ValueError):
    """Raised when an operation is undefined for the transmit kind."""


@dataclass(frozen=True)
class TransmitFunction:
    """A parametric transmission curve.

    Exactly the parameters relevant to ``kind`` are meaningful: ``omega``
    for tanh/gudermannian/rational, ``p_exponent`` for signed_power,
    ``x_max``/``levels`` for the uniform quantizer, and ``alpha`` for
    linear.
    """

    kind: str
    omega: float | None = None
    p_exponent: float | None = None
    x_max: float | None = None
    levels: int | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in TRANSMIT_KINDS:
            raise ValueError(f"unknown transmit kind {self.kind!r}; expected one of {TRANSMIT_KINDS}")
        if self.kind in (TANH, GUDERMANNIAN, RATIONAL):
            if self.omega is None or not (self.omega > 0.0 and np.isfinite(self.omega)):
                raise ValueError(f"{self.kind} requires a positive finite omega, got {self.omega}")
        elif self.kind == SIGNED_POWER:
            if self.p_exponent is None or not (0.0 < self.p_exponent < 0.5):
                raise ValueError(f"signed_power requires p_exponent in (0, 1/2), got {self.p_exponent}")
        elif self.kind == UNIFORM_QUANTIZER:
            if self.x_max is None or not (self.x_max > 0.0 and np.isfinite(self.x_max)):
                raise ValueError(f"uniform_quantizer requires positive x_max, got {self.x_max}")
            if self.levels is None or self.levels < 3 or self.levels % 2 == 0:
                raise ValueError(f"uniform_quantizer requires odd level count >= 3, got {self.levels}")
        elif self.kind == LINEAR:
            if self.alpha is None or not (self.alpha > 0.0 and np.isfinite(self.alpha)):
                raise ValueError(f"linear requires a positive finite alpha, got {self.alpha}")


def tanh_fn(omega: float) -> TransmitFunction:
    return TransmitFunction(TANH, omega=omega)


def gudermannian_fn(omega: float) -> TransmitFunction:
    return TransmitFunction(GUDERMANNIAN, omega=omega)


def rational_fn(omega: float) -> TransmitFunction:
    return TransmitFunction(RATIONAL, omega=omega)


def signed_power_fn(p_exponent: float) -> TransmitFunction:
    return TransmitFunction(SIGNED_POWER, p_exponent=p_exponent)


def uniform_quantizer_fn(x_max: float, levels: int) -> TransmitFunction:
    return TransmitFunction(UNIFORM_QUANTIZER, x_max=x_max, levels=levels)


def linear_fn(alpha: float) -> TransmitFunction:
    return TransmitFunction(LINEAR, alpha=alpha)


def with_omega(f: TransmitFunction, omega: float) -> TransmitFunction:
    """Return a copy of ``f`` with its scale parameter replaced."""
    if f.kind not in (TANH, GUDERMANNIAN, RATIONAL):
        raise UnsupportedKindError(f"{f.kind} has no omega parameter")
    return replace(f, omega=omega)


def quantizer_step(f: TransmitFunction) -> float:
    """Delta = 2*x_max/M for the uniform quantizer."""
    if f.kind != UNIFORM_QUANTIZER:
        raise UnsupportedKindError("quantizer_step is defined only for uniform_quantizer")
    return 2.0 * f.x_max / f.levels


def kind_params(f: TransmitFunction) -> tuple[int, float, float]:
    """(code, a, b) triple consumed by the kernel backends."""
    code = KIND_CODES[f.kind]
    if f.kind in (TANH, GUDERMANNIAN, RATIONAL):
        return code, f.omega, 0.0
    if f.kind == SIGNED_POWER:
        return code, f.p_exponent, 0.0
    if f.kind == UNIFORM_QUANTIZER:
        return code, quantizer_step(f), (f.levels - 1) / 2.0
    return code, f.alpha, 0.0


def eval_fn(f: TransmitFunction, x):
    """Evaluate f(x); vectorized over ``x``."""
    code, a, b = kind_params(f)
    scalar = np.isscalar(x) or np.ndim(x) == 0
    out = kernels.eval_transmit(code, a, b, np.asarray(x, dtype=np.float64).ravel())
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(x))


def derivative(f: TransmitFunction, x):
    """Evaluate f'(x) in closed form.

    The quantizer has no classical derivative and signed_power blows up at
    the origin, so both reject the respective inputs.
    """
    if f.kind == UNIFORM_QUANTIZER:
        raise UnsupportedKindError("uniform_quantizer has no classical derivative")
    x = np.asarray(x, dtype=np.float64)
    if f.kind == TANH:
        t = np.tanh(f.omega * x)
        out = f.omega * (1.0 - t * t)
    elif f.kind == GUDERMANNIAN:
        out = (2.0 / np.pi) * f.omega / np.cosh(f.omega * x)
    elif f.kind == RATIONAL:
        out = f.omega / (1.0 + np.abs(f.omega * x)) ** 2
    elif f.kind == LINEAR:
        out = np.broadcast_to(np.float64(f.alpha), x.shape).copy()
    else:
        if np.any(x == 0.0):
            raise UnsupportedKindError("signed_power derivative is undefined at x = 0")
        p = f.p_exponent
        out = p * np.abs(x) ** (p - 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def bound(f: TransmitFunction) -> float | None:
    """sup |f|, or None for the unbounded kinds."""
    if f.kind in BOUNDED_SMOOTH_KINDS:
        return 1.0
    if f.kind == UNIFORM_QUANTIZER:
        k = (f.levels - 1) // 2
        return k * quantizer_step(f)
    return None


def is_bounded(f: TransmitFunction) -> bool:
    return bound(f) is not None


def is_invertible(f: TransmitFunction) -> bool:
    """Strictly increasing kinds, i.e. everything but the quantizer."""
    return f.kind != UNIFORM_QUANTIZER


def is_differentiable(f: TransmitFunction) -> bool:
    return f.kind in (TANH, GUDERMANNIAN, RATIONAL, LINEAR)


def breakpoints(f: TransmitFunction) -> tuple[float, ...]:
    """x-locations where f has a kink or jump, for piecewise quadrature."""
    if f.kind == UNIFORM_QUANTIZER:
        delta = quantizer_step(f)
        k = (f.levels - 1) // 2
        return tuple((j + 0.5) * delta for j in range(-k - 1, k + 1))
    if f.kind in (SIGNED_POWER, RATIONAL):
        return (0.0,)
    return ()
