"""Finite Fourier pressure fields P(x, t) with closed-form derivatives.

P(x, t) = c0 + sum_k a_k(t) cos(2 pi k.x) + b_k(t) sin(2 pi k.x)

Amplitudes are polynomials in t or a single cosine A cos(w t + phase).
All evaluators broadcast over points of shape (..., n) and times of shape (...).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, TimeOutOfRange

TWO_PI = 2.0 * np.pi
_T_SLACK = 1e-12


@dataclass(frozen=True)
class Amplitude:
    kind: str = "poly"
    coeffs: tuple[float, ...] = (0.0,)
    amp: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poly", "cos"):
            raise ConfigError(f"unknown amplitude kind {self.kind!r}")
        if self.kind == "poly" and len(self.coeffs) == 0:
            raise ConfigError("polynomial amplitude needs at least one coefficient")
        vals = list(self.coeffs) + [self.amp, self.omega, self.phase]
        if not np.all(np.isfinite(vals)):
            raise ConfigError("amplitude parameters must be finite")

    @classmethod
    def const(cls, c: float) -> "Amplitude":
        return cls("poly", (float(c),))

    @classmethod
    def cosine(cls, amp: float, omega: float, phase: float = 0.0) -> "Amplitude":
        return cls("cos", (0.0,), float(amp), float(omega), float(phase))

    @property
    def is_constant(self) -> bool:
        if self.kind == "poly":
            return all(c == 0.0 for c in self.coeffs[1:])
        return self.amp == 0.0 or self.omega == 0.0

    @property
    def is_zero(self) -> bool:
        if self.kind == "poly":
            return all(c == 0.0 for c in self.coeffs)
        return self.amp == 0.0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(t, self.coeffs)
        return self.amp * np.cos(self.omega * t + self.phase)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            d = np.polynomial.polynomial.polyder(self.coeffs) if len(self.coeffs) > 1 else [0.0]
            return np.polynomial.polynomial.polyval(t, d)
        return -self.amp * self.omega * np.sin(self.omega * t + self.phase)


@dataclass(frozen=True)
class Mode:
    k: tuple[int, ...]
    a: Amplitude = field(default_factory=Amplitude)
    b: Amplitude = field(default_factory=Amplitude)


@dataclass(frozen=True)
class PressureSpec:
    n: int
    modes: tuple[Mode, ...] = ()
    offset: float = 0.0
    horizon: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("dimension must be >= 1")
        for md in self.modes:
            if len(md.k) != self.n:
                raise DimensionError(f"wavevector {md.k} does not have {self.n} components")
        if not np.isfinite(self.offset):
            raise ConfigError("offset must be finite")

    @property
    def _active(self) -> tuple[Mode, ...]:
        return tuple(md for md in self.modes if any(md.k) and not (md.a.is_zero and md.b.is_zero))

    @property
    def is_offset_only(self) -> bool:
        """No mode contributes anything: P is the constant offset."""
        return all(md.a.is_zero and (md.b.is_zero or not any(md.k)) for md in self.modes)

    @property
    def is_zero(self) -> bool:
        return self.offset == 0.0 and self.is_offset_only

    @property
    def is_spatially_constant(self) -> bool:
        return len(self._active) == 0

    @property
    def is_time_independent(self) -> bool:
        return all(md.a.is_constant and md.b.is_constant for md in self.modes)

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        hi = np.inf if self.horizon is None else self.horizon
        if np.any(t < -_T_SLACK) or np.any(t > hi + _T_SLACK) or not np.all(np.isfinite(t)):
            raise TimeOutOfRange(f"time outside [0, {hi}]")
        return t

    def _tables(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"expected {self.n} coordinates, got {x.shape[-1]}")
        t = self._check_t(t)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        M = len(self.modes)
        ks = np.array([md.k for md in self.modes], dtype=float).reshape(M, self.n)
        theta = TWO_PI * (x @ ks.T)
        theta = np.broadcast_to(theta, shape + (M,))
        a = np.empty(shape + (M,))
        b = np.empty(shape + (M,))
        for i, md in enumerate(self.modes):
            a[..., i] = md.a.value(t)
            b[..., i] = md.b.value(t)
        return ks, theta, a, b

    def value(self, x, t) -> np.ndarray:
        ks, theta, a, b = self._tables(x, t)
        return self.offset + np.sum(a * np.cos(theta) + b * np.sin(theta), axis=-1)

    def gradient(self, x, t) -> np.ndarray:
        ks, theta, a, b = self._tables(x, t)
        coef = -a * np.sin(theta) + b * np.cos(theta)
        return TWO_PI * coef @ ks

    def hessian(self, x, t) -> np.ndarray:
        ks, theta, a, b = self._tables(x, t)
        coef = -(TWO_PI**2) * (a * np.cos(theta) + b * np.sin(theta))
        return np.einsum("...m,mi,mj->...ij", coef, ks, ks)

    def time_derivative(self, x, t) -> np.ndarray:
        ks, theta, _, _ = self._tables(x, t)
        t = np.asarray(t, dtype=float)
        out = np.zeros(theta.shape[:-1])
        for i, md in enumerate(self.modes):
            out = out + md.a.deriv(t) * np.cos(theta[..., i]) + md.b.deriv(t) * np.sin(theta[..., i])
        return out

    def amplitude_sum(self, t) -> np.ndarray:
        """Bound on |P - c0| at time t: sum of |a_k| + |b_k|."""
        t = np.asarray(t, dtype=float)
        s = np.zeros(t.shape)
        for md in self.modes:
            s = s + np.abs(md.a.value(t)) + np.abs(md.b.value(t))
        return s

    def hessian_bound(self, t) -> np.ndarray:
        """Upper bound on the spectral norm of the spatial Hessian at time t."""
        t = np.asarray(t, dtype=float)
        s = np.zeros(t.shape)
        for md in self._active:
            kk = float(np.dot(md.k, md.k))
            s = s + (TWO_PI**2) * kk * (np.abs(md.a.value(t)) + np.abs(md.b.value(t)))
        return s

    def with_horizon(self, T: float) -> "PressureSpec":
        return PressureSpec(self.n, self.modes, self.offset, float(T))


def eval_P(P: PressureSpec, x, t):
    """(value, spatial gradient, time derivative) at x (..., n) and time t."""
    return P.value(x, t), P.gradient(x, t), P.time_derivative(x, t)


def semiconcavity_bound(P: PressureSpec, t) -> float:
    """Certified C(t) with P(., t) - C(t)|x|^2 concave on each period."""
    return float(max(0.0, 0.5 * P.hessian_bound(t)))


def zero_pressure(n: int = 1) -> PressureSpec:
    return PressureSpec(n)


def single_mode(n: int, k, a: Amplitude | float = 0.0, b: Amplitude | float = 0.0, offset: float = 0.0) -> PressureSpec:
    a = a if isinstance(a, Amplitude) else Amplitude.const(a)
    b = b if isinstance(b, Amplitude) else Amplitude.const(b)
    return PressureSpec(n, (Mode(tuple(int(v) for v in k), a, b),), float(offset))
