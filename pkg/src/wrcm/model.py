"""Kernels, profile functions and model parameters.

A vertex is a pair ``(x, s)`` of a location in the window and a mark in
``(0, 1)``.  Two vertices are joined with probability
``rho(g(s, t) * |x - y|**d)`` where ``g`` is the kernel and ``rho`` the
profile.  Small marks are strong vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import integrate


class ModelError(ValueError):
    """Invalid model parameters."""


class Kernel(str, Enum):
    PLAIN = "plain"
    SUM = "sum"
    MIN = "min"
    MAX = "max"
    PROD = "prod"
    PA = "pa"


class Profile(str, Enum):
    INDICATOR = "indicator"
    POLYNOMIAL = "polynomial"


class Geometry(str, Enum):
    TORUS = "torus"
    FREE = "free"


# integer codes shared with the compiled sampler
KERNEL_CODE = {Kernel.PLAIN: 0, Kernel.SUM: 1, Kernel.MIN: 2, Kernel.MAX: 3, Kernel.PROD: 4, Kernel.PA: 5}
PROFILE_CODE = {Profile.INDICATOR: 0, Profile.POLYNOMIAL: 1}


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class ProfileConstants:
    """``rho(r) = cap`` for ``r <= threshold``; beyond it 0 (indicator) or ``r**-delta``."""

    profile: Profile
    cap: float
    threshold: float
    delta: float


def profile_constants(profile: Profile | str, delta: float, d: int) -> ProfileConstants:
    """Constants that make ``rho(|x|**d)`` integrate to one over R^d."""
    profile = Profile(profile)
    kd = unit_ball_volume(d)
    if profile is Profile.INDICATOR:
        return ProfileConstants(profile, 1.0, 1.0 / kd, math.inf)
    if not delta > 1:
        raise ModelError(f"polynomial profile needs delta > 1, got {delta}")
    b = ((delta - 1) / (delta * kd)) ** (delta / (delta - 1))
    return ProfileConstants(profile, b, b ** (-1.0 / delta), delta)


def profile_value(r, consts: ProfileConstants):
    """Evaluate the profile at ``r >= 0`` (vectorised)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ModelError("profile argument must be non-negative")
    if consts.profile is Profile.INDICATOR:
        return np.where(r <= consts.threshold, 1.0, 0.0)
    with np.errstate(divide="ignore"):
        tail = np.power(np.maximum(r, consts.threshold), -consts.delta)
    return np.where(r <= consts.threshold, consts.cap, tail)


def log_profile_value(logr, consts: ProfileConstants):
    """``log rho(exp(logr))``; ``-inf`` where the profile vanishes."""
    logr = np.asarray(logr, dtype=float)
    logt = math.log(consts.threshold)
    if consts.profile is Profile.INDICATOR:
        return np.where(logr <= logt, 0.0, -np.inf)
    return np.where(logr <= logt, math.log(consts.cap), -consts.delta * logr)


def kernel_value(kind: Kernel | str, s, t, gamma: float, beta: float = 1.0, d: int = 1):
    """Kernel ``g(s, t)`` including the ``1/beta`` factor (vectorised)."""
    kind = Kernel(kind)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(s > 0) and np.all(s <= 1) and np.all(t > 0) and np.all(t <= 1)):
        raise ModelError("marks must lie in (0, 1]")
    if not beta > 0:
        raise ModelError(f"beta must be positive, got {beta}")
    lo = np.minimum(s, t)
    hi = np.maximum(s, t)
    if kind is Kernel.PLAIN:
        g = np.ones(np.broadcast(s, t).shape)
    elif kind is Kernel.SUM:
        g = (s ** (-gamma / d) + t ** (-gamma / d)) ** (-float(d))
    elif kind is Kernel.MIN:
        g = lo**gamma
    elif kind is Kernel.MAX:
        g = hi ** (1 + gamma)
    elif kind is Kernel.PROD:
        g = s**gamma * t**gamma
    else:
        g = hi ** (1 - gamma) * lo**gamma
    return g / beta


def log_kernel_value(kind: Kernel | str, logs, logt, gamma: float, beta: float = 1.0, d: int = 1):
    """``log g`` as a function of log-marks; safe for marks far below 1e-300."""
    kind = Kernel(kind)
    logs = np.asarray(logs, dtype=float)
    logt = np.asarray(logt, dtype=float)
    lo = np.minimum(logs, logt)
    hi = np.maximum(logs, logt)
    if kind is Kernel.PLAIN:
        lg = np.zeros(np.broadcast(logs, logt).shape)
    elif kind is Kernel.SUM:
        a = -gamma / d * logs
        b = -gamma / d * logt
        lg = -d * np.logaddexp(a, b)
    elif kind is Kernel.MIN:
        lg = gamma * lo
    elif kind is Kernel.MAX:
        lg = (1 + gamma) * hi
    elif kind is Kernel.PROD:
        lg = gamma * (logs + logt)
    else:
        lg = (1 - gamma) * hi + gamma * lo
    return lg - math.log(beta)


def power_exponents(kind: Kernel | str, gamma: float) -> tuple[float, float] | None:
    """Exponents ``(a, c)`` with ``beta*g(s, t) = s**a * t**c`` on ``s <= t``.

    ``None`` for the sum kernel, which is not a pure power on either side
    of the diagonal.
    """
    kind = Kernel(kind)
    table = {
        Kernel.PLAIN: (0.0, 0.0),
        Kernel.MIN: (gamma, 0.0),
        Kernel.MAX: (0.0, 1.0 + gamma),
        Kernel.PROD: (gamma, gamma),
        Kernel.PA: (gamma, 1.0 - gamma),
    }
    return table.get(kind)


@dataclass(frozen=True)
class Window:
    """Box ``[-side/2, side/2)**d``, periodic for the torus."""

    side: float
    d: int = 2
    geometry: Geometry = Geometry.TORUS

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ModelError(f"dimension must be a positive integer, got {self.d}")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise ModelError(f"window side must be positive and finite, got {self.side}")

    @property
    def volume(self) -> float:
        return float(self.side) ** self.d

    def displacement(self, x, y):
        """``y - x`` using the minimum image on the torus."""
        diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if self.geometry is Geometry.TORUS:
            diff = diff - self.side * np.round(diff / self.side)
        return diff

    def distance(self, x, y):
        return np.sqrt(np.sum(np.atleast_1d(self.displacement(x, y)) ** 2, axis=-1))


@dataclass(frozen=True)
class ModelParams:
    kernel: Kernel = Kernel.PA
    profile: Profile = Profile.POLYNOMIAL
    beta: float = 1.0
    gamma: float = 0.0
    delta: float = 3.0
    window: Window = field(default_factory=lambda: Window(32.0))

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        object.__setattr__(self, "profile", Profile(self.profile))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ModelError(f"beta must be positive, got {self.beta}")
        if self.kernel is Kernel.MAX:
            if not (self.gamma > 0 and math.isfinite(self.gamma)):
                raise ModelError(f"max kernel needs gamma > 0, got {self.gamma}")
        elif not 0 <= self.gamma < 1:
            raise ModelError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.profile is Profile.POLYNOMIAL and not self.delta > 1:
            raise ModelError(f"polynomial profile needs delta > 1, got {self.delta}")

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def constants(self) -> ProfileConstants:
        return profile_constants(self.profile, self.delta, self.d)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def connection_prob(x, y, s, t, params: ModelParams):
    """Probability that ``(x, s)`` and ``(y, t)`` are adjacent."""
    r = params.window.distance(x, y)
    if np.any(r == 0):
        raise ModelError("coincident positions: no self-loops")
    g = kernel_value(params.kernel, s, t, params.gamma, params.beta, params.d)
    return profile_value(g * r**params.d, params.constants)


def pair_prob_from_distance(r, s, t, params: ModelParams):
    g = kernel_value(params.kernel, s, t, params.gamma, params.beta, params.d)
    return profile_value(g * np.asarray(r, dtype=float) ** params.d, params.constants)


def expected_degree(kind: Kernel | str, gamma: float, beta: float, d: int = 2) -> float:
    """Mean degree of a typical vertex in infinite volume.

    Uses that ``rho(g |x|**d)`` integrates to ``1/g`` over space, so the
    answer does not depend on the profile.
    """
    kind = Kernel(kind)
    if kind is Kernel.PLAIN:
        return beta
    if kind is Kernel.MIN:
        return 2 * beta / ((1 - gamma) * (2 - gamma))
    if kind is Kernel.MAX:
        return math.inf if gamma >= 1 else 2 * beta / (1 - gamma)
    if kind is Kernel.PROD:
        return beta / (1 - gamma) ** 2
    if kind is Kernel.PA:
        return 2 * beta / (1 - gamma)
    val, _ = integrate.dblquad(
        lambda t, s: (s ** (-gamma / d) + t ** (-gamma / d)) ** d, 0, 1, 0, 1, epsabs=1e-10
    )
    return beta * val
