"""Analytic criteria: connection integrals, decay exponents and the phase table.

Most quantities here are integrals of ``rho(g(s, t) A)`` over rectangles of
marks, with scale factors ``A`` that can exceed the floating point range.
They are computed in log space: the mark variables are substituted by their
logarithms, the inner integral is done in closed form for kernels that are
powers on both sides of the diagonal, and the outer one by composite
Gauss-Legendre quadrature split at every kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gammaln, logsumexp

from .model import Kernel, ModelError, Profile, log_kernel_value, power_exponents, profile_constants

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
LOG_FLOOR = -80.0  # marks below exp(LOG_FLOOR) are ignored; their mass is < 2e-35


class QuadratureError(RuntimeError):
    """An integral could not be evaluated to the requested accuracy."""


def _log_expm1_ratio(x):
    """``log((exp(x) - 1) / x)`` for any real ``x``; 0 at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    small = np.abs(x) < 1e-8
    out[small] = x[small] / 2
    pos = (x > 0) & ~small
    xp = x[pos]
    out[pos] = np.where(xp > 30, xp + np.log1p(-np.exp(-np.minimum(xp, 700))), np.log(np.expm1(np.minimum(xp, 30)))) \
        - np.log(xp)
    neg = (x < 0) & ~small
    xn = x[neg]
    out[neg] = np.log(-np.expm1(xn)) - np.log(-xn)
    return out


def _log_int_exp(q, va, vb):
    """``log of int_{va}^{vb} exp(q v) dv``; ``-inf`` for empty intervals."""
    q, va, vb = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (q, va, vb)))
    width = vb - va
    out = np.full(width.shape, -np.inf)
    ok = width > 0
    if np.any(ok):
        w = width[ok]
        out[ok] = q[ok] * va[ok] + np.log(w) + _log_expm1_ratio(q[ok] * w)
    return out


class _Problem:
    """``log int int rho(g(s, t) A) ds dt`` for one kernel/profile."""

    def __init__(self, kernel, gamma, delta, d, beta, profile):
        self.kernel = Kernel(kernel)
        self.gamma = gamma
        self.d = d
        self.beta = beta
        self.consts = profile_constants(profile, delta, d)
        self.indicator = self.consts.profile is Profile.INDICATOR
        self.lz = math.log(self.consts.threshold)
        self.lcap = math.log(self.consts.cap)
        self.delta = self.consts.delta
        self.exps = power_exponents(self.kernel, gamma)
        if self.exps is None and gamma == 0:  # constant sum kernel
            self.exps = (0.0, 0.0)
            self.beta = beta * 2.0**d

    # inner integral over log t in [va, vb] of rho(exp(logK) t**e) t dt/t
    def _piece(self, e, logk, va, vb):
        if e == 0:
            inside = logk <= self.lz
            width = _log_int_exp(1.0, va, vb)
            if self.indicator:
                return np.where(inside, width, -np.inf)
            return np.where(inside, self.lcap + width, -self.delta * logk + width)
        ltau = (self.lz - logk) / e
        cap = self.lcap + _log_int_exp(1.0, va, np.minimum(vb, ltau))
        if self.indicator:
            return cap
        tail = -self.delta * logk + _log_int_exp(1.0 - e * self.delta, np.maximum(va, ltau), vb)
        return np.logaddexp(cap, tail)

    def _inner(self, u, loga, vt0, vt1):
        a, c = self.exps
        c0 = loga - math.log(self.beta)
        below = self._piece(a, c * u + c0, vt0, np.minimum(vt1, u))  # t < s
        above = self._piece(c, a * u + c0, np.maximum(vt0, u), vt1)  # t >= s
        return np.logaddexp(below, above)

    def _breaks(self, loga, us0, us1, vt0, vt1):
        a, c = self.exps
        c0 = loga - math.log(self.beta)
        pts = [vt0, vt1]
        if a + c != 0:
            pts.append((self.lz - c0) / (a + c))
        for w in (vt0, vt1):
            if c != 0:
                pts.append((self.lz - c0 - a * w) / c)
            if a != 0:
                pts.append((self.lz - c0 - c * w) / a)
        if a == 0 and c != 0:
            pts.append((self.lz - c0) / c)
        if c == 0 and a != 0:
            pts.append((self.lz - c0) / a)
        inner = sorted(p for p in pts if us0 < p < us1 and math.isfinite(p))
        return [us0, *inner, us1]

    def _panels(self, edges, width):
        nodes, logw = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi <= lo:
                continue
            m = max(1, math.ceil((hi - lo) / width))
            sub = np.linspace(lo, hi, m + 1)
            half = np.diff(sub) / 2
            mid = (sub[:-1] + sub[1:]) / 2
            nodes.append((mid[:, None] + half[:, None] * _GL_X[None, :]).ravel())
            logw.append((np.log(half)[:, None] + np.log(_GL_W)[None, :]).ravel())
        if not nodes:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(nodes), np.concatenate(logw)

    def log_integral(self, loga, us0, us1, vt0, vt1, width=2.0):
        """Integral over ``s in [e^us0, e^us1]``, ``t in [e^vt0, e^vt1]``."""
        if us1 <= us0 or vt1 <= vt0:
            return -math.inf
        if self.exps is None:
            return self._log_integral_2d(loga, us0, us1, vt0, vt1, width)
        u, lw = self._panels(self._breaks(loga, us0, us1, vt0, vt1), width)
        vals = lw + u + self._inner(u, loga, vt0, vt1)
        return float(logsumexp(vals)) if np.isfinite(vals).any() else -math.inf

    # sum kernel: for fixed s the cap region is t <= tau(s), known in closed form
    def _log_tau(self, u, lw):
        x = -self.gamma * u / self.d - lw
        out = np.full(np.shape(u), np.inf)
        fin = x < 0
        out[fin] = -(self.d / self.gamma) * (lw + np.log1p(-np.exp(x[fin])))
        return out

    def _log_integral_2d(self, loga, us0, us1, vt0, vt1, width):
        g, d = self.gamma, self.d
        lw = (loga - math.log(self.beta) - self.lz) / d
        pts = [us0, us1, -(d / g) * lw]
        for w in (vt0, vt1):
            x = -g * w / d - lw
            if x < 0:
                pts.append(-(d / g) * (lw + math.log1p(-math.exp(x))))
        u, lwu = self._panels(sorted({p for p in pts if us0 <= p <= us1 and math.isfinite(p)}), width)
        ltau = self._log_tau(u, lw)
        vals = self.lcap + _log_int_exp(1.0, vt0, np.minimum(vt1, ltau))
        if not self.indicator:
            vals = np.logaddexp(vals, self._sum_tail(u, np.clip(ltau, vt0, vt1), vt1, loga, width))
        vals = vals + lwu + u
        return float(logsumexp(vals)) if np.isfinite(vals).any() else -math.inf

    def _sum_tail(self, u, va, vb, loga, width, chunk=512):
        out = np.full(u.shape, -np.inf)
        m = max(1, math.ceil((vb - np.min(va, initial=vb)) / width))
        k = np.arange(m)
        for i in range(0, u.size, chunk):
            uu, aa = u[i : i + chunk], va[i : i + chunk]
            half = (vb - aa) / (2 * m)
            live = half > 0
            if not live.any():
                continue
            uu, aa, half = uu[live], aa[live], half[live]
            mid = aa[:, None] + (2 * k[None, :] + 1) * half[:, None]
            v = (mid[:, :, None] + half[:, None, None] * _GL_X[None, None, :]).reshape(len(uu), -1)
            z = log_kernel_value(self.kernel, uu[:, None], v, self.gamma, self.beta, self.d) + loga
            lv = -self.delta * z + v + np.log(np.tile(_GL_W, m))[None, :]
            res = np.full(live.shape, -np.inf)
            res[live] = logsumexp(lv, axis=1) + np.log(half)
            out[i : i + chunk] = res
        return out


def log_mark_integral(kernel, gamma, delta, d, beta, profile, loga, us0, us1, vt0, vt1, width=2.0) -> float:
    """``log`` of the integral of ``rho(g(s, t) exp(loga))`` over a log-mark rectangle."""
    return _Problem(kernel, gamma, delta, d, beta, profile).log_integral(loga, us0, us1, vt0, vt1, width)


# ---------------------------------------------------------------------------
# connection probability of two vertices with independent uniform marks


def pair_connection_prob(kernel, gamma: float, delta: float, beta: float, d: int, r: float,
                         profile=Profile.POLYNOMIAL, tol: float = 1e-10) -> float:
    """Probability that two vertices at distance ``r`` with fresh uniform marks are adjacent."""
    if r < 0:
        raise ModelError("distance must be non-negative")
    prob = _Problem(kernel, gamma, delta, d, beta, profile)
    if r == 0:
        return prob.consts.cap
    loga = d * math.log(r)
    coarse = math.exp(prob.log_integral(loga, LOG_FLOOR, 0.0, LOG_FLOOR, 0.0, 2.0))
    fine = math.exp(prob.log_integral(loga, LOG_FLOOR, 0.0, LOG_FLOOR, 0.0, 1.0))
    if abs(fine - coarse) > tol:
        raise QuadratureError(f"pair probability unresolved: {coarse} vs {fine}")
    return min(fine, prob.consts.cap)


# ---------------------------------------------------------------------------
# decay exponent of the mark-integrated connection function


@dataclass(frozen=True)
class KappaResult:
    n: np.ndarray
    log_integral: np.ndarray
    ratios: np.ndarray
    limit: float


def kappa_exponent(kernel, gamma: float, delta: float, d: int, n_grid=None, beta: float = 1.0,
                   profile=Profile.POLYNOMIAL) -> KappaResult:
    """Decay rate of ``I(n) = int int_{[n^-d, 1]^2} rho(g(s, t) n^d)`` in the scale ``n^d``.

    The ratios ``-log I(n) / (d log n)`` converge slowly because of constant
    prefactors, so the reported limit is the least-squares slope of
    ``-log I(n)`` against ``d log n`` over the upper half of the grid.
    """
    n = np.asarray(n_grid if n_grid is not None else np.logspace(2, 12, 21), dtype=float)
    if np.any(n <= 1):
        raise ModelError("grid values must exceed 1")
    prob = _Problem(kernel, gamma, delta, d, beta, profile)
    logn = np.log(n)
    logi = np.array([prob.log_integral(d * ln, -d * ln, 0.0, -d * ln, 0.0) for ln in logn])
    x = d * logn
    ratios = -logi / x
    top = slice(len(n) // 2, None)
    slope = np.polyfit(x[top], -logi[top], 1)[0]
    return KappaResult(n, logi, ratios, float(slope))


def kappa_reference(kernel, gamma: float, delta: float) -> float | None:
    """Closed-form decay exponent where one is known."""
    kernel = Kernel(kernel)
    if kernel is Kernel.PLAIN:
        return delta
    if kernel in (Kernel.MIN, Kernel.SUM):
        return min(delta, delta - max(gamma * delta - 1, 0.0))
    if kernel is Kernel.PA and gamma <= (delta - 1) / delta:
        return 2.0
    return None


# ---------------------------------------------------------------------------
# diagonal growth of the kernel


@dataclass(frozen=True)
class GammaCondition:
    value: float
    passes: bool


def gamma_condition(kernel, gamma: float) -> GammaCondition:
    """``limsup_{s -> 0} log g(s, s) / log s`` and whether it is below one."""
    kernel = Kernel(kernel)
    value = {
        Kernel.PLAIN: 0.0,
        Kernel.SUM: gamma,
        Kernel.MIN: gamma,
        Kernel.PROD: 2 * gamma,
        Kernel.PA: 1.0,
        Kernel.MAX: 1 + gamma,
    }[kernel]
    return GammaCondition(value, value < 1)


# ---------------------------------------------------------------------------
# cropping sequences


def log_scale_sequence(n_max: int) -> np.ndarray:
    """``log n_l`` for ``l = 0..n_max`` with ``n_l = prod_{k<=l} (2k - 1)`` (``n_0 = 1``)."""
    k = np.arange(1, n_max + 1)
    return np.concatenate([[0.0], np.cumsum(np.log(2 * k - 1))])


def scale_sequence_bounds(l: int) -> tuple[float, float]:
    """Logs of ``(3/2)**(l-1) l!`` and ``2**l l!``, which bracket ``n_l``."""
    lf = float(gammaln(l + 1))
    return (l - 1) * math.log(1.5) + lf, l * math.log(2) + lf


@dataclass(frozen=True)
class CroppingReport:
    epsilon: float
    log_k_terms: np.ndarray  # [l-1, k-2] for k >= 2
    log_sum1_terms: np.ndarray
    log_sum2_terms: np.ndarray
    log_sum3_terms: np.ndarray  # [l-1, k-1] inner terms before summing over k
    k_sup: float
    sums: tuple[float, float, float]
    flags: dict
    accurately_cropping: bool


TAIL_THRESHOLD = 1e-8


def cropping_check(kernel, gamma: float, delta: float, d: int, epsilon: float, L: int = 40, K: int = 40,
                   beta: float = 1.0, profile=Profile.POLYNOMIAL) -> CroppingReport:
    """Evaluate the cropping conditions for ``b(v) = v**-epsilon`` on a finite grid.

    A condition is flagged as satisfied only when its terms at the edge of
    the grid have dropped below ``1e-8``; for the supremum this means the
    terms of the last scale, and the last distance column must not grow.
    """
    if not 0 < epsilon:
        raise ModelError("epsilon must be positive")
    if not (1 <= L <= 40 and 2 <= K <= 40):
        raise ModelError("grid limited to L <= 40 and 2 <= K <= 40")
    prob = _Problem(kernel, gamma, delta, d, beta, profile)
    ln = log_scale_sequence(L + K + 2)

    def log_r(j):  # log of b(n_j^d) / n_j^d
        return -d * (1 + epsilon) * ln[j]

    kt = np.full((L, K - 1), -np.inf)
    for l in range(1, L + 1):
        lo = log_r(l)
        for k in range(2, K + 1):
            loga = d * (math.log(k - 1) - 0.5 * math.log(d) + ln[l])
            kt[l - 1, k - 2] = 2 * d * (ln[l] + math.log(k)) + prob.log_integral(loga, lo, 0.0, lo, 0.0)

    ls = np.arange(1, L + 1)
    s1 = d * np.log(ls) - epsilon * d * ln[1 : L + 1]
    s2 = np.array([
        2 * d * math.log(l) + d * (ln[l] + ln[l + 1])
        + prob.log_integral(d * ln[l], log_r(l + 1), log_r(l), log_r(l), 0.0)
        for l in ls
    ])
    s3 = np.full((L, K), -np.inf)
    for l in ls:
        for k in range(1, K + 1):
            j = l + k
            s3[l - 1, k - 1] = (d * math.log(l) + d * ln[l] + d * math.log(j) + d * ln[j + 1]
                                + prob.log_integral(d * (math.log(j) + ln[j]), log_r(j + 1), log_r(j), log_r(l), 0.0))
    s3_rows = logsumexp(s3, axis=1)

    def tail_ok(logterms):
        return bool(np.exp(np.max(logterms)) < TAIL_THRESHOLD)

    flags = {
        "k_sup": tail_ok(kt[-1]) and bool(np.all(kt[:, -1] <= kt[:, -2] + 1e-12)),
        "sum1": tail_ok(s1[-1:]),
        "sum2": tail_ok(s2[-1:]),
        "sum3": tail_ok(s3_rows[-1:]) and tail_ok(s3[:, -1]),
    }

    def total(logterms):
        return float(np.exp(logsumexp(logterms)))

    return CroppingReport(
        epsilon=epsilon,
        log_k_terms=kt,
        log_sum1_terms=s1,
        log_sum2_terms=s2,
        log_sum3_terms=s3,
        k_sup=float(np.exp(np.max(kt))),
        sums=(total(s1), total(s2), total(s3_rows)),
        flags=flags,
        accurately_cropping=all(flags.values()),
    )


# ---------------------------------------------------------------------------
# phase classification


class Phase(str, Enum):
    TRANSIENT = "Transient"
    RECURRENT_D2 = "RecurrentD2"
    UNKNOWN = "Unknown"
    BOUNDARY = "Boundary"


def phase_classify(kernel, gamma: float, delta: float, d: int = 2) -> Phase:
    """Recurrence/transience of the infinite cluster as far as currently proven.

    The plain kernel is treated as any of the other kernels with
    ``gamma = 0``.  Recurrence is only established in the plane, so
    recurrent cells in other dimensions are reported as unknown.
    """
    kernel = Kernel(kernel)
    if not delta > 1:
        raise ModelError("delta must exceed 1")
    if kernel is Kernel.MAX:
        if not gamma > 0:
            raise ModelError("max kernel needs gamma > 0")
        return Phase.TRANSIENT
    if kernel is Kernel.PLAIN:
        gamma = 0.0
    if not 0 <= gamma < 1:
        raise ModelError("gamma must lie in [0, 1)")

    recurrent = Phase.RECURRENT_D2 if d == 2 else Phase.UNKNOWN
    if kernel is Kernel.PROD:
        if delta < 2 or gamma > 0.5:
            return Phase.TRANSIENT
        if delta == 2 or gamma == 0.5:
            return Phase.BOUNDARY
        return recurrent

    upper = delta / (delta + 1)
    lower = 0.5 if kernel is Kernel.PA else (delta - 1) / delta
    if delta < 2 or gamma > upper:
        return Phase.TRANSIENT
    if delta == 2 or gamma == upper or gamma == lower:
        return Phase.BOUNDARY
    if gamma < lower:
        return recurrent
    return Phase.UNKNOWN
