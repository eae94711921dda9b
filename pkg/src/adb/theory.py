"""Mean-shift bias model: half-normal bias, ID/OOD error components.

A model population has bias ``b >= 0`` drawn half-normal with scale ``k``;
its in-distribution error component is ``T = b**2`` and, under a mean shift
``delta`` of the test error, its out-of-distribution component is
``U = (b - delta)**2``. The correlation of ``T`` and ``U`` across the
population is negative exactly when ``k < alpha * delta`` with
``alpha = sqrt(2 / pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EstimationError, InputError

ALPHA = math.sqrt(2.0 / math.pi)
#: Closed-form limit of ``rho_TU`` as ``k / delta -> 0+``.
RHO_LOWER_LIMIT = -ALPHA / math.sqrt(2.0 - 4.0 / math.pi)


@dataclass(frozen=True)
class MeanShiftModel:
    """Error means/spreads under train and test distributions plus bias scale ``k``.

    ``sigma_train`` and ``sigma_test`` only feed raw-error simulation; the
    correlation analysis uses the bias components alone.
    """

    mu_train: float
    mu_test: float
    sigma_train: float
    sigma_test: float
    k: float

    def __post_init__(self):
        if self.sigma_train < 0 or self.sigma_test < 0:
            raise InputError("noise scales must be >= 0")
        if not self.k > 0:
            raise InputError(f"k must be > 0, got {self.k}")

    @property
    def delta(self) -> float:
        return self.mu_test - self.mu_train

    @property
    def alpha(self) -> float:
        return ALPHA

    def rho(self) -> float:
        return rho_TU(self.k, self.delta)

    def negative_regime(self) -> bool:
        return negative_regime(self.k, self.delta)

    def simulate_errors(self, n: int, seed=None):
        """Draw ``n`` models and their noisy squared ID/OOD errors.

        A model with bias ``b`` misses the training-error mean by
        ``b + noise`` and the shifted test-error mean by ``b - delta + noise``.
        Returns ``(b, id_sq_error, ood_sq_error)``.
        """
        rng = np.random.default_rng(seed)
        b = self.k * np.abs(rng.standard_normal(n))
        id_dev = b + self.sigma_train * rng.standard_normal(n)
        ood_dev = b - self.delta + self.sigma_test * rng.standard_normal(n)
        return b, id_dev**2, ood_dev**2


@dataclass(frozen=True)
class ErrorComponents:
    T_val: float
    U_val: float


def error_components(b, delta):
    b = np.asarray(b, dtype=np.float64)
    return b**2, (b - delta) ** 2


def _check_k(k):
    if not (np.isfinite(k) and k > 0):
        raise InputError(f"k must be > 0, got {k}")


def half_normal_sample(k: float, n: int, seed=None) -> np.ndarray:
    """``n`` draws of ``k * |Z|`` with ``Z`` standard normal."""
    _check_k(k)
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return k * np.abs(rng.standard_normal(n))


def raw_moment(n: int, k: float) -> float:
    """``E[b**n]`` for ``n`` in 1..4: alpha k, k^2, 2 alpha k^3, 3 k^4."""
    _check_k(k)
    if n == 1:
        return ALPHA * k
    if n == 2:
        return k**2
    if n == 3:
        return 2.0 * ALPHA * k**3
    if n == 4:
        return 3.0 * k**4
    raise InputError(f"raw moment order must be 1..4, got {n}")


def cov_TU(k: float, delta: float) -> float:
    _check_k(k)
    return 2.0 * k**3 * (k - ALPHA * delta)


def var_T(k: float) -> float:
    return raw_moment(4, k) - raw_moment(2, k) ** 2


def var_U(k: float, delta: float) -> float:
    return 2.0 * k**4 - 4.0 * ALPHA * delta * k**3 + 4.0 * delta**2 * k**2 * (1.0 - 2.0 / math.pi)


def rho_TU(k: float, delta: float) -> float:
    """Pearson correlation of ``b**2`` and ``(b - delta)**2``.

    Raises DomainError when the radicand is not positive (``delta = 0`` with
    ``k -> 0`` is the only degenerate corner for real inputs).
    """
    _check_k(k)
    radicand = k * k - 2.0 * ALPHA * delta * k + (2.0 - 4.0 / math.pi) * delta * delta
    if not radicand > 0:
        raise DomainError(f"rho_TU undefined: radicand {radicand!r} <= 0 at k={k}, delta={delta}")
    return (k - ALPHA * delta) / math.sqrt(radicand)


def rho_limit(delta: float = 1.0) -> float:
    """Analytic ``k -> 0+`` limit of ``rho_TU`` (sign of ``-delta``)."""
    if delta == 0:
        raise DomainError("limit undefined for delta = 0")
    return math.copysign(abs(RHO_LOWER_LIMIT), -delta)


def mc_rho(k: float, delta: float, n: int = 1_000_000, seed=None) -> float:
    """Sample Pearson correlation of (T, U) over ``n`` half-normal draws."""
    if n < 10_000:
        raise InputError(f"n must be >= 1e4 for a meaningful estimate, got {n}")
    b = half_normal_sample(k, n, seed)
    T, U = error_components(b, delta)
    st, su = T.std(), U.std()
    if st == 0 or su == 0:
        raise EstimationError("zero sample variance in T or U")
    return float(np.mean((T - T.mean()) * (U - U.mean())) / (st * su))


def negative_regime(k: float, delta: float) -> bool:
    _check_k(k)
    return k < ALPHA * delta


def sweep(ks, deltas, n_mc: int = 0, seed=0):
    """Rows of (k, delta, rho closed form, rho Monte Carlo or nan, regime flag)."""
    rows = []
    for i, delta in enumerate(deltas):
        for j, k in enumerate(ks):
            try:
                rho = rho_TU(k, delta)
            except DomainError:
                rho = float("nan")
            mc = float("nan")
            if n_mc:
                mc = mc_rho(k, delta, n_mc, seed=[int(seed), i, j])
            rows.append((float(k), float(delta), rho, mc, negative_regime(k, delta)))
    return rows
