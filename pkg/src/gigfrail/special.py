"""Modified Bessel function of the third kind in log scale.

Everything that touches the frailty likelihood goes through :func:`log_bessel_k`
so that ratios of Bessel functions are formed as differences of logs. The
argument of ``K`` in this model is of the order ``1/alpha`` which explodes as
the frailty variance goes to zero, and the order grows with the number of
events in a cluster, so neither ``K`` itself nor ``x**nu`` is safe to form.

Orders are arbitrary reals. ``K_nu`` is evaluated for ``|nu| = n + mu`` with
``mu`` in ``[0, 1)`` from the exponentially scaled seeds ``e^x K_mu(x)`` and
``e^x K_{mu+1}(x)`` (scipy's ``kve``, or the large-argument expansion past
``x = 1e8``) followed by the upward recurrence

    K_{v+1}(x) = K_{v-1}(x) + (2 v / x) K_v(x)

carried on the ratios ``K_{v+1}/K_v``. All terms are positive, so the forward
recurrence is stable and the ratios stay representable even where ``K`` itself
overflows.
"""

import math

import numpy as np
from scipy import special as sc

__all__ = [
    "bessel_k",
    "log_bessel_k",
    "log_bessel_ke",
    "log_psi",
    "log_psi_scaled",
    "log_psi_derivative",
    "psi",
]


_TINY_ORDER = 1e-150


# above this argument the seeds come from the large-x expansion
_LARGE_X = 1e8


def _kve_seed(mu, x):
    """``e^x K_mu(x)`` for ``mu`` in ``[0, 2)``.

    scipy's ``kve`` stops at about ``x = 1e9``; beyond ``_LARGE_X`` the
    Hankel expansion ``sqrt(pi / 2x) sum_k a_k(mu) / x^k`` is used, which for
    these orders reaches double precision within a few terms.
    """
    if np.ndim(x) == 0 and np.ndim(mu) == 0:
        if x <= _LARGE_X:
            return float(sc.kve(mu, x))
        return float(_kve_large(np.float64(mu), np.float64(x)))
    x = np.asarray(x, dtype=float)
    big = x > _LARGE_X
    out = sc.kve(mu, np.where(big, 1.0, x))
    if np.any(big):
        out = np.where(big, _kve_large(mu, np.where(big, x, _LARGE_X * 2)), out)
    return out


def _kve_large(mu, x):
    m4 = 4.0 * np.asarray(mu, dtype=float) ** 2
    term = np.ones_like(m4 * x)
    total = term.copy()
    for k in range(1, 6):
        term = term * (m4 - (2 * k - 1) ** 2) / (k * 8.0 * x)
        total = total + term
    return np.sqrt(np.pi / (2.0 * x)) * total


def _as_float_array(v):
    return np.asarray(v, dtype=float)


def _check_positive(x, name="x"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    if np.any(x <= 0):
        raise ValueError(f"{name} must be positive")


def log_bessel_k(nu, x):
    """Return ``log K_nu(x)`` for real order ``nu`` and ``x > 0``.

    Broadcasts over ``nu`` and ``x``. The result is exactly symmetric in the
    sign of ``nu``.

    Raises
    ------
    ValueError
        If ``x <= 0`` or any input is not finite.
    """
    return (log_bessel_ke(nu, x) - x)[()] if not _is_scalar(nu, x) else log_bessel_ke(nu, x) - x


def _is_scalar(nu, x):
    return isinstance(nu, (float, int)) and isinstance(x, (float, int))


def log_bessel_ke(nu, x):
    """Return ``log(e^x K_nu(x))``.

    Differences of these at a common ``x`` give Bessel ratios without the
    cancellation of two large ``-x`` terms, which matters for ``x ~ 1/alpha``
    with small ``alpha``.
    """
    if _is_scalar(nu, x):
        return _log_bessel_ke_scalar(float(nu), float(x))
    nu = np.abs(_as_float_array(nu))
    x = _as_float_array(x)
    if not np.all(np.isfinite(nu)):
        raise ValueError("nu must be finite")
    _check_positive(x)
    nu, x = np.broadcast_arrays(nu, x)

    n = np.floor(nu)
    mu = nu - n
    # kve returns nan for subnormal orders; K is even in nu so 0 is exact there
    mu = np.where(mu < _TINY_ORDER, 0.0, mu)
    # log of e^x K_mu and e^x K_{mu+1}
    out = np.log(_kve_seed(mu, x))
    nmax = int(n.max()) if n.size else 0
    if nmax > 0:
        log_k1 = np.log(_kve_seed(mu + 1.0, x))
        ratio = np.exp(log_k1 - out)  # K_{mu+1} / K_mu
        out = np.where(n >= 1, log_k1, out)
        for j in range(1, nmax):
            order = mu + j
            ratio = 1.0 / ratio + 2.0 * order / x  # K_{order+1} / K_order
            out = np.where(n > j, out + np.log(ratio), out)
    return out[()]


def _log_bessel_ke_scalar(nu, x):
    if not (math.isfinite(nu) and math.isfinite(x)):
        raise ValueError("nu and x must be finite")
    if x <= 0:
        raise ValueError("x must be positive")
    nu = abs(nu)
    n = int(nu)
    mu = nu - n
    if mu < _TINY_ORDER:
        mu = 0.0
    out = math.log(_kve_seed(mu, x))
    if n == 0:
        return out
    log_k1 = math.log(_kve_seed(mu + 1.0, x))
    ratio = math.exp(log_k1 - out)
    out = log_k1
    for j in range(1, n):
        ratio = 1.0 / ratio + 2.0 * (mu + j) / x
        out += math.log(ratio)
    return out


def bessel_k(nu, x):
    """Linear-scale ``K_nu(x)``; for tests and small arguments only."""
    return np.exp(log_bessel_k(nu, x))


def log_psi(lam, x):
    r"""Return ``log Psi_lam(x)`` where ``Psi_lam(x) = K_lam(sqrt(x)) / x^(lam/2)``."""
    x = _as_float_array(x)
    _check_positive(x)
    lam = _as_float_array(lam)
    return (log_bessel_k(lam, np.sqrt(x)) - 0.5 * lam * np.log(x))[()]


def log_psi_scaled(lam, x):
    """``log Psi_lam(x) + sqrt(x)``, for ratios of Psi at a common ``x``."""
    x = _as_float_array(x)
    _check_positive(x)
    lam = _as_float_array(lam)
    return (log_bessel_ke(lam, np.sqrt(x)) - 0.5 * lam * np.log(x))[()]


def psi(lam, x):
    return np.exp(log_psi(lam, x))


def log_psi_derivative(phi, k, x):
    """k-th derivative of ``Psi_phi`` at ``x`` as ``(sign, log|value|)``.

    Uses the closed form

        d^k/dx^k Psi_phi(x) = (-1/2)^k Psi_{phi+k}(x)

    so no numerical differentiation is involved.
    """
    k = int(k)
    if k < 0:
        raise ValueError("k must be a non-negative integer")
    phi = _as_float_array(phi)
    sign = -1.0 if k % 2 else 1.0
    return sign, (log_psi(phi + k, x) - k * np.log(2.0))
