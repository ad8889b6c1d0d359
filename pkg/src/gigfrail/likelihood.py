"""Data container, parameters and the observed-data likelihood.

For cluster ``i`` with ``d_i`` failures and ``s_i = sum_j H0(t_ij) exp(x_ij' beta)``,
integrating the GIG(1/alpha, 1/alpha, lam) frailty out gives

    L_i = alpha^-(lam + d_i) / K_lam(1/alpha)
          * Psi_{lam + d_i}(alpha^-1 (alpha^-1 + 2 s_i))
          * prod_j [h0(t_ij) exp(x_ij' beta)]^delta_ij

with ``Psi_nu(x) = K_nu(sqrt(x)) / x^(nu/2)``.
"""

from dataclasses import dataclass

import numpy as np

from .distributions import FrailtyLaw, GigParams, gig_log_laplace
from .special import log_bessel_ke, log_psi_scaled

__all__ = [
    "Dataset",
    "ModelParams",
    "NumericalError",
    "cluster_log_likelihoods",
    "cluster_log_survival",
    "marginal_log_density",
    "marginal_log_survival",
    "observed_log_likelihood",
]


class NumericalError(ArithmeticError):
    """A likelihood or E-step quantity came out non-finite."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Clustered right-censored survival data stored as flat arrays.

    Attributes
    ----------
    time : (n,) positive floats
    status : (n,) 0/1 event indicators
    covariates : (n, p) design matrix, ``p`` may be 0
    cluster : (n,) integer codes ``0..m-1``
    cluster_labels : (m,) original cluster identifiers, in code order
    covariate_names : names of the ``p`` covariate columns
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    cluster: np.ndarray
    cluster_labels: tuple
    covariate_names: tuple

    @classmethod
    def from_arrays(cls, time, status, covariates=None, cluster_ids=None, covariate_names=None):
        time = np.asarray(time, dtype=float).reshape(-1)
        n = time.size
        status = np.asarray(status).reshape(-1)
        if status.size != n:
            raise ValueError("time and status have different lengths")
        if not np.all((status == 0) | (status == 1)):
            raise ValueError("status must be 0 or 1")
        status = status.astype(int)
        if covariates is None:
            covariates = np.empty((n, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.shape[0] != n:
            raise ValueError("covariates must have one row per observation")
        if cluster_ids is None:
            cluster_ids = np.arange(n)
        cluster_ids = np.asarray(cluster_ids)
        if cluster_ids.size != n:
            raise ValueError("cluster_ids must have one entry per observation")
        # codes follow first appearance so a file round-trips in its own order
        labels, first, codes = np.unique(cluster_ids, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        remap = np.empty_like(order)
        remap[order] = np.arange(order.size)
        codes = remap[codes.reshape(-1)]
        labels = tuple(labels[order].tolist())
        p = covariates.shape[1]
        if covariate_names is None:
            covariate_names = tuple(f"x{j + 1}" for j in range(p))
        covariate_names = tuple(covariate_names)
        if len(covariate_names) != p:
            raise ValueError("covariate_names length does not match covariates")
        ds = cls(time, status, covariates, codes, labels, covariate_names)
        ds.validate()
        return ds

    def validate(self):
        if self.time.size == 0:
            raise ValueError("dataset is empty")
        if np.any(~(self.time > 0)) or not np.all(np.isfinite(self.time)):
            raise ValueError("all times must be positive and finite")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariates must be finite")
        if self.status.sum() == 0:
            raise ValueError("dataset has no events")

    @property
    def n_obs(self):
        return self.time.size

    @property
    def n_clusters(self):
        return len(self.cluster_labels)

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    @property
    def cluster_sizes(self):
        return np.bincount(self.cluster, minlength=self.n_clusters)

    @property
    def events_per_cluster(self):
        return np.bincount(self.cluster, weights=self.status, minlength=self.n_clusters)

    def cluster_sum(self, values):
        return np.bincount(self.cluster, weights=values, minlength=self.n_clusters)

    def take_clusters(self, indices):
        """New dataset made of clusters ``indices`` (repeats allowed), relabelled 0..len-1."""
        indices = np.asarray(indices, dtype=int)
        order = np.argsort(self.cluster, kind="stable")
        starts = np.concatenate(([0], np.cumsum(self.cluster_sizes)))
        rows = np.concatenate([order[starts[c]:starts[c + 1]] for c in indices])
        new_codes = np.repeat(np.arange(indices.size), self.cluster_sizes[indices])
        return Dataset(
            self.time[rows],
            self.status[rows],
            self.covariates[rows],
            new_codes,
            tuple(range(indices.size)),
            self.covariate_names,
        )

    def clusters(self):
        """Yield ``(label, time, status, covariates)`` per cluster."""
        for code, label in enumerate(self.cluster_labels):
            rows = self.cluster == code
            yield label, self.time[rows], self.status[rows], self.covariates[rows]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Regression coefficients, baseline hazard and GIG frailty parameters."""

    beta: np.ndarray
    baseline: object
    alpha: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def frailty(self):
        return FrailtyLaw.gig(self.alpha, self.lam)

    def prior(self):
        return GigParams(1.0 / self.alpha, 1.0 / self.alpha, self.lam)


def marginal_log_survival(params, t):
    """``log S(t)`` for a single subject with zero covariates."""
    return gig_log_laplace(params.prior(), params.baseline.cum_hazard(t))


def marginal_log_density(params, t):
    """``log f(t)`` for a single subject with zero covariates."""
    alpha, lam = params.alpha, params.lam
    H = np.asarray(params.baseline.cum_hazard(t))
    lh = np.log(params.baseline.hazard(t))
    root = np.sqrt(1.0 + 2.0 * alpha * H)
    w = root / alpha
    return (
        lh
        - 0.5 * (lam + 1.0) * np.log1p(2.0 * alpha * H)
        + log_bessel_ke(lam + 1.0, w)
        - log_bessel_ke(lam, 1.0 / alpha)
        - 2.0 * H / (root + 1.0)  # w - 1/alpha
    )[()]


def _linear_predictor(beta, covariates):
    if covariates.shape[1] == 0:
        return np.zeros(covariates.shape[0])
    if beta.size != covariates.shape[1]:
        raise ValueError(f"beta has {beta.size} entries for {covariates.shape[1]} covariates")
    return covariates @ beta


def cluster_log_survival(params, covariates, times):
    """Joint log survival of one cluster evaluated at ``times``."""
    times = np.asarray(times, dtype=float).reshape(-1)
    covariates = np.asarray(covariates if covariates is not None else [], dtype=float)
    if covariates.size == 0:
        covariates = np.empty((times.size, 0))
    if covariates.ndim != 2 or covariates.shape[0] != times.size:
        raise ValueError("covariates and times describe different cluster sizes")
    s = np.sum(params.baseline.cum_hazard(times) * np.exp(_linear_predictor(params.beta, covariates)))
    return float(gig_log_laplace(params.prior(), s))


def _cluster_terms(params, data):
    eta = _linear_predictor(params.beta, data.covariates)
    risk = np.exp(eta)
    s = data.cluster_sum(params.baseline.cum_hazard(data.time) * risk)
    events = data.status == 1
    log_h = np.zeros(data.n_obs)
    log_h[events] = np.log(params.baseline.hazard(data.time[events])) + eta[events]
    return s, data.events_per_cluster, data.cluster_sum(log_h)


def cluster_log_likelihoods(params, data):
    """Per-cluster log-likelihood contributions, shape ``(m,)``."""
    alpha, lam = params.alpha, params.lam
    s, d, event_term = _cluster_terms(params, data)
    x = (1.0 + 2.0 * alpha * s) / alpha**2
    # scaled Bessel terms; sqrt(x) - 1/alpha is added back in a stable form
    out = (
        -(lam + d) * np.log(alpha)
        - log_bessel_ke(lam, 1.0 / alpha)
        + log_psi_scaled(lam + d, x)
        - 2.0 * s / (np.sqrt(1.0 + 2.0 * alpha * s) + 1.0)
        + event_term
    )
    out = np.atleast_1d(out)
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(out))
        raise NumericalError(f"non-finite log-likelihood in clusters {bad.tolist()}")
    return out


def observed_log_likelihood(params, data):
    """Observed-data log-likelihood, summed over clusters in index order."""
    return float(np.sum(cluster_log_likelihoods(params, data)))
