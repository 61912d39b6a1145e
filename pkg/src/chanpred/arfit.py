"""
Vector autoregressive models fitted with the Yule-Walker equations.

The lag convention is ``R(i) = E[h_n h_{n-i}^H]``. The stacked matrix used in
the Yule-Walker solve is block Toeplitz with ``R(j - i)`` in block ``(i, j)``
and ``R(-i) = R(i)^H``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, ShapeMismatch, TooFewSamples, UnstableModel
from .linalg import hermitian_part, hermitian_solve, pseudo_inverse, psd_project
from .scm import ChannelTrace, MeasurementTrace

__all__ = [
    "AutocorrSet",
    "ArModel",
    "block_toeplitz",
    "exact_autocorr",
    "sample_autocorr",
    "yule_walker",
    "simulate_ar",
    "DEFAULT_EPS_SCALE",
    "AUTO_EPS_SCALE",
    "CONDITION_LIMIT",
]

DEFAULT_EPS_SCALE = 1e-6
# eps="auto": a sampling-error floor shrinking like 1/sqrt(windows), plus the
# channel-domain variance of the pilot noise, plus whatever shift the full
# (p+1)-block Toeplitz matrix needs to be positive definite again after the
# noise floor is subtracted.
AUTO_EPS_SCALE = 0.25
CONDITION_LIMIT = 1e12


def block_toeplitz(lags, p=None):
    """Assemble the ``dp x dp`` Hermitian block-Toeplitz matrix from ``R(0..p-1)``."""
    lags = np.asarray(lags)
    p = lags.shape[0] if p is None else p
    d = lags.shape[1]
    out = np.empty((d * p, d * p), dtype=np.complex128)
    for i in range(p):
        for j in range(p):
            blk = lags[j - i] if j >= i else lags[i - j].conj().T
            out[i * d:(i + 1) * d, j * d:(j + 1) * d] = blk
    return out


@dataclass(frozen=True, eq=False)
class AutocorrSet:
    """
    Autocorrelation lags ``R(0..p)`` of a ``d``-dimensional process.

    Attributes
    ----------
    lags : numpy.ndarray, shape (p+1, d, d)
    eps : float
        Diagonal loading added to the stacked matrix before inversion.
    source : {"exact", "sampled"}
    n_samples : int or None
        Number of measurement vectors behind a sampled estimate.
    """

    lags: np.ndarray
    eps: float = 0.0
    source: str = "exact"
    n_samples: int | None = None

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.complex128)
        if lags.ndim != 3 or lags.shape[1] != lags.shape[2] or lags.shape[0] < 2:
            raise ShapeMismatch(f"lags must have shape (p+1, d, d) with p >= 1, got {lags.shape}")
        object.__setattr__(self, "lags", lags)

    @property
    def order(self):
        return self.lags.shape[0] - 1

    @property
    def d(self):
        return self.lags.shape[1]

    def stacked(self, regularized=True):
        """Stacked matrix ``R_bar`` (optionally ``+ eps I``)."""
        r = block_toeplitz(self.lags[:-1], self.order)
        if regularized and self.eps:
            r = r + self.eps * np.eye(r.shape[0])
        return r

    def lag_row(self):
        """``[R(1) R(2) ... R(p)]`` as a ``d x dp`` matrix."""
        return np.concatenate(list(self.lags[1:]), axis=1)

    def condition_number(self):
        w = np.linalg.eigvalsh(self.stacked())
        small = np.min(np.abs(w))
        return np.inf if small == 0 else float(np.max(np.abs(w)) / small)


@dataclass(frozen=True, eq=False)
class ArModel:
    """``h_n = sum_i Phi_i h_{n-i} + u_n`` with ``u_n ~ CN(0, Sigma)``."""

    coeffs: np.ndarray
    innovation_cov: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        sigma = np.asarray(self.innovation_cov, dtype=np.complex128)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        d = sigma.shape[0]
        if coeffs.shape[1:] != (d, d) or sigma.shape != (d, d):
            raise ShapeMismatch(f"coefficients {coeffs.shape} do not match Sigma {sigma.shape}")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "innovation_cov", sigma)

    @property
    def order(self):
        return self.coeffs.shape[0]

    @property
    def d(self):
        return self.innovation_cov.shape[0]

    def coeff_row(self):
        return np.concatenate(list(self.coeffs), axis=1)

    def companion(self):
        d, p = self.d, self.order
        top = self.coeff_row()
        if p == 1:
            return top.copy()
        shift = np.hstack([np.eye(d * (p - 1)), np.zeros((d * (p - 1), d))])
        return np.vstack([top, shift]).astype(np.complex128)

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))


def _as_vectors(trace):
    if isinstance(trace, ChannelTrace):
        return trace.vectors
    h = np.asarray(trace, dtype=np.complex128)
    if h.ndim != 2:
        raise ShapeMismatch("expected a (slots, d) array of channel vectors")
    return h


def exact_autocorr(trace, p, eps=0.0):
    """
    Sample-mean lags ``R(i) = 1/(S-i) sum_n h_n h_{n-i}^H`` on true channels.

    Parameters
    ----------
    trace : ChannelTrace or array_like, shape (slots, d)
    p : int
    eps : float
        Diagonal loading carried into the returned set.
    """
    h = _as_vectors(trace)
    slots = h.shape[0]
    if slots < p + 1:
        raise TooFewSamples(f"need at least p+1={p + 1} slots, got {slots}")
    lags = np.empty((p + 1, h.shape[1], h.shape[1]), dtype=np.complex128)
    for i in range(p + 1):
        lags[i] = h[i:].T @ h[:slots - i].conj() / (slots - i)
    lags[0] = hermitian_part(lags[0])
    return AutocorrSet(lags=lags, eps=float(eps), source="exact", n_samples=slots)


def sample_autocorr(measurements, p, eps=None, n_samples=None, noise_var=1.0,
                    check_condition=True):
    """
    Estimate ``R(0..p)`` from noisy pilot measurements.

    Stacked measurement windows ``[y_n; y_{n-1}; ...; y_{n-p+1}]`` give a
    sampled covariance from which the noise floor ``noise_var * I`` is
    removed; the result is mapped to the channel domain through the block
    pseudo-inverse of the pilot operator. Lags ``0..p-1`` average every
    block sharing the same lag; lag ``p`` is estimated from the pairs
    ``(y_n, y_{n-p})``.

    Parameters
    ----------
    measurements : MeasurementTrace
    p : int
        AR order (>= 1).
    eps : float or "auto", optional
        Diagonal loading for the stacked matrix. Defaults to
        ``1e-6 * trace(R(0)) / d``. ``"auto"`` uses
        ``0.25 / sqrt(windows) * trace(R(0)) / d`` plus the per-entry noise
        variance after the pilot pseudo-inverse, ``noise_var * trace(P P^H) / d``;
        this keeps fits stable when the channel covariance is rank deficient.
        If the ``(p+1)``-block Toeplitz matrix of the noise-corrected lags is
        still indefinite, its most negative eigenvalue is added on top.
    n_samples : int, optional
        Use only the first `n_samples` measurement vectors.
    noise_var : float
        Per-entry noise variance assumed in the floor subtraction.

    Raises
    ------
    TooFewSamples
        Fewer than ``p + 1`` stacked windows are available.
    IllConditioned
        The regularized stacked matrix has condition number above 1e12.
    """
    if p < 1:
        raise ValueError("order p must be >= 1")
    if not isinstance(measurements, MeasurementTrace):
        raise TypeError("sample_autocorr needs a MeasurementTrace (pilot block required)")
    y, pilot = measurements.y, measurements.pilot
    if n_samples is not None:
        y = y[:n_samples]
    k_total, m = y.shape
    if m != pilot.meas_dim:
        raise ShapeMismatch(f"measurement length {m} != M_r*tau = {pilot.meas_dim}")
    n_windows = k_total - p + 1
    if n_windows < p + 1:
        raise TooFewSamples(f"{n_windows} stacked windows available, need >= {p + 1}")

    stack = np.concatenate([y[p - 1 - i:k_total - i] for i in range(p)], axis=1)
    cov = stack.T @ stack.conj() / n_windows
    cov -= noise_var * np.eye(m * p)

    pinv = pseudo_inverse(pilot.psi_bar)
    d = pinv.shape[0]
    lags = np.zeros((p + 1, d, d), dtype=np.complex128)
    for lag in range(p):
        acc = np.zeros((d, d), dtype=np.complex128)
        for i in range(p - lag):
            j = i + lag
            acc += pinv @ cov[i * m:(i + 1) * m, j * m:(j + 1) * m] @ pinv.conj().T
        lags[lag] = acc / (p - lag)
    cross = y[p:].T @ y[:k_total - p].conj() / (k_total - p)
    lags[p] = pinv @ cross @ pinv.conj().T
    lags[0] = hermitian_part(lags[0])

    scale = float(np.trace(lags[0]).real) / d
    if eps is None:
        eps = DEFAULT_EPS_SCALE * scale
    elif isinstance(eps, str):
        if eps != "auto":
            raise ValueError(f"eps must be a number, None or 'auto', not {eps!r}")
        eps = AUTO_EPS_SCALE / np.sqrt(n_windows) * scale
        eps += noise_var * float(np.sum(np.abs(pinv) ** 2)) / d
        eps += max(0.0, -float(np.linalg.eigvalsh(block_toeplitz(lags)).min()))
    elif eps < 0:
        raise ValueError("eps must be non-negative")
    acorr = AutocorrSet(lags=lags, eps=float(eps), source="sampled", n_samples=k_total)
    if check_condition:
        cond = acorr.condition_number()
        if cond > CONDITION_LIMIT:
            raise IllConditioned(f"regularized autocorrelation has condition number {cond:.3g}")
    return acorr


def yule_walker(acorr):
    """
    Solve the Yule-Walker equations for ``Phi_1..Phi_p`` and ``Sigma``.

    ``[Phi_1 ... Phi_p] = [R(1) ... R(p)] (R_bar + eps I)^{-1}`` and
    ``Sigma = R(0) - sum_i Phi_i R(i)^H``, projected onto the PSD cone.
    """
    r_bar = acorr.stacked()
    row = acorr.lag_row()
    # X R = L  <=>  R X^H = L^H for Hermitian R.
    phi_row = hermitian_solve(r_bar, row.conj().T).conj().T
    d, p = acorr.d, acorr.order
    coeffs = phi_row.reshape(d, p, d).transpose(1, 0, 2)
    sigma = acorr.lags[0].copy()
    for i in range(p):
        sigma -= coeffs[i] @ acorr.lags[i + 1].conj().T
    model = ArModel(coeffs=coeffs, innovation_cov=psd_project(sigma))
    radius = model.spectral_radius()
    if radius >= 1.0 + 1e-6:
        warnings.warn(f"fitted AR model has companion spectral radius {radius:.6f}", RuntimeWarning,
                      stacklevel=2)
    return model


def _covariance_factor(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(hermitian_part(sigma))
        return v * np.sqrt(np.clip(w, 0.0, None))


def simulate_ar(model, slots, seed=None, burn_in=None):
    """
    Draw ``slots`` consecutive vectors from a stable AR model.

    Innovations are ``CN(0, Sigma)`` drawn through a Cholesky factor; the
    recursion starts from zero and discards ``10 p`` burn-in slots.

    Returns
    -------
    numpy.ndarray, shape (slots, d)
    """
    radius = model.spectral_radius()
    if radius >= 1.0:
        raise UnstableModel(f"companion spectral radius {radius:.6f} >= 1")
    p, d = model.order, model.d
    burn = 10 * p if burn_in is None else burn_in
    total = slots + burn
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal((total, d)) + 1j * rng.standard_normal((total, d))) * np.sqrt(0.5)
    u = noise @ _covariance_factor(model.innovation_cov).T
    phi_row = model.coeff_row()
    h = np.zeros((total + p, d), dtype=np.complex128)
    for n in range(total):
        # h[n + p - 1], ..., h[n] are the p most recent values, newest first.
        past = h[n:n + p][::-1].reshape(-1)
        h[n + p] = phi_row @ past + u[n]
    return h[p + burn:]
