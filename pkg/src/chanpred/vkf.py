"""
Vector Kalman filter channel predictor.

An AR(p) model is rewritten as a first-order system on the stacked state
``[h_n; h_{n-1}; ...; h_{n-p+1}]`` and tracked from pilot measurements with
unit-variance noise. Each slot performs a prediction (``Phi_bar`` propagation)
followed by a correction with the new measurement.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .arfit import ArModel, AutocorrSet
from .errors import ShapeMismatch
from .linalg import hermitian_part, hermitian_solve
from .scm import MeasurementTrace, PilotBlock

__all__ = [
    "StateSpace",
    "KalmanState",
    "VkfOutput",
    "build_state_space",
    "init",
    "predict",
    "correct",
    "run_vkf",
]


@dataclass(frozen=True, eq=False)
class StateSpace:
    phi_bar: np.ndarray
    theta_bar: np.ndarray
    s: np.ndarray
    sigma: np.ndarray
    d: int
    p: int

    @property
    def state_dim(self):
        return self.d * self.p

    @property
    def process_cov(self):
        """``Theta_bar Sigma Theta_bar^H`` (Sigma in the leading block)."""
        q = np.zeros((self.state_dim, self.state_dim), dtype=np.complex128)
        q[:self.d, :self.d] = self.sigma
        return q


@dataclass(frozen=True, eq=False)
class KalmanState:
    estimate: np.ndarray
    cov: np.ndarray
    slot_index: int = 0


@dataclass(frozen=True, eq=False)
class VkfOutput:
    """
    One-step predictions from :func:`run_vkf`.

    ``predictions[n]`` is the prediction of slot ``n + 1`` from measurements
    ``0..n``. Rows with ``n < warmup`` were produced before the state window
    had filled; ``warm[n]`` is False for them.
    """

    predictions: np.ndarray
    warmup: int

    @property
    def warm(self):
        mask = np.ones(self.predictions.shape[0], dtype=bool)
        mask[:self.warmup] = False
        return mask


def build_state_space(model: ArModel, pilot: PilotBlock) -> StateSpace:
    """Companion matrix, innovation selector and measurement matrix."""
    d, p = model.d, model.order
    if pilot.d != d:
        raise ShapeMismatch(f"model dimension {d} != pilot M_r*N = {pilot.d}")
    phi_bar = model.companion()
    theta_bar = np.zeros((d * p, d), dtype=np.complex128)
    theta_bar[:d] = np.eye(d)
    s = np.zeros((pilot.meas_dim, d * p), dtype=np.complex128)
    s[:, :d] = pilot.psi_bar
    return StateSpace(phi_bar=phi_bar, theta_bar=theta_bar, s=s,
                      sigma=np.array(model.innovation_cov, dtype=np.complex128), d=d, p=p)


def init(ss: StateSpace, acorr: AutocorrSet) -> KalmanState:
    """Zero state with covariance equal to the stacked autocorrelation."""
    if acorr.order != ss.p or acorr.d != ss.d:
        raise ShapeMismatch(
            f"autocorrelation (p={acorr.order}, d={acorr.d}) does not match state space "
            f"(p={ss.p}, d={ss.d})"
        )
    cov = hermitian_part(acorr.stacked(regularized=False))
    return KalmanState(estimate=np.zeros(ss.state_dim, dtype=np.complex128), cov=cov)


def predict(state: KalmanState, ss: StateSpace):
    """
    Propagate the state one slot ahead.

    Returns
    -------
    predicted_channel : numpy.ndarray, shape (d,)
        Leading block of the propagated state estimate.
    state : KalmanState
        Prior state for the next slot.
    """
    est = ss.phi_bar @ state.estimate
    cov = ss.phi_bar @ state.cov @ ss.phi_bar.conj().T
    cov[:ss.d, :ss.d] += ss.sigma
    cov = hermitian_part(cov)
    return est[:ss.d].copy(), KalmanState(estimate=est, cov=cov, slot_index=state.slot_index + 1)


def correct(state: KalmanState, ss: StateSpace, y, noise_var=1.0) -> KalmanState:
    """Measurement update; the noise covariance is ``noise_var * I`` (unit by default)."""
    y = np.asarray(y)
    if y.shape != (ss.s.shape[0],):
        raise ShapeMismatch(f"measurement has shape {y.shape}, expected ({ss.s.shape[0]},)")
    m_sh = state.cov @ ss.s.conj().T
    innov_cov = hermitian_part(ss.s @ m_sh) + noise_var * np.eye(ss.s.shape[0])
    # K = M S^H (S M S^H + I)^{-1}; the bracket is Hermitian so solve from the left.
    gain = hermitian_solve(innov_cov, m_sh.conj().T).conj().T
    est = state.estimate + gain @ (y - ss.s @ state.estimate)
    cov = state.cov - gain @ (ss.s @ state.cov)
    return replace(state, estimate=est, cov=hermitian_part(cov))


def run_vkf(model: ArModel, pilot: PilotBlock, measurements, warmup=None,
            acorr: AutocorrSet | None = None) -> VkfOutput:
    """
    Filter a measurement sequence and emit one-step-ahead channel predictions.

    Parameters
    ----------
    model : ArModel
    pilot : PilotBlock
    measurements : MeasurementTrace or array_like, shape (slots, M_r*tau)
    warmup : int, optional
        Number of leading predictions flagged as cold; defaults to ``p``.
    acorr : AutocorrSet, optional
        Source of the initial covariance. Without it the stationary
        covariance implied by `model` is used.
    """
    y = measurements.y if isinstance(measurements, MeasurementTrace) else np.asarray(measurements)
    warmup = model.order if warmup is None else warmup
    if y.shape[0] <= warmup:
        raise ValueError(f"need more than warmup={warmup} measurements, got {y.shape[0]}")
    ss = build_state_space(model, pilot)
    if acorr is None:
        acorr = _stationary_autocorr(model)
    state = init(ss, acorr)
    out = np.empty((y.shape[0], ss.d), dtype=np.complex128)
    for n in range(y.shape[0]):
        _, state = predict(state, ss)
        state = correct(state, ss, y[n])
        out[n] = ss.phi_bar[:ss.d] @ state.estimate
    return VkfOutput(predictions=out, warmup=warmup)


def _stationary_autocorr(model: ArModel) -> AutocorrSet:
    """Lags implied by the model via the discrete Lyapunov equation."""
    ss_phi = model.companion()
    dp, d = ss_phi.shape[0], model.d
    q = np.zeros((dp, dp), dtype=np.complex128)
    q[:d, :d] = model.innovation_cov
    if model.spectral_radius() >= 1.0:
        # Non-stationary fit: fall back to a diffuse-ish prior scaled by Sigma.
        p_mat = np.kron(np.eye(model.order), model.innovation_cov + np.eye(d))
    else:
        p_mat = scipy.linalg.solve_discrete_lyapunov(ss_phi, q)
    lags = np.empty((model.order + 1, d, d), dtype=np.complex128)
    for i in range(model.order):
        lags[i] = p_mat[:d, i * d:(i + 1) * d]
    # R(p) follows from the recursion R(p) = sum_i Phi_i R(p - i).
    lags[-1] = sum(model.coeffs[i] @ lags[model.order - 1 - i] for i in range(model.order))
    return AutocorrSet(lags=lags, source="exact")
