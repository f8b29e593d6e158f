"""Weighted least squares state estimation with residual bad-data detection.

The estimate minimizes (z - Hx)' W (z - Hx); a measurement vector is flagged
as bad when the residual norm ||z - H x_hat||_2 exceeds a threshold tau
calibrated as an empirical quantile of clean residuals.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class EstimationError(RuntimeError):
    """Numerical failure inside the estimator (rank deficiency, bad weights)."""


class Estimator:
    """WLS estimator for a fixed measurement matrix.

    The gain matrix H'WH is factored once at construction, H'WH = R'R with R
    the Cholesky factor obtained through a QR decomposition of sqrt(W) H,
    and the factorization is reused for every estimate.
    """

    def __init__(self, h: np.ndarray, weights: np.ndarray | None = None):
        h = np.asarray(h, dtype=float)
        if h.ndim != 2:
            raise ValueError("h must be a 2-d matrix")
        m, n = h.shape
        if m < n:
            raise EstimationError(f"underdetermined system: {m} measurements, {n} states")
        if weights is None:
            weights = np.ones(m)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (m,):
            raise ValueError(f"weights must have shape ({m},)")
        if np.any(weights <= 0):
            raise EstimationError("measurement weights must be strictly positive")
        self.h = h
        self.weights = weights
        self._sqrt_w = np.sqrt(weights)
        q, r = np.linalg.qr(self._sqrt_w[:, None] * h)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-12 * max(diag.max(), 1.0):
            raise EstimationError("measurement matrix is rank deficient")
        self._q = q
        self._r = r
        self.tau: float | None = None

    @property
    def m(self) -> int:
        return self.h.shape[0]

    @property
    def n(self) -> int:
        return self.h.shape[1]

    def estimate(self, z: np.ndarray) -> np.ndarray:
        """WLS state estimate x_hat = (H'WH)^{-1} H'W z."""
        return self.estimate_batch(np.asarray(z, dtype=float)[None, :])[0]

    def estimate_batch(self, measurements: np.ndarray) -> np.ndarray:
        """Row-wise estimates for a (count, m) block."""
        measurements = np.asarray(measurements, dtype=float)
        if measurements.ndim != 2 or measurements.shape[1] != self.m:
            raise ValueError(f"expected measurement rows of length {self.m}")
        rhs = (measurements * self._sqrt_w) @ self._q
        return scipy.linalg.solve_triangular(self._r, rhs.T, lower=False).T

    def residual_norm(self, z: np.ndarray) -> float:
        """||z - H x_hat||_2 for one measurement vector."""
        return float(self.residual_batch(np.asarray(z, dtype=float)[None, :])[0])

    def residual_batch(self, measurements: np.ndarray) -> np.ndarray:
        measurements = np.asarray(measurements, dtype=float)
        states = self.estimate_batch(measurements)
        return np.linalg.norm(measurements - states @ self.h.T, axis=1)

    def calibrate_tau(self, clean_measurements: np.ndarray, false_alarm_rate: float = 0.01) -> float:
        """Set tau to the empirical (1 - rate) quantile of clean residuals."""
        clean_measurements = np.asarray(clean_measurements, dtype=float)
        if clean_measurements.ndim != 2 or clean_measurements.shape[0] == 0:
            raise ValueError("calibration requires a nonempty (count, m) block")
        if not 0.0 < false_alarm_rate < 1.0:
            raise ValueError("false_alarm_rate must lie in (0, 1)")
        residuals = self.residual_batch(clean_measurements)
        self.tau = float(np.quantile(residuals, 1.0 - false_alarm_rate))
        return self.tau

    def detect(self, z: np.ndarray) -> bool:
        """True when z is flagged as bad data (residual above tau)."""
        if self.tau is None:
            raise EstimationError("detect() requires calibrate_tau() first")
        return self.residual_norm(z) > self.tau

    def detect_batch(self, measurements: np.ndarray) -> np.ndarray:
        if self.tau is None:
            raise EstimationError("detect_batch() requires calibrate_tau() first")
        return self.residual_batch(measurements) > self.tau
