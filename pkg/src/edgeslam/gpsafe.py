"""Gaussian-process safety model over ``state ⊕ one-hot(action)`` inputs.

Labels are ``1 = unsafe`` (some deadline will be violated) and ``0 = safe``;
internally they become ``+1 / -1``.  Two fitting modes:

``regression_squash``
    GP regression on the ``±1`` targets with noise ``σ²``; the latent
    Gaussian ``N(m, v)`` is squashed with ``Φ(m / sqrt(1 + v))``.
``laplace``
    GP classification with a logistic likelihood.  Newton iterations find the
    posterior mode; the Gaussian approximation at the mode gives ``N(m, v)``
    and the probability is ``∫ sigmoid(f) N(f; m, v) df`` (Gauss-Hermite).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit, ndtr

MODES = ("regression_squash", "laplace")
JITTER = 1e-8
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(40)
_GH_W = _GH_W / _GH_W.sum()


class GpNumericalError(ArithmeticError):
    """Kernel factorization failed or Newton iterations did not converge."""


class GpStateError(RuntimeError):
    """Prediction requested from a model that was never fitted."""


def rbf(x, x2, lengthscale: float, signal_var: float = 1.0) -> float:
    """``σ_f² · exp(-‖x - x2‖² / (2 ℓ²))``."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be > 0")
    d2 = float(np.sum((x - x2) ** 2))
    return signal_var * math.exp(-d2 / (2.0 * lengthscale**2))


def rbf_matrix(A: np.ndarray, B: np.ndarray, lengthscale: float, signal_var: float = 1.0) -> np.ndarray:
    d2 = cdist(A, B, "sqeuclidean")
    return signal_var * np.exp(-d2 / (2.0 * lengthscale**2))


def median_heuristic(X: np.ndarray) -> float:
    """Median pairwise distance; 1.0 when it is undefined or zero."""
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class SafetyPrediction:
    probability_unsafe: float
    mean: float
    variance: float
    threshold: float = 0.5

    @property
    def unsafe(self) -> bool:
        return self.probability_unsafe > self.threshold

    @property
    def verdict(self) -> str:
        return "unsafe" if self.unsafe else "safe"


@dataclass
class GpSafetyModel:
    X: np.ndarray
    y: np.ndarray  # in {0, 1}
    lengthscale: float
    signal_var: float = 1.0
    noise_var: float = 0.1
    mode: str = "laplace"
    threshold: float = 0.5
    # cached factorization
    _L: np.ndarray | None = field(default=None, repr=False)
    _alpha: np.ndarray | None = field(default=None, repr=False)  # regression weights or grad log-lik at the mode
    _sqrt_w: np.ndarray | None = field(default=None, repr=False)
    f_hat: np.ndarray | None = field(default=None, repr=False)
    n_iter: int = 0

    @property
    def fitted(self) -> bool:
        return self._L is not None

    @property
    def input_dim(self) -> int:
        return int(self.X.shape[1])

    def kernel(self, A, B=None) -> np.ndarray:
        return rbf_matrix(A, self.X if B is None else B, self.lengthscale, self.signal_var)

    def latent(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Latent predictive mean and variance at the rows of ``Xs``."""
        if not self.fitted:
            raise GpStateError("GP model has not been fitted")
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of dim {self.input_dim}, got {Xs.shape[1]}")
        Ks = self.kernel(Xs)  # (m, n)
        mean = Ks @ self._alpha
        if self.mode == "regression_squash":
            v = solve_triangular(self._L, Ks.T, lower=True)
        else:
            v = solve_triangular(self._L, self._sqrt_w[:, None] * Ks.T, lower=True)
        var = np.maximum(self.signal_var - np.einsum("ij,ij->j", v, v), 0.0)
        return mean, var

    def probability(self, Xs) -> np.ndarray:
        mean, var = self.latent(Xs)
        if self.mode == "regression_squash":
            return ndtr(mean / np.sqrt(1.0 + var))
        return logistic_gaussian(mean, var)

    def predict(self, x_star) -> SafetyPrediction:
        mean, var = self.latent(np.asarray(x_star, dtype=float)[None, :])
        p = self.probability(np.asarray(x_star, dtype=float)[None, :])
        return SafetyPrediction(float(p[0]), float(mean[0]), float(var[0]), self.threshold)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lengthscale": self.lengthscale,
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
            "threshold": self.threshold,
            "input_dim": self.input_dim,
            "n_obs": int(len(self.y)),
            "n_unsafe": int(np.sum(self.y)),
            "newton_iterations": self.n_iter,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def logistic_gaussian(mean, var) -> np.ndarray:
    """``E[sigmoid(f)]`` for ``f ~ N(mean, var)`` by 40-point Gauss-Hermite quadrature."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    f = mean[..., None] + sd[..., None] * _GH_X
    return expit(f) @ _GH_W


def _chol(A: np.ndarray) -> np.ndarray:
    """Cholesky factor; jitter is added only if the plain factorization fails."""
    try:
        return cholesky(A, lower=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(A + JITTER * np.eye(len(A)), lower=True)
    except np.linalg.LinAlgError as exc:
        raise GpNumericalError(f"kernel matrix not positive definite after jitter: {exc}") from None


def gp_fit(
    X,
    y,
    lengthscale: float | None = None,
    signal_var: float = 1.0,
    noise_var: float = 0.1,
    mode: str = "laplace",
    threshold: float = 0.5,
    max_iter: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL,
) -> GpSafetyModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if len(X) < 1:
        raise ValueError("need at least one observation")
    if len(X) != len(y):
        raise ValueError(f"|X| = {len(X)} but |y| = {len(y)}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (safe) or 1 (unsafe)")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if signal_var <= 0 or noise_var <= 0:
        raise ValueError("signal and noise variances must be > 0")
    ell = median_heuristic(X) if lengthscale is None else float(lengthscale)
    if ell <= 0:
        raise ValueError("lengthscale must be > 0")
    y = y.astype(float)
    model = GpSafetyModel(X, y, ell, signal_var, noise_var, mode, threshold)
    K = model.kernel(X, X)
    t = 2.0 * y - 1.0
    if mode == "regression_squash":
        L = _chol(K + noise_var * np.eye(len(X)))
        model._L = L
        model._alpha = cho_solve((L, True), t)
        return model

    # Newton iterations for the logistic-likelihood posterior mode
    n = len(X)
    f = np.zeros(n)
    for it in range(1, max_iter + 1):
        pi = expit(f)
        w = pi * (1.0 - pi)
        sw = np.sqrt(w)
        L = _chol(np.eye(n) + sw[:, None] * K * sw[None, :])
        b = w * f + (y - pi)
        a = b - sw * cho_solve((L, True), sw * (K @ b))
        f_new = K @ a
        delta = float(np.max(np.abs(f_new - f)))
        f = f_new
        if delta < tol:
            break
    else:
        raise GpNumericalError(f"Newton iterations did not converge after {max_iter} iterations (last change {delta:.3g})")
    pi = expit(f)
    w = pi * (1.0 - pi)
    sw = np.sqrt(w)
    model._L = _chol(np.eye(n) + sw[:, None] * K * sw[None, :])
    model._sqrt_w = sw
    model._alpha = y - pi
    model.f_hat = f
    model.n_iter = it
    return model


def gp_predict(model: GpSafetyModel, x_star) -> SafetyPrediction:
    return model.predict(x_star)


def safety_input(state, action: int, n_actions: int) -> np.ndarray:
    """``state ⊕ one_hot(action)``."""
    oh = np.zeros(n_actions)
    oh[action] = 1.0
    return np.concatenate((np.asarray(state, dtype=float), oh))


def refit_schedule(t: int, T0: int = 500, T1: int = 200, model_state=None) -> str:
    """Fit phase for global step ``t``: collect_and_fit, periodic_update or predict_only."""
    if T0 < 1 or T1 < 1:
        raise ValueError("T0 and T1 must be >= 1")
    if 1 < t <= T0:
        return "collect_and_fit"
    if t > T0 and t % T1 == 0:
        return "periodic_update"
    return "predict_only"


class SafetyDataset:
    """Sliding window of the most recent ``window`` labelled observations."""

    def __init__(self, window: int = 2000):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.X: deque = deque(maxlen=window)
        self.y: deque = deque(maxlen=window)

    def add(self, x, label: int) -> None:
        self.X.append(np.asarray(x, dtype=float))
        self.y.append(int(label))

    def __len__(self) -> int:
        return len(self.y)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.X), np.array(self.y)

    def fit(self, **kw) -> GpSafetyModel:
        X, y = self.arrays()
        return gp_fit(X, y, **kw)
