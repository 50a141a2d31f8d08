"""Kalman filtering of latent factors: per-user linear dynamics over the
PARAFAC2 factor sequence, with context vectors as observations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MISSING = None  # sentinel for an absent contextual signal
MISSING_VARIANCE_SCALE = 1e6
DEFAULT_PROCESS_NOISE = 0.01


@dataclass
class KalmanState:
    A: np.ndarray  # R x R transition matrix
    Q: np.ndarray  # R x R process noise covariance
    Psi: np.ndarray  # N x N measurement noise covariance
    Lam: np.ndarray  # N x R loading matrix
    f_post: np.ndarray  # a posteriori latent factor
    P_post: np.ndarray  # a posteriori error covariance
    f_prior: np.ndarray | None = None
    P_prior: np.ndarray | None = None
    gain: np.ndarray | None = field(default=None, repr=False)


def estimate_transition(F: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Least-squares transition fit for columns of F (R x T): f_t ~= A f_{t-1}.

    Minimizes sum_t ||f_t - A f_{t-1}||^2 + ridge ||A||_F^2.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    r, T = F.shape
    if T < 2:
        raise ValueError("need at least two time steps")
    prev = F[:, :-1]
    nxt = F[:, 1:]
    lhs = prev @ prev.T + ridge * np.eye(r)
    rhs = nxt @ prev.T
    return rhs @ np.linalg.pinv(lhs)


def predict(state: KalmanState) -> KalmanState:
    """Time update: propagate the posterior through the dynamics."""
    state.f_prior = state.A @ state.f_post
    P = state.A @ state.P_post @ state.A.T + state.Q
    state.P_prior = (P + P.T) / 2
    return state


def update(state: KalmanState, x) -> KalmanState:
    """Measurement update; pass MISSING to apply the large-variance limit."""
    if state.f_prior is None or state.P_prior is None:
        raise ValueError("predict must run before update")
    Lam = state.Lam
    n = Lam.shape[0]
    if x is MISSING:
        psi = state.Psi * MISSING_VARIANCE_SCALE
        x_obs = np.zeros(n)
    else:
        psi = state.Psi
        x_obs = np.asarray(x, dtype=float)
        if x_obs.shape != (n,):
            raise ValueError(f"observation shape {x_obs.shape} != ({n},)")

    innov_cov = Lam @ state.P_prior @ Lam.T + psi
    try:
        gain = np.linalg.solve(innov_cov.T, (state.P_prior @ Lam.T).T).T
    except np.linalg.LinAlgError:
        log.warning("singular innovation covariance; regularizing")
        innov_cov = innov_cov + 1e-10 * np.eye(n)
        gain = np.linalg.solve(innov_cov.T, (state.P_prior @ Lam.T).T).T

    state.gain = gain
    state.f_post = state.f_prior + gain @ (x_obs - Lam @ state.f_prior)
    P = (np.eye(len(state.f_prior)) - gain @ Lam) @ state.P_prior
    state.P_post = (P + P.T) / 2
    return state


def step(state: KalmanState, x) -> KalmanState:
    return update(predict(state), x)


def initial_state(
    Lam: np.ndarray,
    A: np.ndarray,
    Q: np.ndarray,
    Psi: np.ndarray,
    f0: np.ndarray,
) -> KalmanState:
    r = len(f0)
    return KalmanState(
        A=A, Q=Q, Psi=Psi, Lam=Lam, f_post=np.asarray(f0, dtype=float), P_post=np.eye(r)
    )


def evolve_sequence(
    Lam: np.ndarray,
    A: np.ndarray,
    Q: np.ndarray,
    Psi: np.ndarray,
    observations,
    f0: np.ndarray,
) -> tuple[list[np.ndarray], KalmanState]:
    """Run the filter across all observation columns.

    observations is a sequence of N-vectors (or MISSING entries). Starts from
    f0 with identity posterior covariance; returns the a posteriori factor per
    step plus the final state for later incremental serving.
    """
    r = A.shape[0]
    if Lam.shape[1] != r or Q.shape != (r, r) or len(f0) != r:
        raise ValueError("inconsistent shapes")
    state = initial_state(Lam, A, Q, Psi, f0)
    out: list[np.ndarray] = []
    for x in observations:
        state = step(state, x)
        out.append(state.f_post.copy())
    return out, state


def estimate_measurement_noise(X: np.ndarray, Lam: np.ndarray, F: np.ndarray) -> float:
    """Scalar residual variance of X - Lam F, floored for stability."""
    resid = X - Lam @ F
    var = float((resid**2).mean())
    return max(var, 1e-8)
