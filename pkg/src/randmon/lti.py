"""Discrete LTI plant, steady-state Kalman filtering, and closed-loop stepping.

Estimator convention
--------------------
The estimate carried in :class:`SimState` is the one-step-ahead prediction.
Each residual is the current measurement minus the predicted output, and the
steady-state gain is applied to that residual when the estimate is propagated
to the next step:

    x[k+1]    = A x[k] + B u[k] + nu[k]
    y[k]      = C x[k] + eta[k] + xi[k]
    r[k]      = y[k] - C xhat[k]
    xhat[k+1] = A xhat[k] + B u[k] + L r[k]

Under this convention the estimation error e = x - xhat obeys

    e[k+1] = (A - L C) e[k] - L (xi[k] + eta[k]) + nu[k]

and the stationary residual covariance is R + C P C^T with P the prediction
error covariance solving the filter Riccati equation. The controller acts on
the predicted estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NonConvergence,
    SingularInnovation,
)

Array = np.ndarray
AttackSignal = Union[None, Array, Callable[[int, Array, Array], Array]]

_COND_LIMIT = 1e12


def _matrix(value, name: str) -> Array:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} contains non-finite entries")
    return arr


def _check_covariance(M: Array, name: str) -> Array:
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-10 * scale):
        raise InvalidParameter(f"{name} must be symmetric")
    sym = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(sym).min() < -1e-10:
        raise InvalidParameter(f"{name} must be positive semidefinite")
    return sym


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"spectral radius needs a square matrix, got {M.shape}")
    return float(np.abs(np.linalg.eigvals(M)).max())


@dataclass
class LtiPlant:
    """Discrete plant x+ = A x + B u + nu, y = C x + eta, with noise covariances.

    Construction validates shapes, symmetry and positive semidefiniteness of Q
    and R, and runs the filter Riccati iteration once; a plant on which that
    iteration cannot converge (e.g. an undetectable unstable mode) is rejected.
    """

    A: Array
    B: Array
    C: Array
    Q: Array
    R: Array
    ts: float = 1.0

    def __post_init__(self):
        self.A = _matrix(self.A, "A")
        self.B = _matrix(self.B, "B")
        self.C = _matrix(self.C, "C")
        self.Q = _check_covariance(_matrix(self.Q, "Q"), "Q")
        self.R = _check_covariance(_matrix(self.R, "R"), "R")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise DimensionMismatch(f"C must have {n} columns, got {self.C.shape}")
        if self.Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be {n}x{n}, got {self.Q.shape}")
        if self.R.shape != (self.C.shape[0],) * 2:
            raise DimensionMismatch(f"R must be {self.C.shape[0]}x{self.C.shape[0]}")
        if not self.ts > 0.0:
            raise InvalidParameter(f"sample period must be positive, got {self.ts}")
        solve_dare(self)  # reject plants the filter cannot stabilize

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def s(self) -> int:
        return self.C.shape[0]


@dataclass
class KalmanSteadyState:
    """Steady-state filter quantities derived from the plant.

    P is the prediction error covariance, L the steady gain, Sigma the
    residual covariance R + C P C^T, and sigma its per-sensor standard
    deviations.
    """

    P: Array
    L: Array
    Sigma: Array
    sigma: Array


def _riccati_fixed_point(A, C, Q, R, tol=1e-12, max_iter=100_000):
    """Iterate P -> A P A' - A P C' (R + C P C')^-1 C P A' + Q from P0 = Q."""
    P = Q.copy()
    # Divergence (undetectable unstable modes) is detected explicitly, so the
    # intermediate overflows on that path are expected and silenced.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            S = R + C @ P @ C.T
            try:
                X = np.linalg.solve(S, C @ P @ A.T)
            except np.linalg.LinAlgError as exc:
                raise SingularInnovation("innovation covariance is singular") from exc
            Pn = A @ P @ A.T - A @ P @ C.T @ X + Q
            Pn = 0.5 * (Pn + Pn.T)
            if not np.all(np.isfinite(Pn)):
                raise NonConvergence("covariance iteration diverged (undetectable unstable mode?)")
            step = np.linalg.norm(Pn - P)
            scale = np.linalg.norm(Pn)
            # Relative step tolerance; the tiny floor only matters for P = 0, and
            # overflowed norms (divergence in progress) must not count as converged.
            if np.isfinite(step) and np.isfinite(scale) and step <= tol * max(scale, np.finfo(float).tiny):
                return Pn
            P = Pn
    raise NonConvergence(f"Riccati iteration did not converge in {max_iter} iterations")


def solve_dare(plant: LtiPlant) -> KalmanSteadyState:
    """Solve the filter Riccati equation by fixed-point iteration.

    Returns the prediction error covariance P, the steady gain
    L = A P C^T (R + C P C^T)^-1, the residual covariance Sigma and the
    per-sensor residual standard deviations.

    Raises ``NonConvergence`` if the iteration cap is reached and
    ``SingularInnovation`` if R + C P C^T is numerically singular.
    """
    A, C, Q, R = plant.A, plant.C, plant.Q, plant.R
    P = _riccati_fixed_point(A, C, Q, R)
    Sigma = R + C @ P @ C.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    if np.linalg.cond(Sigma) > _COND_LIMIT:
        raise SingularInnovation("innovation covariance condition number exceeds 1e12")
    L = np.linalg.solve(Sigma, C @ P @ A.T).T
    diag = np.diag(Sigma)
    if np.any(diag <= 0.0):
        raise SingularInnovation("residual variance must be positive for every sensor")
    return KalmanSteadyState(P=P, L=L, Sigma=Sigma, sigma=np.sqrt(diag))


def lqr_gain(A, B, Qx, Ru, tol=1e-12, max_iter=100_000) -> Array:
    """State-feedback gain K with u = K x such that A + B K is stable.

    Solves the control Riccati equation through the same fixed-point kernel
    (it is the filter equation applied to the transposed system).
    """
    A = _matrix(A, "A")
    B = _matrix(B, "B")
    Qx = _check_covariance(_matrix(Qx, "Qx"), "Qx")
    Ru = _check_covariance(_matrix(Ru, "Ru"), "Ru")
    P = _riccati_fixed_point(A.T, B.T, Qx, Ru, tol=tol, max_iter=max_iter)
    F = np.linalg.solve(Ru + B.T @ P @ B, B.T @ P @ A)
    return -F


def zero_reference(m: int) -> Callable[[int], Array]:
    ref = np.zeros(m)

    def provider(k: int) -> Array:
        return ref

    return provider


def constant_reference(vector) -> Callable[[int], Array]:
    ref = np.asarray(vector, dtype=float).ravel()

    def provider(k: int) -> Array:
        return ref

    return provider


def waypoint_reference(schedule) -> Callable[[int], Array]:
    """Piecewise-constant reference from (start_step, vector) pairs.

    Before the first start step the first vector applies.
    """
    points = sorted((int(k), np.asarray(v, dtype=float).ravel()) for k, v in schedule)
    if not points:
        raise InvalidParameter("waypoint schedule must not be empty")
    starts = [k for k, _ in points]
    vectors = [v for _, v in points]

    def provider(k: int) -> Array:
        idx = 0
        for j, start in enumerate(starts):
            if k >= start:
                idx = j
        return vectors[idx]

    return provider


@dataclass
class ControllerGains:
    """Reference-tracking feedback u = K xhat + kr xref(k).

    ``xref`` maps the step index to an m-vector (one entry per input channel).
    Use :func:`make_controller` to construct gains with the closed-loop
    stability check applied.
    """

    K: Array
    kr: Array
    xref: Callable[[int], Array]


def make_controller(
    plant: LtiPlant,
    K=None,
    kr=None,
    xref=None,
    state_weights=None,
    input_weights=None,
) -> ControllerGains:
    """Build controller gains for a plant, checking rho(A + B K) < 1.

    Either pass K explicitly or let it be designed from LQR weights
    (identity weights by default).
    """
    if K is None:
        Qx = np.diag(state_weights) if state_weights is not None else np.eye(plant.n)
        Ru = np.diag(input_weights) if input_weights is not None else np.eye(plant.m)
        K = lqr_gain(plant.A, plant.B, Qx, Ru)
    K = _matrix(K, "K")
    if K.shape != (plant.m, plant.n):
        raise DimensionMismatch(f"K must be {plant.m}x{plant.n}, got {K.shape}")
    rho = spectral_radius(plant.A + plant.B @ K)
    if rho >= 1.0:
        raise InvalidParameter(f"closed loop unstable: rho(A + BK) = {rho:.6f} >= 1")
    if kr is None:
        kr = np.eye(plant.m)
    kr = _matrix(kr, "kr")
    if kr.shape != (plant.m, plant.m):
        raise DimensionMismatch(f"kr must be {plant.m}x{plant.m}, got {kr.shape}")
    if xref is None:
        xref = zero_reference(plant.m)
    return ControllerGains(K=K, kr=kr, xref=xref)


def _sqrt_psd(M: Array) -> Array:
    """Matrix square root for covariance sampling.

    Cholesky when positive definite, eigendecomposition fallback for
    semidefinite inputs (negative eigenvalues from roundoff clipped to zero).
    """
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


class NoiseSource:
    """Seedable process/measurement noise generator.

    Standard normal draws come from a counter-based Philox generator and are
    colored by square-root factors of Q and R, so runs are bit-reproducible
    for a given seed.
    """

    def __init__(self, Q, R, seed: int):
        Q = _check_covariance(_matrix(Q, "Q"), "Q")
        R = _check_covariance(_matrix(R, "R"), "R")
        self._lq = _sqrt_psd(Q)
        self._lr = _sqrt_psd(R)
        self._n = Q.shape[0]
        self._s = R.shape[0]
        self._rng = np.random.Generator(np.random.Philox(seed))

    def draw(self):
        """Return one (nu, eta) pair."""
        nu = self._lq @ self._rng.standard_normal(self._n)
        eta = self._lr @ self._rng.standard_normal(self._s)
        return nu, eta

    def draw_eta(self) -> Array:
        """Measurement noise only, used for the initial output."""
        return self._lr @ self._rng.standard_normal(self._s)


@dataclass
class SimState:
    """Closed-loop state at one step.

    ``xhat`` is the one-step-ahead prediction (see module docstring), ``e``
    the estimation error x - xhat recomputed fresh each step, and ``r`` the
    residual y - C xhat.
    """

    k: int
    x: Array
    xhat: Array
    e: Array
    r: Array
    y: Array
    u: Array


def _resolve_attack(attack: AttackSignal, k: int, e: Array, eta: Array, s: int) -> Array:
    if attack is None:
        return np.zeros(s)
    if callable(attack):
        xi = np.asarray(attack(k, e, eta), dtype=float)
    else:
        xi = np.asarray(attack, dtype=float)
    if xi.shape != (s,):
        raise DimensionMismatch(f"attack signal must have shape ({s},), got {xi.shape}")
    return xi


def initial_state(
    plant: LtiPlant,
    kss: KalmanSteadyState,
    x0=None,
    xhat0=None,
    noise: Optional[NoiseSource] = None,
    attack: AttackSignal = None,
) -> SimState:
    """State at k = 0, including the initial measurement and residual."""
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    xhat = x.copy() if xhat0 is None else np.asarray(xhat0, dtype=float).copy()
    if x.shape != (plant.n,) or xhat.shape != (plant.n,):
        raise DimensionMismatch("x0 and xhat0 must be length-n vectors")
    eta = noise.draw_eta() if noise is not None else np.zeros(plant.s)
    e = x - xhat
    xi = _resolve_attack(attack, 0, e, eta, plant.s)
    y = plant.C @ x + eta + xi
    r = y - plant.C @ xhat
    return SimState(k=0, x=x, xhat=xhat, e=e, r=r, y=y, u=np.zeros(plant.m))


def step(
    plant: LtiPlant,
    kss: KalmanSteadyState,
    gains: ControllerGains,
    state: SimState,
    attack: AttackSignal = None,
    noise: Optional[NoiseSource] = None,
) -> SimState:
    """Advance the closed loop by one step and return the successor state.

    ``attack`` is either None, an s-vector added to the new measurement, or a
    callable ``(k, e, eta) -> s-vector`` evaluated with the new step index,
    the new estimation error and the new measurement noise draw (the
    omniscient-attacker interface).
    """
    if state.x.shape != (plant.n,) or state.r.shape != (plant.s,):
        raise DimensionMismatch("state dimensions do not match the plant")
    u = gains.K @ state.xhat + gains.kr @ gains.xref(state.k)
    if noise is not None:
        nu, eta = noise.draw()
    else:
        nu, eta = np.zeros(plant.n), np.zeros(plant.s)
    drive = plant.B @ u
    x_next = plant.A @ state.x + drive + nu
    xhat_next = plant.A @ state.xhat + drive + kss.L @ state.r
    e_next = x_next - xhat_next
    k_next = state.k + 1
    xi = _resolve_attack(attack, k_next, e_next, eta, plant.s)
    y_next = plant.C @ x_next + eta + xi
    r_next = y_next - plant.C @ xhat_next
    return SimState(k=k_next, x=x_next, xhat=xhat_next, e=e_next, r=r_next, y=y_next, u=u)


def simulate(
    plant: LtiPlant,
    kss: KalmanSteadyState,
    gains: ControllerGains,
    noise: Optional[NoiseSource],
    horizon: int,
    attack: AttackSignal = None,
    x0=None,
    xhat0=None,
):
    """Run ``horizon`` steps and return stacked trajectories.

    Returns a dict with arrays ``x`` (horizon, n), ``r`` (horizon, s) and the
    final state. Row k holds the state at step k.
    """
    if horizon < 1:
        raise InvalidParameter("horizon must be at least 1")
    state = initial_state(plant, kss, x0=x0, xhat0=xhat0, noise=noise, attack=attack)
    xs = np.empty((horizon, plant.n))
    rs = np.empty((horizon, plant.s))
    for k in range(horizon):
        xs[k] = state.x
        rs[k] = state.r
        if k + 1 < horizon:
            state = step(plant, kss, gains, state, attack=attack, noise=noise)
    return {"x": xs, "r": rs, "final_state": state}


# --- zero-order-hold discretization -------------------------------------------------


def _expm(M: Array, tol: float = 1e-15, max_terms: int = 80) -> Array:
    """Matrix exponential by scaling-and-squaring on a truncated Taylor series."""
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M, 1)
    squarings = max(0, int(math.ceil(math.log2(norm)))) if norm > 1.0 else 0
    A = M / (2.0 ** squarings)
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for j in range(1, max_terms + 1):
        term = term @ A / j
        result = result + term
        if np.linalg.norm(term, 1) <= tol * max(1.0, np.linalg.norm(result, 1)):
            break
    else:
        raise NonConvergence("matrix exponential series did not converge")
    for _ in range(squarings):
        result = result @ result
    return result


def zoh_discretize(Ac: Array, Bc: Array, ts: float):
    """Exact zero-order-hold discretization of a continuous pair (Ac, Bc)."""
    Ac = _matrix(Ac, "Ac")
    Bc = _matrix(Bc, "Bc")
    n, m = Ac.shape[0], Bc.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = _expm(aug * ts)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True)
class UgvParams:
    """Physical constants of the skid-steer ground vehicle model.

    State is [forward velocity, heading, yaw rate]; inputs are the left and
    right wheel forces. ``width`` is the track width; the two resistances damp
    rolling and turning.
    """

    mass: float = 10.0
    inertia: float = 0.5
    width: float = 0.4
    roll_resistance: float = 5.0
    turn_resistance: float = 0.8


def ugv_continuous(params: UgvParams):
    """Continuous-time (Ac, Bc) of the skid-steer vehicle linear model."""
    for name in ("mass", "inertia", "width", "roll_resistance", "turn_resistance"):
        if not getattr(params, name) > 0.0:
            raise InvalidParameter(f"UGV parameter {name} must be positive")
    m, iz, w = params.mass, params.inertia, params.width
    Ac = np.array([
        [-params.roll_resistance / m, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -params.turn_resistance / iz],
    ])
    Bc = np.array([
        [1.0 / m, 1.0 / m],
        [0.0, 0.0],
        [w / (2.0 * iz), -w / (2.0 * iz)],
    ])
    return Ac, Bc


def discretize_ugv(params: UgvParams, ts: float, Q, R) -> LtiPlant:
    """Discrete UGV plant via exact ZOH. Q and R are supplied by the caller.

    All three states are measured (C = I), matching a velocity sensor, a
    heading sensor and a yaw-rate gyro.
    """
    if not ts > 0.0:
        raise InvalidParameter(f"sample period must be positive, got {ts}")
    Ac, Bc = ugv_continuous(params)
    Ad, Bd = zoh_discretize(Ac, Bc, ts)
    return LtiPlant(A=Ad, B=Bd, C=np.eye(3), Q=Q, R=R, ts=ts)
