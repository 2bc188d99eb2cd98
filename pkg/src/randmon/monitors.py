"""Sliding-window randomness monitors on per-sensor residual streams.

Two nonparametric tests run on each full window: a signed-rank test for
symmetry of the residual about zero, and a runs test on the signs of
consecutive residual differences for serial independence. Both reduce to a
z-score against closed-form null moments and a two-sided p-value; an alarm
fires when the p-value drops below the desired false-alarm rate.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateWindow,
    DomainError,
    EmptyAfterZeroRemoval,
    InvalidParameter,
    SmallSampleWarning,
)
from .gaussian import std_normal_quantile, two_sided_p

#: below these effective sizes the normal approximations degrade; tests still
#: run but flag the outcome and emit a SmallSampleWarning.
WSR_MIN_EFFECTIVE = 20
SIR_MIN_DIFFERENCES = 25


class WindowBuffer:
    """Fixed-capacity sliding window of residual scalars, oldest first.

    Monitors only produce verdicts once the buffer is full; pushes after that
    evict the oldest entry.
    """

    def __init__(self, capacity: int, sensor_id: int = 0):
        if capacity < 1:
            raise InvalidParameter(f"window capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.sensor_id = int(sensor_id)
        self._buf = np.empty(self.capacity)
        self._count = 0
        self._head = 0  # index of the oldest entry once full

    def push(self, value: float) -> None:
        if self._count < self.capacity:
            self._buf[self._count] = value
            self._count += 1
        else:
            self._buf[self._head] = value
            self._head = (self._head + 1) % self.capacity

    @property
    def full(self) -> bool:
        return self._count == self.capacity

    def __len__(self) -> int:
        return self._count

    def values(self) -> np.ndarray:
        """Window contents in arrival order."""
        if self._count < self.capacity:
            return self._buf[: self._count].copy()
        if self._head == 0:
            return self._buf.copy()
        return np.concatenate([self._buf[self._head:], self._buf[: self._head]])


@dataclass
class SignedRanks:
    ranks: np.ndarray   # aligned with ``values``
    values: np.ndarray  # nonzero inputs in original order
    ell_eff: int


def signed_ranks(values) -> SignedRanks:
    """Rank absolute values ascending from 1, zeros removed, ties averaged.

    Exact zeros are dropped (reducing the effective length); exactly tied
    absolute values all receive the arithmetic mean of the ranks they span.
    Tie means are computed as (first + last)/2 so total rank mass stays exact
    in floating point.
    """
    v = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise InvalidParameter("window contains non-finite values")
    kept = v[v != 0.0]
    n = kept.size
    if n == 0:
        raise EmptyAfterZeroRemoval("all values in the window are exactly zero")
    a = np.abs(kept)
    order = np.argsort(a, kind="stable")
    a_sorted = a[order]
    cuts = np.flatnonzero(a_sorted[1:] != a_sorted[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [n]))
    group_rank = (starts + 1 + ends) / 2.0
    ranks_sorted = np.repeat(group_rank, ends - starts)
    ranks = np.empty(n)
    ranks[order] = ranks_sorted
    return SignedRanks(ranks=ranks, values=kept, ell_eff=n)


def wsr_moments(ell: int):
    """Null mean and variance of either signed rank sum for ``ell`` values."""
    mean = (ell * ell + ell) / 4.0
    var = (ell * ell + ell) * (2 * ell + 1) / 24.0
    return mean, var


def _window_values(window) -> np.ndarray:
    if isinstance(window, WindowBuffer):
        if not window.full:
            raise InvalidParameter("monitor window is not full yet")
        return window.values()
    return np.asarray(window, dtype=float).ravel()


@dataclass
class WsrOutcome:
    w_plus: float
    w_minus: float
    ell_eff: int
    z: float
    p: float
    alarm: bool
    small_sample: bool = False


def wsr_test(window, alpha_des: float) -> WsrOutcome:
    """Signed-rank symmetry test over one full window.

    Computes the rank sums of positive and negative residuals, the z-score of
    the smaller sum against the null moments, and a two-sided p-value. Alarm
    when p < alpha_des.
    """
    _check_alpha(alpha_des)
    values = _window_values(window)
    sr = signed_ranks(values)
    w_plus = float(sr.ranks[sr.values > 0.0].sum())
    w_minus = float(sr.ranks[sr.values < 0.0].sum())
    ell = sr.ell_eff
    small = ell < WSR_MIN_EFFECTIVE
    if small:
        warnings.warn(
            f"signed-rank window has only {ell} nonzero values; normal "
            "approximation is unreliable below "
            f"{WSR_MIN_EFFECTIVE}",
            SmallSampleWarning,
            stacklevel=2,
        )
    mean, var = wsr_moments(ell)
    w_min = w_plus if w_plus <= w_minus else w_minus
    z = (w_min - mean) / math.sqrt(var)
    p = two_sided_p(z)
    return WsrOutcome(
        w_plus=w_plus,
        w_minus=w_minus,
        ell_eff=ell,
        z=z,
        p=p,
        alarm=p < alpha_des,
        small_sample=small,
    )


def wsr_bounds(ell: int, alpha_des: float):
    """Alarm-free interval for either rank sum at the given false-alarm rate.

    The test alarms exactly when min/max of the rank sums leave
    [omega_minus, omega_plus]; equivalent to the p-value rule.
    """
    if ell < 1:
        raise InvalidParameter(f"window length must be >= 1, got {ell}")
    _check_alpha(alpha_des)
    mean, var = wsr_moments(ell)
    half = abs(std_normal_quantile(alpha_des / 2.0)) * math.sqrt(var)
    return mean - half, mean + half


def runs_moments(n_obs: int):
    """Null mean and variance of the runs count for ``n_obs`` observations.

    The classical runs-up-and-down moments are parameterized by the number of
    observations; a sign sequence of M differences spans M + 1 observations.
    """
    mean = (2 * n_obs - 1) / 3.0
    var = (16 * n_obs - 29) / 90.0
    return mean, var


@dataclass
class SirOutcome:
    n_runs: int
    ell_prime_eff: int
    z: float
    p: float
    alarm: bool
    tie_alarm: bool
    small_sample: bool = False


def count_runs(signs) -> int:
    """Number of maximal same-sign blocks: 1 + adjacent sign changes."""
    signs = np.asarray(signs)
    if signs.size == 0:
        return 0
    return 1 + int(np.count_nonzero(signs[1:] != signs[:-1]))


def sir_test(window, alpha_des: float) -> SirOutcome:
    """Serial-independence runs test on the signs of residual differences.

    Differences that are exactly zero are dropped and flag ``tie_alarm``
    (two equal consecutive residuals have probability zero under clean
    continuous noise, so an exact tie is itself an alarm). The remaining sign
    sequence is tested for too few or too many runs. Alarm when p < alpha_des
    or a tie was seen.
    """
    _check_alpha(alpha_des)
    values = _window_values(window)
    d = np.diff(values)
    nonzero = d != 0.0
    tie_alarm = bool(np.any(~nonzero))
    d = d[nonzero]
    m = d.size
    if m < 2:
        raise DegenerateWindow(
            f"only {m} nonzero residual differences remain; need at least 2"
        )
    small = m < SIR_MIN_DIFFERENCES
    if small:
        warnings.warn(
            f"runs window has only {m} nonzero differences; normal "
            f"approximation is unreliable below {SIR_MIN_DIFFERENCES}",
            SmallSampleWarning,
            stacklevel=2,
        )
    n_runs = count_runs(np.sign(d))
    mean, var = runs_moments(m + 1)
    z = (n_runs - mean) / math.sqrt(var)
    p = two_sided_p(z)
    return SirOutcome(
        n_runs=n_runs,
        ell_prime_eff=m,
        z=z,
        p=p,
        alarm=(p < alpha_des) or tie_alarm,
        tie_alarm=tie_alarm,
        small_sample=small,
    )


def sir_bounds(ell_prime: int, alpha_des: float):
    """Alarm-free interval for the runs count given ``ell_prime`` differences."""
    if ell_prime < 2:
        raise InvalidParameter(f"need at least 2 differences, got {ell_prime}")
    _check_alpha(alpha_des)
    mean, var = runs_moments(ell_prime + 1)
    half = abs(std_normal_quantile(alpha_des / 2.0)) * math.sqrt(var)
    return mean - half, mean + half


def _check_alpha(alpha_des: float) -> None:
    if not 0.0 < alpha_des <= 1.0:
        raise DomainError(f"alpha_des must lie in (0, 1], got {alpha_des!r}")


class AlarmRateTracker:
    """Sliding alarm-rate ring with a compromised-sensor threshold.

    The observed rate is the fraction of alarms over the last ``window``
    verdicts; once the ring is full, a rate above ``alpha_tau`` marks the
    sensor compromised.
    """

    def __init__(self, window: int, alpha_tau: float, alpha_des: float | None = None):
        if window < 1:
            raise InvalidParameter(f"rate window must be >= 1, got {window}")
        if not 0.0 < alpha_tau <= 1.0:
            raise InvalidParameter(f"alpha_tau must lie in (0, 1], got {alpha_tau}")
        self.window = int(window)
        self.alpha_tau = float(alpha_tau)
        self.alpha_des = alpha_des
        self._ring = deque(maxlen=self.window)
        self._true_count = 0

    def update(self, alarm: bool) -> float:
        """Push one verdict and return the current rate."""
        alarm = bool(alarm)
        if len(self._ring) == self.window:
            self._true_count -= self._ring[0]
        self._ring.append(alarm)
        self._true_count += alarm
        return self.rate

    @property
    def rate(self) -> float:
        if not self._ring:
            return 0.0
        return self._true_count / len(self._ring)

    @property
    def full(self) -> bool:
        return len(self._ring) == self.window

    @property
    def compromised(self) -> bool:
        return self.full and self.rate > self.alpha_tau
