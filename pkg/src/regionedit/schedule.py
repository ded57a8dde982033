"""Noise schedule and the decomposed reverse step.

``alpha_bar[t]`` is the cumulative product of ``1 - beta``; index 0 holds the
sentinel 1.0 so the final step needs no special case.  The reverse step is

    x_{t-1} = sqrt(ab[t-1]) * P_t(eps_p) + D_t(eps_d) + sigma_t * z

with ``P_t`` the predicted clean image and ``D_t`` the direction back toward
``x_t``.  Passing different noise estimates to the two channels is how an
h-space shift is applied to ``P_t`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Schedule:
    T: int
    alpha_bar: np.ndarray
    eta: float = 0.0
    betas: np.ndarray | None = None

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        if self.T < 1 or ab.shape != (self.T + 1,):
            raise ValueError(f"alpha_bar must have T+1={self.T + 1} entries, got {ab.shape}")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing within (0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    def with_eta(self, eta: float) -> "Schedule":
        return Schedule(self.T, self.alpha_bar, eta, self.betas)

    def check_t(self, t: int, lo: int = 1, hi: int | None = None):
        hi = self.T if hi is None else hi
        if not lo <= t <= hi:
            raise ValueError(f"timestep {t} outside [{lo}, {hi}]")


def make_linear_schedule(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02,
                         eta: float = 0.0) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return Schedule(T, alpha_bar, eta, betas)


def sigma_t(s: Schedule, t: int) -> float:
    s.check_t(t)
    if s.eta == 0.0:
        return 0.0
    a, a_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    return float(s.eta * np.sqrt((1.0 - a_prev) / (1.0 - a)) * np.sqrt(1.0 - a / a_prev))


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {np.shape(a)} vs {shape}")


def p_term(s: Schedule, t: int, x_t, eps) -> np.ndarray:
    """Predicted clean image ``(x_t - sqrt(1-ab) eps) / sqrt(ab)``."""
    _check_shapes(x_t, eps)
    s.check_t(t, lo=0)
    a = s.alpha_bar[t]
    return (np.asarray(x_t) - np.sqrt(1.0 - a) * np.asarray(eps)) / np.sqrt(a)


def d_coef(s: Schedule, t: int) -> float:
    sig = sigma_t(s, t)
    return float(np.sqrt(max(1.0 - s.alpha_bar[t - 1] - sig * sig, 0.0)))


def d_term(s: Schedule, t: int, eps) -> np.ndarray:
    return d_coef(s, t) * np.asarray(eps, dtype=np.float64)


@dataclass(frozen=True)
class StepOutput:
    x_prev: np.ndarray
    p_term: np.ndarray
    d_term: np.ndarray
    sigma: float = 0.0


def reverse_step(s: Schedule, t: int, x_t, eps_for_p, eps_for_d=None, z=None) -> StepOutput:
    if eps_for_d is None:
        eps_for_d = eps_for_p
    _check_shapes(x_t, eps_for_p, eps_for_d)
    p = p_term(s, t, x_t, eps_for_p)
    d = d_term(s, t, eps_for_d)
    sig = sigma_t(s, t)
    x_prev = np.sqrt(s.alpha_bar[t - 1]) * p + d
    if sig > 0.0:
        if z is None:
            raise ValueError("eta > 0 requires a noise sample z")
        _check_shapes(x_t, z)
        x_prev = x_prev + sig * np.asarray(z)
    return StepOutput(x_prev, p, d, sig)


def ddim_invert_step(s: Schedule, t: int, x_t, eps) -> np.ndarray:
    """Deterministic step ``x_t -> x_{t+1}`` (reverse of the eta=0 update)."""
    if s.eta != 0.0:
        raise ValueError("DDIM inversion is only defined for eta = 0")
    s.check_t(t, lo=0, hi=s.T - 1)
    _check_shapes(x_t, eps)
    return ddim_transfer(s.alpha_bar[t], s.alpha_bar[t + 1], x_t, eps)


def ddim_transfer(a_from: float, a_to: float, x, eps) -> np.ndarray:
    """Move ``x`` between noise levels ``a_from -> a_to`` holding ``eps`` fixed."""
    eps = np.asarray(eps, dtype=np.float64)
    x0 = (np.asarray(x) - np.sqrt(1.0 - a_from) * eps) / np.sqrt(a_from)
    return np.sqrt(a_to) * x0 + np.sqrt(1.0 - a_to) * eps
