"""Discrete diffusion time grid and variance schedule.

The schedule owns the cumulative signal coefficients alpha_t over T sampling
timesteps (alpha_0 = 1, strictly decreasing) and the derived per-step noise
scales sigma_t.  Diffusion time t runs T -> 0 during sampling, so "early"
means large t.  Timestep profiles are built on an internal fine grid and
subsampled to T steps.
"""

from __future__ import annotations

import dataclasses

import numpy as np

PROFILES = ("linear-beta", "cosine")

_FINE_STEPS = 1000
_BETA_START = 1e-4
_BETA_END = 2e-2


@dataclasses.dataclass(frozen=True)
class Schedule:
    """Variance schedule over T discrete sampling timesteps.

    Attributes:
        T: number of sampling timesteps.
        alphas: length T+1, cumulative signal coefficients; alphas[0] == 1.
        eta: stochasticity knob in [0, 1].
        sigmas: length T; sigmas[t-1] is sigma_t.
    """

    T: int
    alphas: np.ndarray
    eta: float
    sigmas: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if alphas.shape != (self.T + 1,):
            raise ValueError(f"alphas must have length T+1={self.T + 1}, got {alphas.shape}")
        if sigmas.shape != (self.T,):
            raise ValueError(f"sigmas must have length T={self.T}, got {sigmas.shape}")
        if alphas[0] != 1.0:
            raise ValueError("alphas[0] must be exactly 1")
        if np.any(np.diff(alphas) >= 0):
            raise ValueError("alphas must be strictly decreasing")
        if alphas[-1] <= 0.0:
            raise ValueError("alpha_T must be positive")
        if np.any(sigmas < 0):
            raise ValueError("sigmas must be nonnegative")
        # D_t coefficient must stay real: 1 - alpha_{t-1} - sigma_t^2 >= 0.
        slack = 1.0 - alphas[:-1] - sigmas**2
        if np.any(slack < -1e-12):
            raise ValueError("sigma_t^2 exceeds 1 - alpha_{t-1}")
        alphas.setflags(write=False)
        sigmas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "sigmas", sigmas)

    def alpha(self, t: int) -> float:
        return float(self.alphas[t])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[t - 1])

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "eta": self.eta,
            "alphas": self.alphas.tolist(),
            "sigmas": self.sigmas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(
            T=int(d["T"]),
            alphas=np.asarray(d["alphas"], dtype=np.float64),
            eta=float(d["eta"]),
            sigmas=np.asarray(d["sigmas"], dtype=np.float64),
        )


def _fine_alpha_bar(profile: str) -> np.ndarray:
    """Cumulative signal coefficients on the internal fine grid (length _FINE_STEPS)."""
    if profile == "linear-beta":
        betas = np.linspace(_BETA_START, _BETA_END, _FINE_STEPS)
        return np.cumprod(1.0 - betas)
    if profile == "cosine":
        s = 0.008
        steps = np.arange(1, _FINE_STEPS + 1, dtype=np.float64)
        f = np.cos((steps / _FINE_STEPS + s) / (1.0 + s) * np.pi / 2.0) ** 2
        f0 = np.cos(s / (1.0 + s) * np.pi / 2.0) ** 2
        return f / f0
    raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def build_schedule(T: int, profile: str = "linear-beta", eta: float = 0.0) -> Schedule:
    """Build a Schedule by subsampling the fine-grid profile to T timesteps.

    Args:
        T: number of sampling timesteps, >= 2.
        profile: "linear-beta" or "cosine".
        eta: stochasticity in [0, 1]; eta=0 gives all-zero sigmas, eta=1
            recovers the DDPM posterior standard deviation.

    Raises:
        ValueError: on T < 2, eta outside [0, 1], an unknown profile, or a
            profile producing a degenerate (non-decreasing or nonpositive) grid.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta!r}")
    abar = _fine_alpha_bar(profile)
    if T <= _FINE_STEPS:
        idx = np.round(np.linspace(0, _FINE_STEPS - 1, T)).astype(int)
        picked = abar[idx]
    else:
        # finer than the internal grid: interpolate the same cumulative
        # curve (log-linearly, keeping it positive and strictly decreasing)
        # so the total noise budget does not depend on T
        pos = np.linspace(0.0, _FINE_STEPS - 1.0, T)
        picked = np.exp(np.interp(pos, np.arange(_FINE_STEPS), np.log(abar)))
    alphas = np.concatenate(([1.0], picked))

    a_t = alphas[1:]
    a_prev = alphas[:-1]
    sigmas = eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev)
    return Schedule(T=T, alphas=alphas, eta=float(eta), sigmas=sigmas)
