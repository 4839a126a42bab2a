"""DDIM reverse stepping, classifier-free guidance, and inversion.

The reverse step is kept in its three-term decomposition (predicted clean
latent, direction term, injected noise) so every step can be audited against
the reassembly identity.  Noise injection is gated per step by the boosting
indicator: stochastic only for t strictly below t_boost, with the sigma of
the schedule forced to zero elsewhere so one schedule serves both phases.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from .denoiser import DenoiserBackend, LatentCode
from .promptmix import PromptEmbedding
from .schedule import Schedule


class SamplerStepError(RuntimeError):
    """A backend or step failure, tagged with the offending timestep."""

    def __init__(self, t: int, phase: str, cause: BaseException):
        super().__init__(f"{phase} failed at timestep t={t}: {cause}")
        self.t = t
        self.phase = phase


@dataclasses.dataclass(frozen=True)
class StepOutput:
    """One reverse step, split exactly as the update reads:
    next = sqrt(alpha_prev) * predicted_x0 + direction_term + injected_noise."""

    t: int
    next_latent: LatentCode
    predicted_x0: np.ndarray
    direction_term: np.ndarray
    injected_noise: np.ndarray
    noise_on: bool

    def __post_init__(self):
        for name in ("predicted_x0", "direction_term", "injected_noise"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != self.next_latent.shape:
                raise ValueError(f"{name} shape {arr.shape} != latent shape {self.next_latent.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def forward_noise(x0: np.ndarray, eps: np.ndarray, schedule: Schedule, t: int) -> np.ndarray:
    """Forward map z_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps."""
    a = schedule.alpha(t)
    return np.sqrt(a) * np.asarray(x0) + np.sqrt(1.0 - a) * np.asarray(eps)


def ddim_step(
    z_t: LatentCode,
    eps: np.ndarray,
    schedule: Schedule,
    t: int,
    noise_on: bool,
    rng_seed,
) -> StepOutput:
    """One reverse step t -> t-1.

    With noise off the step is the deterministic rule (sigma treated as 0);
    with noise on, sigma_t from the schedule scales a standard-normal draw
    seeded by `rng_seed`.  No draw is made at all when the effective sigma is
    zero, so the injected-noise term is exactly the zero grid.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z_t.shape:
        raise ValueError(f"eps shape {eps.shape} != latent shape {z_t.shape}")
    if not np.all(np.isfinite(eps)):
        raise ValueError("eps contains non-finite entries")

    a_t = schedule.alpha(t)
    a_prev = schedule.alpha(t - 1)
    sigma = schedule.sigma(t) if noise_on else 0.0

    predicted_x0 = (z_t.data - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
    dir_coef_sq = 1.0 - a_prev - sigma**2
    direction_term = np.sqrt(max(dir_coef_sq, 0.0)) * eps
    if sigma > 0.0:
        rng = np.random.default_rng(rng_seed)
        injected_noise = sigma * rng.standard_normal(z_t.shape)
    else:
        injected_noise = np.zeros(z_t.shape)

    next_data = np.sqrt(a_prev) * predicted_x0 + direction_term + injected_noise
    return StepOutput(
        t=t,
        next_latent=LatentCode(data=next_data, timestep=t - 1),
        predicted_x0=predicted_x0,
        direction_term=direction_term,
        injected_noise=injected_noise,
        noise_on=bool(noise_on),
    )


def cfg_epsilon(
    backend: DenoiserBackend,
    z_t: LatentCode,
    t: int,
    cond: Optional[PromptEmbedding],
    scale: float,
) -> np.ndarray:
    """eps_uncond + scale * (eps_cond - eps_uncond).

    scale = 0 and scale = 1 return the unconditional and conditional
    predictions bit-exactly (no arithmetic applied).  A None condition always
    reduces to the unconditional prediction.
    """
    if scale < 0:
        raise ValueError(f"guidance scale must be >= 0, got {scale!r}")
    if cond is None or scale == 0.0:
        return backend.predict(z_t, t, None)
    e_cond = backend.predict(z_t, t, cond)
    if scale == 1.0:
        return e_cond
    e_uncond = backend.predict(z_t, t, None)
    return e_uncond + scale * (e_cond - e_uncond)


@dataclasses.dataclass(frozen=True)
class GuidedBackend:
    """Backend wrapper folding classifier-free guidance into predict, so the
    same guided predictor drives inversion, pilot, and edit passes."""

    backend: DenoiserBackend
    scale: float

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale!r}")

    def predict(self, latent, t, cond=None):
        return cfg_epsilon(self.backend, latent, t, cond, self.scale)


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """A full reverse run: z_T plus every StepOutput and predicted eps,
    ordered t = T down to 1."""

    z_start: LatentCode
    steps: tuple
    epsilons: tuple
    t_boost: int

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def final(self) -> LatentCode:
        return self.steps[-1].next_latent

    def latent_at(self, t: int) -> LatentCode:
        """z_t for t in [0, T]; T is the starting noise."""
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        if t == self.T:
            return self.z_start
        return self.steps[self.T - 1 - t].next_latent

    def eps_at(self, t: int) -> np.ndarray:
        """Predicted noise consumed by the step at timestep t, t in [1, T]."""
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return self.epsilons[self.T - t]


def sample(
    backend: DenoiserBackend,
    schedule: Schedule,
    cond_provider: Callable[[int], Optional[PromptEmbedding]],
    z_T: LatentCode,
    rng_seed: int,
    *,
    t_boost: int = 0,
) -> Trajectory:
    """Run the reverse process t = T..1 from z_T.

    Noise is injected iff t < t_boost (the boosting indicator); t_boost = 0
    is fully deterministic, t_boost = T + 1 injects at every step.  Per-step
    noise reseeds from (rng_seed, t) so trajectories are reproducible and
    steps are order-independent.
    """
    if not 0 <= t_boost <= schedule.T + 1:
        raise ValueError(f"t_boost {t_boost} outside [0, {schedule.T + 1}]")
    if z_T.timestep != schedule.T:
        raise ValueError(f"starting latent is at t={z_T.timestep}, schedule expects T={schedule.T}")
    z = z_T
    steps = []
    epsilons = []
    for t in range(schedule.T, 0, -1):
        cond = cond_provider(t)
        try:
            eps = backend.predict(z, t, cond)
        except Exception as e:
            raise SamplerStepError(t, "noise prediction", e) from e
        try:
            out = ddim_step(z, eps, schedule, t, t < t_boost, [rng_seed, t])
        except Exception as e:
            raise SamplerStepError(t, "reverse step", e) from e
        steps.append(out)
        epsilons.append(np.asarray(eps, dtype=np.float64))
        z = out.next_latent
    return Trajectory(z_start=z_T, steps=tuple(steps), epsilons=tuple(epsilons), t_boost=t_boost)


@dataclasses.dataclass(frozen=True)
class InversionResult:
    z_T: LatentCode
    epsilons: tuple  # predicted eps per forward step, ordered t = 1..T


def invert(
    backend: DenoiserBackend,
    schedule: Schedule,
    cond: Optional[PromptEmbedding],
    x_0: LatentCode,
) -> InversionResult:
    """Deterministic inversion: run the reverse-step recursion forward,
    t = 1..T, reusing the eps predicted at z_{t-1} for the t-1 -> t update.

    Only valid on a noise-free schedule; eta != 0 is rejected since the
    stochastic step has no inverse.
    """
    if schedule.eta != 0.0:
        raise ValueError(f"inversion requires an eta=0 schedule, got eta={schedule.eta}")
    if x_0.timestep != 0:
        raise ValueError(f"inversion starts from a clean latent at t=0, got t={x_0.timestep}")
    z = x_0
    epsilons = []
    for t in range(1, schedule.T + 1):
        try:
            eps = backend.predict(z, t, cond)
        except Exception as e:
            raise SamplerStepError(t, "inversion prediction", e) from e
        a_t = schedule.alpha(t)
        a_prev = schedule.alpha(t - 1)
        x0_implied = (z.data - np.sqrt(1.0 - a_prev) * eps) / np.sqrt(a_prev)
        z = LatentCode(
            data=np.sqrt(a_t) * x0_implied + np.sqrt(1.0 - a_t) * eps, timestep=t
        )
        epsilons.append(np.asarray(eps, dtype=np.float64))
    return InversionResult(z_T=z, epsilons=tuple(epsilons))
