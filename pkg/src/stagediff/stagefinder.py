"""Editing/boosting stage discernment and spectral mixing-weight init.

A deterministic pilot run under the source prompt yields two per-timestep
traces: the high-frequency energy ratio of the decoded latents and the
gradient magnitude of the predicted noises.  The editing stage is the
contiguous run of high-frequency steps at the start of sampling (large t,
above the 75% quantile); the boosting stage is the contiguous run of
low-gradient steps at the end (small t, below the 25% quantile).  The same
frequency trace, min-max normalized over the editing window, initializes the
per-step mixing weights.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .denoiser import decode


@dataclasses.dataclass(frozen=True)
class StagePlan:
    """Discerned t_edit / t_boost plus the traces that produced them.

    Editing stage: t in [t_edit, T] (sampling runs T down to 1).  Boosting:
    noise injection for t < t_boost.  Fallback flags record when a window was
    empty and fixed-fraction defaults were substituted.
    """

    t_edit: int
    t_boost: int
    freq_trace: np.ndarray  # length T, entry [t-1] belongs to timestep t
    grad_trace: np.ndarray
    freq_quantile: float = 0.75
    grad_quantile: float = 0.25
    freq_fallback: bool = False
    grad_fallback: bool = False

    def __post_init__(self):
        freq = np.asarray(self.freq_trace, dtype=np.float64)
        grad = np.asarray(self.grad_trace, dtype=np.float64)
        if freq.ndim != 1 or grad.shape != freq.shape:
            raise ValueError("traces must be equal-length vectors")
        for name, tr in (("freq_trace", freq), ("grad_trace", grad)):
            if not np.all(np.isfinite(tr)) or np.any(tr < 0):
                raise ValueError(f"{name} entries must be finite and >= 0")
        T = freq.shape[0]
        if not 0 <= self.t_boost <= self.t_edit <= T:
            raise ValueError(
                f"need 0 <= t_boost <= t_edit <= T, got ({self.t_boost}, {self.t_edit}, {T})"
            )
        for name in ("freq_quantile", "grad_quantile"):
            q = getattr(self, name)
            if not 0.0 < q < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {q!r}")
        freq.setflags(write=False)
        grad.setflags(write=False)
        object.__setattr__(self, "freq_trace", freq)
        object.__setattr__(self, "grad_trace", grad)
        object.__setattr__(self, "t_edit", int(self.t_edit))
        object.__setattr__(self, "t_boost", int(self.t_boost))

    @property
    def T(self) -> int:
        return self.freq_trace.shape[0]

    def to_dict(self) -> dict:
        return {
            "t_edit": self.t_edit,
            "t_boost": self.t_boost,
            "freq_trace": self.freq_trace.tolist(),
            "grad_trace": self.grad_trace.tolist(),
            "freq_quantile": self.freq_quantile,
            "grad_quantile": self.grad_quantile,
            "freq_fallback": self.freq_fallback,
            "grad_fallback": self.grad_fallback,
        }


@dataclasses.dataclass(frozen=True)
class LambdaInit:
    """Per-timestep mixing weights in [0, 1]: normalized spectral energy
    inside the editing window, the fixed lambda_prime outside it."""

    values: np.ndarray
    lambda_prime: float = 0.2
    t_edit: int = 0
    degenerate: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("lambda values must be a vector")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("lambda values must lie in [0, 1]")
        if not 0.0 <= self.lambda_prime <= 1.0:
            raise ValueError(f"lambda_prime must lie in [0, 1], got {self.lambda_prime!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]


def high_freq_energy(image, radius_fraction: float = 0.25) -> float:
    """Fraction of 2-D spectral energy beyond radius_fraction of Nyquist.

    Per channel: FFT the frame, measure radius in Nyquist-normalized units
    (so the axis edge is 1), and take energy(r > radius_fraction) / total
    energy.  Channel values are averaged.  Scale-invariant by construction;
    an all-zero image is defined as 0.
    """
    if not 0.0 < radius_fraction < 1.0:
        raise ValueError(f"radius_fraction must lie in (0, 1), got {radius_fraction!r}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None, :, :]
    if img.ndim != 3:
        raise ValueError(f"image must be (H, W) or (C, H, W), got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite entries")
    _, H, W = img.shape
    fu = np.fft.fftfreq(H) * 2.0  # per-axis frequency over Nyquist
    fv = np.fft.fftfreq(W) * 2.0
    r = np.sqrt(fu[:, None] ** 2 + fv[None, :] ** 2)
    mask = r > radius_fraction
    ratios = []
    for ch in img:
        energy = np.abs(np.fft.fft2(ch)) ** 2
        total = energy.sum()
        ratios.append(0.0 if total == 0.0 else float(energy[mask].sum() / total))
    return float(np.mean(ratios))


def noise_gradient_trace(trajectory, metric: str = "temporal") -> np.ndarray:
    """Per-timestep gradient magnitude of the predicted noises.

    temporal: g_t = ||eps_t - eps_{t+1}||_2 / n_elements, the step-to-step
    change of the predictor; the t = T entry copies its neighbor so the trace
    has T entries.  spatial: mean absolute within-frame finite difference of
    eps_t along both image axes, no neighbor copy needed.
    """
    if hasattr(trajectory, "eps_at"):
        T = trajectory.T
        eps_list = [np.asarray(trajectory.eps_at(t), dtype=np.float64) for t in range(1, T + 1)]
    else:
        eps_list = [np.asarray(e, dtype=np.float64) for e in trajectory]
        T = len(eps_list)
    if T < 2:
        raise ValueError("gradient trace needs at least 2 steps")
    if metric == "temporal":
        trace = np.empty(T)
        for t in range(1, T):
            diff = eps_list[t - 1] - eps_list[t]
            trace[t - 1] = np.linalg.norm(diff.ravel()) / diff.size
        trace[T - 1] = trace[T - 2]
    elif metric == "spatial":
        trace = np.empty(T)
        for t in range(1, T + 1):
            e = eps_list[t - 1]
            dh = np.abs(np.diff(e, axis=-2)).mean() if e.shape[-2] > 1 else 0.0
            dw = np.abs(np.diff(e, axis=-1)).mean() if e.shape[-1] > 1 else 0.0
            trace[t - 1] = 0.5 * (dh + dw)
    else:
        raise ValueError(f"unknown gradient metric {metric!r}")
    return trace


def _suffix_run_start(trace: np.ndarray, threshold: float) -> int:
    """Smallest t such that trace[t..T] all >= threshold; 0 when even t=T fails."""
    T = trace.shape[0]
    t = T
    while t >= 1 and trace[t - 1] >= threshold:
        t -= 1
    start = t + 1
    return 0 if start > T else start


def _prefix_run_end(trace: np.ndarray, threshold: float) -> int:
    """Largest b such that trace[1..b] all <= threshold; 0 when even t=1 fails."""
    T = trace.shape[0]
    b = 0
    while b < T and trace[b] <= threshold:
        b += 1
    return b


def discern_from_traces(
    freq_trace,
    grad_trace,
    freq_quantile: float = 0.75,
    grad_quantile: float = 0.25,
) -> StagePlan:
    """Core discernment rule on already-computed traces.

    t_edit: start of the contiguous run of steps [t_edit, T] whose frequency
    stays at or above the freq_quantile of the whole trace.  t_boost: one
    past the contiguous run [1, b] of gradients at or below the
    grad_quantile, so noise fires exactly on that low-gradient run.  An empty
    run falls back to a fixed fraction of T (0.6 and 0.4 respectively) and is
    flagged.  t_boost is clamped to t_edit so the stages cannot overlap.
    """
    freq = np.asarray(freq_trace, dtype=np.float64)
    grad = np.asarray(grad_trace, dtype=np.float64)
    if freq.ndim != 1 or grad.shape != freq.shape:
        raise ValueError("traces must be equal-length vectors")
    T = freq.shape[0]
    if T < 2:
        raise ValueError("traces need at least 2 steps")

    freq_thresh = float(np.quantile(freq, freq_quantile))
    grad_thresh = float(np.quantile(grad, grad_quantile))

    t_edit = _suffix_run_start(freq, freq_thresh)
    freq_fallback = t_edit == 0
    if freq_fallback:
        t_edit = int(round(0.6 * T))

    b = _prefix_run_end(grad, grad_thresh)
    grad_fallback = b == 0
    t_boost = int(round(0.4 * T)) if grad_fallback else b + 1

    t_boost = min(t_boost, t_edit)
    return StagePlan(
        t_edit=t_edit,
        t_boost=t_boost,
        freq_trace=freq,
        grad_trace=grad,
        freq_quantile=freq_quantile,
        grad_quantile=grad_quantile,
        freq_fallback=freq_fallback,
        grad_fallback=grad_fallback,
    )


def discern_stages(
    pilot,
    freq_quantile: float = 0.75,
    grad_quantile: float = 0.25,
    radius_fraction: float = 0.25,
    decoder=None,
    grad_metric: str = "temporal",
) -> StagePlan:
    """Build both traces from a deterministic pilot trajectory and discern.

    The frequency trace measures decode(z_t) for t = 1..T; the gradient trace
    measures the predicted noises.  See `discern_from_traces` for the rule.
    """
    freq = np.array(
        [
            high_freq_energy(decode(pilot.latent_at(t), decoder), radius_fraction)
            for t in range(1, pilot.T + 1)
        ]
    )
    grad = noise_gradient_trace(pilot, metric=grad_metric)
    return discern_from_traces(freq, grad, freq_quantile, grad_quantile)


def init_lambda(plan: StagePlan, lambda_prime: float = 0.2) -> LambdaInit:
    """Mixing-weight init: min-max normalized freq_trace inside the editing
    window [t_edit, T], lambda_prime exactly everywhere else.

    A constant trace inside the window has no range to normalize; all its
    weights become 1 and the result is flagged degenerate.
    """
    T = plan.T
    values = np.full(T, float(lambda_prime))
    window = plan.freq_trace[plan.t_edit - 1 :] if plan.t_edit >= 1 else plan.freq_trace
    lo, hi = float(window.min()), float(window.max())
    degenerate = hi - lo <= 0.0
    if degenerate:
        norm = np.ones_like(window)
    else:
        norm = (window - lo) / (hi - lo)
    start = plan.t_edit - 1 if plan.t_edit >= 1 else 0
    values[start:] = norm
    return LambdaInit(
        values=values, lambda_prime=float(lambda_prime), t_edit=plan.t_edit, degenerate=degenerate
    )
