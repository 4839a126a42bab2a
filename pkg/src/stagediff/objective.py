"""Directional and perceptual editing losses, and derivative-free tuning of
the mixing weights.

The directional loss compares the *change* of image embeddings against the
change of text embeddings in one shared space (one minus their cosine).  The
perceptual loss is a multi-scale L1 on feature pyramids.  Because the
sampler is not differentiable here, the per-step mixing weights are tuned by
simultaneous-perturbation stochastic approximation: two loss evaluations per
iteration estimate a descent direction over the editing-window entries only.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Protocol, runtime_checkable

import numpy as np

from .promptmix import PromptEmbedding
from .stagefinder import LambdaInit


class LambdaOptimizationError(RuntimeError):
    """A loss-closure failure during weight optimization, tagged with the
    iteration index (-1 for the initial evaluation)."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"loss evaluation failed at iteration {iteration}: {cause}")
        self.iteration = iteration


@runtime_checkable
class JointEncoder(Protocol):
    def encode_image(self, image: np.ndarray) -> np.ndarray: ...

    def encode_text(self, emb: PromptEmbedding) -> np.ndarray: ...


@runtime_checkable
class PerceptualNet(Protocol):
    def features(self, image: np.ndarray) -> list: ...


@dataclasses.dataclass(frozen=True)
class LossReport:
    dclip: float
    perc: float
    gamma_perc: float
    total: float

    def __post_init__(self):
        if not 0.0 <= self.dclip <= 2.0:
            raise ValueError(f"directional loss must lie in [0, 2], got {self.dclip!r}")
        if self.perc < 0.0:
            raise ValueError(f"perceptual loss must be >= 0, got {self.perc!r}")
        expected = self.dclip + self.gamma_perc * self.perc
        if self.total != expected:
            raise ValueError(f"total {self.total!r} != dclip + gamma*perc = {expected!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ToyJointEncoder:
    """Fixed seeded linear projections of flattened pixels and mean-pooled
    token rows into one shared vector space."""

    def __init__(self, image_shape, embed_dim: int, out_dim: int = 64, seed: int = 0):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.embed_dim = int(embed_dim)
        self.out_dim = int(out_dim)
        npix = int(np.prod(self.image_shape))
        rng = np.random.default_rng(seed)
        self._P_img = rng.standard_normal((out_dim, npix)) / np.sqrt(npix)
        self._P_txt = rng.standard_normal((out_dim, embed_dim)) / np.sqrt(embed_dim)
        self._P_img.setflags(write=False)
        self._P_txt.setflags(write=False)

    def encode_image(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.shape != self.image_shape:
            raise ValueError(f"image shape {img.shape} != encoder shape {self.image_shape}")
        return self._P_img @ img.ravel()

    def encode_text(self, emb: PromptEmbedding) -> np.ndarray:
        pooled = emb.pooled()
        if pooled.shape != (self.embed_dim,):
            raise ValueError(f"embedding dim {pooled.shape[0]} != encoder dim {self.embed_dim}")
        return self._P_txt @ pooled


class AlignedJointEncoder:
    """Joint encoder whose text side is calibrated onto the image side.

    The image projection is the fixed seeded map of ToyJointEncoder.  The
    text projection is the least-squares map sending each calibration
    prompt's pooled embedding to the image embedding of its class-mean
    image, the desk-scale stand-in for a contrastively aligned text/image
    encoder pair.  When the pooled calibration prompts are linearly
    independent the fit interpolates them exactly, and linearity carries
    convex prompt mixes onto the corresponding image-embedding segment.
    """

    def __init__(self, image_shape, embed_dim: int, pairs, out_dim: int = 64, seed: int = 0):
        if len(pairs) < 2:
            raise ValueError("need at least 2 calibration (prompt, image) pairs")
        self.image_shape = tuple(int(s) for s in image_shape)
        self.embed_dim = int(embed_dim)
        self.out_dim = int(out_dim)
        npix = int(np.prod(self.image_shape))
        rng = np.random.default_rng(seed)
        self._P_img = rng.standard_normal((out_dim, npix)) / np.sqrt(npix)
        self._P_img.setflags(write=False)
        pooled = np.stack([emb.pooled() for emb, _ in pairs])  # (k, embed_dim)
        targets = np.stack([self.encode_image(img) for _, img in pairs])  # (k, out_dim)
        coef, *_ = np.linalg.lstsq(pooled, targets, rcond=None)
        self._P_txt = coef.T  # (out_dim, embed_dim)
        self._P_txt.setflags(write=False)

    def encode_image(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.shape != self.image_shape:
            raise ValueError(f"image shape {img.shape} != encoder shape {self.image_shape}")
        return self._P_img @ img.ravel()

    def encode_text(self, emb: PromptEmbedding) -> np.ndarray:
        pooled = emb.pooled()
        if pooled.shape != (self.embed_dim,):
            raise ValueError(f"embedding dim {pooled.shape[0]} != encoder dim {self.embed_dim}")
        return self._P_txt @ pooled


class ToyPerceptualNet:
    """Three-scale feature pyramid: the image itself plus 2x and 4x
    box-downsampled copies."""

    scales = (1, 2, 4)

    def features(self, image) -> list:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[None, :, :]
        if img.ndim != 3:
            raise ValueError(f"image must be (H, W) or (C, H, W), got shape {img.shape}")
        out = []
        for s in self.scales:
            out.append(img if s == 1 else _box_downsample(img, s))
        return out


def _box_downsample(img: np.ndarray, s: int) -> np.ndarray:
    C, H, W = img.shape
    h, w = H // s, W // s
    if h < 1 or w < 1:
        return img.mean(axis=(1, 2), keepdims=True)
    trimmed = img[:, : h * s, : w * s]
    return trimmed.reshape(C, h, s, w, s).mean(axis=(2, 4))


def directional_loss(
    enc: JointEncoder,
    x_src,
    x_edit,
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    flags: Optional[dict] = None,
) -> float:
    """1 - cos(image-embedding change, text-embedding change), in [0, 2].

    A zero change on either side has no direction to compare; the loss is
    then 1 (orthogonal by convention) and, when a `flags` dict is supplied,
    flags["degenerate_delta"] is set.
    """
    delta_t = enc.encode_text(y_tgt) - enc.encode_text(y_src)
    delta_i = enc.encode_image(x_edit) - enc.encode_image(x_src)
    if delta_t.shape != delta_i.shape:
        raise ValueError(f"encoder output dims differ: {delta_i.shape} vs {delta_t.shape}")
    ni = np.linalg.norm(delta_i)
    nt = np.linalg.norm(delta_t)
    if ni == 0.0 or nt == 0.0:
        if flags is not None:
            flags["degenerate_delta"] = True
        return 1.0
    cos = float(delta_i @ delta_t / (ni * nt))
    return 1.0 - min(1.0, max(-1.0, cos))


def perceptual_loss(net: PerceptualNet, x_s, x_t) -> float:
    """Mean over pyramid scales of the mean absolute feature difference."""
    xs = np.asarray(x_s, dtype=np.float64)
    xt = np.asarray(x_t, dtype=np.float64)
    if xs.shape != xt.shape:
        raise ValueError(f"shape mismatch: {xs.shape} vs {xt.shape}")
    fs = net.features(xs)
    ft = net.features(xt)
    if len(fs) != len(ft) or len(fs) < 1:
        raise ValueError("feature pyramids disagree on scale count")
    per_scale = [float(np.mean(np.abs(a - b))) for a, b in zip(fs, ft)]
    return float(np.mean(per_scale))


def total_loss(dclip: float, perc: float, gamma_perc: float) -> LossReport:
    """Weighted combination total = dclip + gamma_perc * perc."""
    if gamma_perc < 0:
        raise ValueError(f"gamma_perc must be >= 0, got {gamma_perc!r}")
    return LossReport(
        dclip=float(dclip),
        perc=float(perc),
        gamma_perc=float(gamma_perc),
        total=float(dclip) + float(gamma_perc) * float(perc),
    )


def _replace_values(lam: LambdaInit, values: np.ndarray) -> LambdaInit:
    return LambdaInit(
        values=values,
        lambda_prime=lam.lambda_prime,
        t_edit=lam.t_edit,
        degenerate=lam.degenerate,
    )


def optimize_lambda(
    evaluate: Callable[[LambdaInit], LossReport],
    lambda0: LambdaInit,
    iterations: int = 3,
    step: float = 5e-2,
    rng_seed: int = 0,
):
    """Tune the editing-window mixing weights by SPSA.

    Per iteration: draw a Rademacher perturbation over the window entries,
    evaluate the loss at lambda +/- step*perturbation (clamped to [0, 1]),
    form the simultaneous-perturbation gradient estimate, and take a step,
    again clamped.  Entries outside the editing window are never touched.
    Returns the best-seen weights (never worse than lambda0) and the loss
    history: the initial loss, then the better probe loss per iteration.
    """
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations!r}")
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step!r}")
    rng = np.random.default_rng(rng_seed)
    T = lambda0.T
    lo = lambda0.t_edit - 1 if lambda0.t_edit >= 1 else 0
    window = slice(lo, T)
    n_window = T - lo

    def run(lam: LambdaInit, iteration: int) -> float:
        try:
            return float(evaluate(lam).total)
        except Exception as e:
            raise LambdaOptimizationError(iteration, e) from e

    best_lam = lambda0
    best_loss = run(lambda0, -1)
    history = [best_loss]
    current = np.array(lambda0.values)

    for i in range(iterations):
        delta = rng.choice([-1.0, 1.0], size=n_window)
        plus = current.copy()
        minus = current.copy()
        plus[window] = np.clip(plus[window] + step * delta, 0.0, 1.0)
        minus[window] = np.clip(minus[window] - step * delta, 0.0, 1.0)
        lam_plus = _replace_values(lambda0, plus)
        lam_minus = _replace_values(lambda0, minus)
        loss_plus = run(lam_plus, i)
        loss_minus = run(lam_minus, i)
        for lam, loss in ((lam_plus, loss_plus), (lam_minus, loss_minus)):
            if loss < best_loss:
                best_loss, best_lam = loss, lam
        ghat = (loss_plus - loss_minus) / (2.0 * step) * delta
        current[window] = np.clip(current[window] - step * ghat, 0.0, 1.0)
        history.append(min(loss_plus, loss_minus))

    if iterations > 0:
        lam_final = _replace_values(lambda0, current.copy())
        loss_final = run(lam_final, iterations)
        if loss_final < best_loss:
            best_loss, best_lam = loss_final, lam_final
    return best_lam, history
