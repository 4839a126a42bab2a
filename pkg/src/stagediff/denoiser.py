"""Noise-prediction backends and latent decoders.

Two backends sit behind one `predict(latent, t, cond)` interface: an exact
analytic predictor for Gaussian-mixture data distributions (the verification
oracle) and a small trainable conditional MLP.  Both are deterministic and
immutable once constructed.  Decoders map latents to pixel grids; the default
is the identity since latent and pixel space coincide at this scale.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from ._core import mixture_eps
from .promptmix import PromptEmbedding
from .schedule import Schedule


class TrainingDivergedError(RuntimeError):
    """Raised when the toy-denoiser loss goes non-finite."""


@dataclasses.dataclass(frozen=True)
class LatentCode:
    """A (C, H, W) real grid tagged with its diffusion timestep."""

    data: np.ndarray
    timestep: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"latent must be (C, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("latent contains non-finite entries")
        if not isinstance(self.timestep, (int, np.integer)) or self.timestep < 0:
            raise ValueError(f"timestep must be a nonnegative integer, got {self.timestep!r}")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestep", int(self.timestep))

    @property
    def shape(self):
        return self.data.shape


@runtime_checkable
class DenoiserBackend(Protocol):
    def predict(
        self, latent: LatentCode, t: int, cond: Optional[PromptEmbedding]
    ) -> np.ndarray: ...


@dataclasses.dataclass(frozen=True)
class GaussianMixtureWorld:
    """Data distribution sum_k w_k N(mu_k, v I) over flattened latents."""

    means: np.ndarray  # (K, D)
    weights: np.ndarray  # (K,)
    variance: float
    shape: tuple  # latent grid shape (C, H, W), prod = D

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64)
        shape = tuple(int(s) for s in self.shape)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ValueError("means must be a (K, D) array with K >= 1")
        if weights.shape != (means.shape[0],):
            raise ValueError(f"{weights.shape[0]} weights for {means.shape[0]} means")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-9")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance!r}")
        if int(np.prod(shape)) != means.shape[1]:
            raise ValueError(f"shape {shape} incompatible with mean dimension {means.shape[1]}")
        means = means.copy()
        weights = weights.copy()
        means.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "shape", shape)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def sample_x0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(self.K, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variance) * rng.standard_normal((n, self.D))


def analytic_epsilon(
    world: GaussianMixtureWorld, z: LatentCode, t: int, schedule: Schedule
) -> np.ndarray:
    """Closed-form noise prediction for the mixture world.

    The marginal of z_t is the mixture of N(sqrt(a_t) mu_k, s^2 I) with
    s^2 = a_t v + (1 - a_t), so eps = -sqrt(1 - a_t) * score(z_t) is exact
    up to floating point.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    if z.shape != world.shape:
        raise ValueError(f"latent shape {z.shape} does not match world shape {world.shape}")
    flat = z.data.reshape(1, world.D)
    log_w = np.log(world.weights)
    out = mixture_eps(flat, world.means, log_w, world.variance, schedule.alpha(t))
    return out.reshape(world.shape)


@dataclasses.dataclass(frozen=True)
class AnalyticBackend:
    """DenoiserBackend wrapping `analytic_epsilon`; the condition is ignored
    (the mixture world has no text modality), so guidance collapses to the
    unconditional prediction at every scale."""

    world: GaussianMixtureWorld
    schedule: Schedule

    def predict(self, latent, t, cond=None):
        return analytic_epsilon(self.world, latent, t, self.schedule)


_N_TIME_FEATURES = 7


def _time_features(t, T):
    """(..., 7) embedding of t/T: the ramp plus 3 sine/cosine harmonics."""
    tau = np.asarray(t, dtype=np.float64) / T
    cols = [tau]
    for k in (1, 2, 3):
        cols.append(np.sin(2.0 * np.pi * k * tau))
        cols.append(np.cos(2.0 * np.pi * k * tau))
    return np.stack(cols, axis=-1)


_PARAM_ORDER = ("W1", "b1", "Wc", "W2", "b2", "Wc2", "W3", "b3")


class ToyDenoiser:
    """Two-hidden-layer tanh MLP denoiser for (z_t, t, condition).

    The network regresses the rotated signal/noise combination whose
    coefficients swap roles across the noise range, and the noise
    prediction is recovered from it and the latent itself.  Near pure noise
    the prediction therefore degenerates to the latent (keeping the implied
    clean latent bounded), and near t=0 the implied clean latent
    degenerates to the latent (keeping reconstructions anchored); the
    regression head only steers the in-between.  The condition enters as
    learned projections of the mean-pooled embedding added to both hidden
    pre-activations; a None condition uses the zero vector, which is also
    the token dropped during training, so the same network serves both
    branches of classifier-free guidance.
    """

    def __init__(self, params: dict, latent_shape: tuple, T: int, embed_dim: int, alphas, meta=None):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        self.latent_shape = tuple(int(s) for s in latent_shape)
        self.T = int(T)
        self.embed_dim = int(embed_dim)
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.shape != (self.T + 1,):
            raise ValueError(f"alphas must have length T+1={self.T + 1}, got {alphas.shape}")
        alphas.setflags(write=False)
        self.alphas = alphas
        self.meta = dict(meta or {})

    @property
    def final_loss(self):
        return self.meta.get("loss")

    @classmethod
    def init(cls, latent_shape, T, embed_dim, hidden, rng, alphas):
        D = int(np.prod(latent_shape))
        n_in = D + _N_TIME_FEATURES

        def layer(n_out, n_inp):
            return rng.standard_normal((n_out, n_inp)) / np.sqrt(n_inp)

        params = {
            "W1": layer(hidden, n_in),
            "b1": np.zeros(hidden),
            "Wc": layer(hidden, embed_dim),
            "W2": layer(hidden, hidden),
            "b2": np.zeros(hidden),
            "Wc2": layer(hidden, embed_dim),
            "W3": layer(D, hidden),
            "b3": np.zeros(D),
        }
        return cls(params, latent_shape, T, embed_dim, alphas)

    def _forward(self, Z, C, t):
        # Z (B, D) latents, C (B, embed_dim) pooled conditions, t (B,) ints
        X = np.concatenate([Z, _time_features(t, self.T)], axis=1)
        p = self.params
        H1 = np.tanh(X @ p["W1"].T + C @ p["Wc"].T + p["b1"])
        H2 = np.tanh(H1 @ p["W2"].T + C @ p["Wc2"].T + p["b2"])
        v_hat = H2 @ p["W3"].T + p["b3"]
        ab = self.alphas[np.asarray(t)][:, None]
        out = np.sqrt(ab) * v_hat + np.sqrt(1.0 - ab) * Z
        return out, (X, C, H1, H2, ab)

    def predict(self, latent: LatentCode, t: int, cond=None) -> np.ndarray:
        if latent.shape != self.latent_shape:
            raise ValueError(f"latent shape {latent.shape} != trained shape {self.latent_shape}")
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        if cond is None:
            c = np.zeros((1, self.embed_dim))
        else:
            pooled = cond.pooled()
            if pooled.shape != (self.embed_dim,):
                raise ValueError(
                    f"condition dimension {pooled.shape[0]} != trained {self.embed_dim}"
                )
            c = pooled[None, :]
        Z = latent.data.reshape(1, -1)
        out, _ = self._forward(Z, c, np.array([t]))
        return out.reshape(self.latent_shape)

    def save(self, path) -> None:
        """Flat little-endian float64 blob plus a JSON sidecar describing it."""
        path = Path(path)
        flat = np.concatenate([self.params[k].ravel() for k in _PARAM_ORDER])
        flat.astype("<f8").tofile(path)
        sidecar = {
            "format": "stagediff-toy-denoiser-v1",
            "param_order": list(_PARAM_ORDER),
            "shapes": {k: list(self.params[k].shape) for k in _PARAM_ORDER},
            "latent_shape": list(self.latent_shape),
            "T": self.T,
            "embed_dim": self.embed_dim,
            "alphas": self.alphas.tolist(),
            "meta": self.meta,
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "ToyDenoiser":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        flat = np.fromfile(path, dtype="<f8")
        params = {}
        offset = 0
        for name in sidecar["param_order"]:
            shape = tuple(sidecar["shapes"][name])
            size = int(np.prod(shape))
            params[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        if offset != flat.size:
            raise ValueError(f"{path}: weight blob has {flat.size} values, expected {offset}")
        return cls(
            params,
            tuple(sidecar["latent_shape"]),
            sidecar["T"],
            sidecar["embed_dim"],
            sidecar["alphas"],
            meta=sidecar.get("meta"),
        )


def train_toy_denoiser(
    dataset,
    condition_table: dict,
    epochs: int,
    seed: int,
    schedule: Schedule,
    *,
    hidden: int = 128,
    lr: float = 3e-3,
    batch_size: int = 32,
    cond_dropout: float = 0.1,
) -> ToyDenoiser:
    """Train the toy MLP on (label, clean-latent) pairs by eps-prediction MSE.

    Each step draws t uniformly, noises the clean latents to z_t, and drops
    the condition with probability `cond_dropout` for classifier-free use.
    Bit-deterministic for a fixed seed; epochs = 0 returns the freshly
    initialized net untouched, with the loss of a single evaluation pass.
    """
    items = list(dataset)
    if not items:
        raise ValueError("dataset is empty")
    shapes = {lat.shape for _, lat in items}
    if len(shapes) != 1:
        raise ValueError(f"dataset latents disagree on shape: {sorted(shapes)}")
    for label, lat in items:
        if label not in condition_table:
            raise ValueError(f"label {label!r} missing from condition table")
        if lat.timestep != 0:
            raise ValueError(f"dataset latents must be at t=0, got t={lat.timestep}")
    latent_shape = items[0][1].shape
    D = int(np.prod(latent_shape))
    pooled = {lbl: emb.pooled() for lbl, emb in condition_table.items()}
    dims = {v.shape[0] for v in pooled.values()}
    if len(dims) != 1:
        raise ValueError(f"condition embeddings disagree on dimension: {sorted(dims)}")
    embed_dim = dims.pop()

    rng = np.random.default_rng(seed)
    net = ToyDenoiser.init(latent_shape, schedule.T, embed_dim, hidden, rng, schedule.alphas)
    params = {k: v.copy() for k, v in net.params.items()}
    X0 = np.stack([lat.data.reshape(D) for _, lat in items])
    C0 = np.stack([pooled[label] for label, _ in items])
    N = X0.shape[0]

    # Adam state
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v_ = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    adam_t = 0
    alphas = schedule.alphas

    last_epoch_loss = None
    for epoch in range(epochs):
        perm = rng.permutation(N)
        batch_losses = []
        for start in range(0, N, batch_size):
            idx = perm[start : start + batch_size]
            B = idx.shape[0]
            x0 = X0[idx]
            c = C0[idx].copy()
            t = rng.integers(1, schedule.T + 1, size=B)
            eps = rng.standard_normal((B, D))
            a = alphas[t][:, None]
            zt = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
            c[rng.random(B) < cond_dropout] = 0.0

            X = np.concatenate([zt, _time_features(t, schedule.T)], axis=1)
            H1 = np.tanh(X @ params["W1"].T + c @ params["Wc"].T + params["b1"])
            H2 = np.tanh(H1 @ params["W2"].T + c @ params["Wc2"].T + params["b2"])
            v_hat = H2 @ params["W3"].T + params["b3"]
            eps_hat = np.sqrt(a) * v_hat + np.sqrt(1.0 - a) * zt
            resid = eps_hat - eps
            loss = float(np.mean(resid**2))
            batch_losses.append(loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch start {start}: {loss!r}"
                )

            d_out = (2.0 * resid / resid.size) * np.sqrt(a)
            grads = {
                "W3": d_out.T @ H2,
                "b3": d_out.sum(axis=0),
            }
            d_h2 = (d_out @ params["W3"]) * (1.0 - H2**2)
            grads["W2"] = d_h2.T @ H1
            grads["b2"] = d_h2.sum(axis=0)
            grads["Wc2"] = d_h2.T @ c
            d_h1 = (d_h2 @ params["W2"]) * (1.0 - H1**2)
            grads["W1"] = d_h1.T @ X
            grads["b1"] = d_h1.sum(axis=0)
            grads["Wc"] = d_h1.T @ c

            adam_t += 1
            for k in params:
                m[k] = beta1 * m[k] + (1.0 - beta1) * grads[k]
                v_[k] = beta2 * v_[k] + (1.0 - beta2) * grads[k] ** 2
                m_hat = m[k] / (1.0 - beta1**adam_t)
                v_hat = v_[k] / (1.0 - beta2**adam_t)
                params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + adam_eps)
        last_epoch_loss = float(np.mean(batch_losses))

    if epochs == 0:
        # score the untrained net once so a loss is still reported
        t = rng.integers(1, schedule.T + 1, size=N)
        eps = rng.standard_normal((N, D))
        a = alphas[t][:, None]
        zt = np.sqrt(a) * X0 + np.sqrt(1.0 - a) * eps
        X = np.concatenate([zt, _time_features(t, schedule.T)], axis=1)
        H1 = np.tanh(X @ params["W1"].T + C0 @ params["Wc"].T + params["b1"])
        H2 = np.tanh(H1 @ params["W2"].T + C0 @ params["Wc2"].T + params["b2"])
        eps_hat = np.sqrt(a) * (H2 @ params["W3"].T + params["b3"]) + np.sqrt(1.0 - a) * zt
        last_epoch_loss = float(np.mean((eps_hat - eps) ** 2))

    meta = {
        "seed": int(seed),
        "epochs": int(epochs),
        "loss": last_epoch_loss,
        "lr": lr,
        "hidden": hidden,
        "batch_size": batch_size,
        "cond_dropout": cond_dropout,
        "n_train": N,
    }
    return ToyDenoiser(params, latent_shape, schedule.T, embed_dim, schedule.alphas, meta=meta)


class IdentityDecoder:
    """Latent space is pixel space: decode(z) = z."""

    scale = 1

    def __call__(self, z: LatentCode) -> np.ndarray:
        return np.asarray(z.data)


class UpsampleDecoder:
    """Fixed linear decoder: mean over channels, then s x s block replication
    to (1, sH, sW).  Linear, so constants map to constants."""

    def __init__(self, scale: int = 2):
        if not isinstance(scale, (int, np.integer)) or scale < 1:
            raise ValueError(f"scale must be a positive integer, got {scale!r}")
        self.scale = int(scale)

    def __call__(self, z: LatentCode) -> np.ndarray:
        mono = z.data.mean(axis=0)
        up = np.kron(mono, np.ones((self.scale, self.scale)))
        return up[None, :, :]


def decode(z: LatentCode, decoder=None) -> np.ndarray:
    """Map a latent to its pixel grid using `decoder` (default: identity)."""
    if decoder is None:
        decoder = IdentityDecoder()
    out = decoder(z)
    if not np.all(np.isfinite(out)):
        raise ValueError("decoded image contains non-finite entries")
    return out
