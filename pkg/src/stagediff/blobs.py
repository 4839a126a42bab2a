"""Procedural two-attribute blob benchmark.

Single-channel grids containing one Gaussian bump whose position (left or
right) is the identity class and whose amplitude (dim or bright) is the
editable attribute.  Each instance carries its own jitter, a smooth low-
amplitude background, the bump mask (the edit region), and a counterfactual
rendering of the same instance with the other amplitude, which serves as the
edit's ground-truth reference.  Generation is deterministic from a seed.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .denoiser import LatentCode
from .promptmix import PromptEmbedding, embed_text

SIDES = ("left", "right")
INTENSITIES = ("dim", "bright")
AMPLITUDES = {"dim": 0.6, "bright": 1.2}
LABELS = tuple(f"{s}-{i}" for s in SIDES for i in INTENSITIES)

_SIGMA_FRACTION = 0.14
_MASK_LEVEL = 0.35
_BACKGROUND_SCALE = 0.1
_COARSE = 4


def prompt_for(label: str) -> str:
    side, intensity = split_label(label)
    return f"blob {side} {intensity}"


def split_label(label: str):
    parts = label.split("-")
    if len(parts) != 2 or parts[0] not in SIDES or parts[1] not in INTENSITIES:
        raise ValueError(f"unknown blob label {label!r}; expected one of {LABELS}")
    return parts[0], parts[1]


def flip_intensity(label: str) -> str:
    side, intensity = split_label(label)
    other = "bright" if intensity == "dim" else "dim"
    return f"{side}-{other}"


@dataclasses.dataclass(frozen=True)
class BlobSample:
    """One instance: its image, the other-amplitude rendering of the same
    geometry (alt_image), and the bump mask marking the edit region."""

    label: str
    image: np.ndarray  # (1, H, W)
    alt_image: np.ndarray  # same instance, other amplitude
    mask: np.ndarray  # (H, W) bool, True on the bump

    def __post_init__(self):
        split_label(self.label)
        for name in ("image", "alt_image"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        mask = np.asarray(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def alt_label(self) -> str:
        return flip_intensity(self.label)

    @property
    def prompt(self) -> str:
        return prompt_for(self.label)

    def latent(self) -> LatentCode:
        return LatentCode(data=self.image, timestep=0)

    def alt_latent(self) -> LatentCode:
        return LatentCode(data=self.alt_image, timestep=0)


def _bilinear_upsample(coarse: np.ndarray, size: int) -> np.ndarray:
    ch, cw = coarse.shape
    xs = np.linspace(0.0, cw - 1.0, size)
    ys = np.linspace(0.0, ch - 1.0, size)
    rows = np.stack([np.interp(xs, np.arange(cw), row) for row in coarse])
    return np.stack([np.interp(ys, np.arange(ch), col) for col in rows.T]).T


def _bump(size: int, cy: float, cx: float) -> np.ndarray:
    sigma = _SIGMA_FRACTION * size
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def make_sample(label: str, size: int, rng: np.random.Generator) -> BlobSample:
    """Render one jittered instance of `label` plus its other-amplitude twin.

    Both renderings share center jitter, amplitude jitter factor, and
    background, so they differ only through the amplitude constant.
    """
    side, intensity = split_label(label)
    cx = (0.3 if side == "left" else 0.7) * size + rng.uniform(-1.0, 1.0)
    cy = 0.5 * size + rng.uniform(-1.0, 1.0)
    jitter = 1.0 + 0.05 * rng.uniform(-1.0, 1.0)
    coarse = rng.standard_normal((_COARSE, _COARSE))
    background = _BACKGROUND_SCALE * _bilinear_upsample(coarse, size)
    bump = _bump(size, cy, cx)
    image = (background + AMPLITUDES[intensity] * jitter * bump)[None, :, :]
    alt = flip_intensity(label).split("-")[1]
    alt_image = (background + AMPLITUDES[alt] * jitter * bump)[None, :, :]
    return BlobSample(label=label, image=image, alt_image=alt_image, mask=bump > _MASK_LEVEL)


def make_dataset(n_per_class: int, size: int = 16, seed: int = 0):
    """Deterministic list of samples, n per class, classes in LABELS order."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class!r}")
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size!r}")
    samples = []
    for label in LABELS:
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, hash_label(label), i])
            samples.append(make_sample(label, size, rng))
    return samples


def hash_label(label: str) -> int:
    # stable small integer per class for seed derivation
    return LABELS.index(label)


def single_sample(label: str, index: int, size: int = 16, seed: int = 0) -> BlobSample:
    """The instance `make_dataset` would place at (label, index)."""
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index!r}")
    rng = np.random.default_rng([seed, hash_label(label), index])
    return make_sample(label, size, rng)


def condition_table(embed_dim: int = 16, embed_seed: int = 0) -> dict:
    """label -> prompt embedding for all four classes."""
    return {lbl: embed_text(prompt_for(lbl), dim=embed_dim, seed=embed_seed) for lbl in LABELS}


def graded_training_set(n_per_cell: int, levels: int = 5, size: int = 16, seed: int = 0,
                        embed_dim: int = 16, embed_seed: int = 0):
    """(label, latent) pairs plus condition table covering the dim-bright
    intensity continuum on both sides.

    Levels interpolate the bump amplitude linearly between the dim and
    bright constants, and each interpolated level's condition is the same
    convex mix of the dim and bright prompt embeddings, so a denoiser
    trained on this set responds smoothly to mixed conditions instead of
    snapping to the nearest pure class.  Level 0 and the last level carry
    the canonical class labels; interior levels get side-mix-<k> labels.
    """
    from .promptmix import mix

    if n_per_cell < 1:
        raise ValueError(f"n_per_cell must be >= 1, got {n_per_cell!r}")
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels!r}")
    table = condition_table(embed_dim, embed_seed)
    lo, hi = AMPLITUDES["dim"], AMPLITUDES["bright"]
    pairs = []
    out_table = dict(table)
    for s_idx, side in enumerate(SIDES):
        e_dim, e_bright = table[f"{side}-dim"], table[f"{side}-bright"]
        for lv in range(levels):
            lam = lv / (levels - 1)
            if lv == 0:
                label = f"{side}-dim"
            elif lv == levels - 1:
                label = f"{side}-bright"
            else:
                label = f"{side}-mix-{lv}"
                out_table[label] = mix(e_dim, e_bright, lam)
            amp = (1.0 - lam) * lo + lam * hi
            for i in range(n_per_cell):
                rng = np.random.default_rng([seed, 16 + s_idx, lv, i])
                cx = (0.3 if side == "left" else 0.7) * size + rng.uniform(-1.0, 1.0)
                cy = 0.5 * size + rng.uniform(-1.0, 1.0)
                jitter = 1.0 + 0.05 * rng.uniform(-1.0, 1.0)
                coarse = rng.standard_normal((_COARSE, _COARSE))
                background = _BACKGROUND_SCALE * _bilinear_upsample(coarse, size)
                image = (background + amp * jitter * _bump(size, cy, cx))[None, :, :]
                pairs.append((label, LatentCode(data=image, timestep=0)))
    return pairs, out_table


def training_pairs(samples):
    """(label, clean latent) pairs as the trainer expects."""
    return [(s.label, s.latent()) for s in samples]


def class_mean_images(samples) -> dict:
    """label -> mean image over that label's samples."""
    sums: dict = {}
    counts: dict = {}
    for s in samples:
        if s.label not in sums:
            sums[s.label] = np.zeros_like(s.image)
            counts[s.label] = 0
        sums[s.label] = sums[s.label] + s.image
        counts[s.label] += 1
    return {lbl: sums[lbl] / counts[lbl] for lbl in sums}


def save_dataset(samples, path) -> None:
    labels = np.array([s.label for s in samples])
    np.savez_compressed(
        path,
        labels=labels,
        images=np.stack([s.image for s in samples]),
        alt_images=np.stack([s.alt_image for s in samples]),
        masks=np.stack([s.mask for s in samples]),
    )


def load_dataset(path):
    with np.load(path, allow_pickle=False) as data:
        labels = [str(v) for v in data["labels"]]
        images = data["images"]
        alt_images = data["alt_images"]
        masks = data["masks"]
    return [
        BlobSample(label=lbl, image=img, alt_image=alt, mask=msk)
        for lbl, img, alt, msk in zip(labels, images, alt_images, masks)
    ]
