"""Prompt embeddings, weighted mixing, and covariance-guided token weights.

Embeddings are token x dimension matrices standing in for text-encoder
outputs.  They come either from the built-in seeded hash tokenizer or from
files in a plain text format (see `save_embeddings`), so externally exported
real text-encoder matrices can be dropped in.

Mixing blends source and target matrices convexly per timestep; CovDiff
weights, derived from the difference of the two token-covariance matrices,
modulate per-token editing intensity during the editing stage.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np

PAD_TOKEN = "<pad>"

_DEGENERATE_EPS = 1e-300


@dataclasses.dataclass(frozen=True)
class PromptEmbedding:
    """Ordered token identifiers plus their (n_tokens, dim) embedding matrix."""

    tokens: tuple
    matrix: np.ndarray

    def __post_init__(self):
        tokens = tuple(str(t) for t in self.tokens)
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
        n, d = matrix.shape
        if n < 1 or d < 1:
            raise ValueError(f"need at least one token and one dimension, got {matrix.shape}")
        if len(tokens) != n:
            raise ValueError(f"{len(tokens)} tokens but {n} matrix rows")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("embedding matrix contains non-finite entries")
        matrix.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "matrix", matrix)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def pooled(self) -> np.ndarray:
        """Mean over token rows; the conditioning vector fed to denoisers."""
        return self.matrix.mean(axis=0)


@dataclasses.dataclass(frozen=True)
class CovDiffWeights:
    """Per-token weights in [0, 1]; all-zero exactly when the prompts are identical."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("CovDiff values must be a vector")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("CovDiff values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def degenerate(self) -> bool:
        return bool(self.values.max(initial=0.0) == 0.0)


def _token_seed(token: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def embed_text(text: str, dim: int = 16, seed: int = 0) -> PromptEmbedding:
    """Deterministic hash-to-vector tokenizer.

    Tokens are lowercased whitespace-split words; each token's row is drawn
    from a generator seeded by a stable hash of (seed, token), so the same
    string always yields the same matrix, across runs and platforms.
    """
    tokens = text.lower().split()
    if not tokens:
        raise ValueError("cannot embed an empty prompt")
    rows = np.empty((len(tokens), dim), dtype=np.float64)
    for i, tok in enumerate(tokens):
        rng = np.random.default_rng(_token_seed(tok, seed))
        rows[i] = rng.standard_normal(dim) / np.sqrt(dim)
    return PromptEmbedding(tokens=tuple(tokens), matrix=rows)


def save_embeddings(emb: PromptEmbedding, path) -> None:
    """Write the documented text format: header `tokens=<n> dims=<d>`, then
    one line per token: token-id followed by d decimal floats."""
    lines = [f"tokens={emb.n} dims={emb.dim}"]
    for tok, row in zip(emb.tokens, emb.matrix):
        if any(ch.isspace() for ch in tok):
            raise ValueError(f"token {tok!r} contains whitespace")
        lines.append(tok + " " + " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path) -> PromptEmbedding:
    """Read the embedding file format written by `save_embeddings`.

    Raises ValueError on a malformed header, a row-length mismatch, or
    non-finite entries.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty embedding file")
    header = lines[0].split()
    if len(header) != 2 or not header[0].startswith("tokens=") or not header[1].startswith("dims="):
        raise ValueError(f"{path}: malformed header {lines[0]!r}")
    try:
        n = int(header[0][len("tokens=") :])
        d = int(header[1][len("dims=") :])
    except ValueError as e:
        raise ValueError(f"{path}: malformed header {lines[0]!r}") from e
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: header promises {n} tokens, found {len(lines) - 1} rows")
    tokens = []
    rows = np.empty((n, d), dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != d + 1:
            raise ValueError(f"{path}: row {i} has {len(parts) - 1} values, expected {d}")
        tokens.append(parts[0])
        rows[i] = [float(v) for v in parts[1:]]
    if not np.all(np.isfinite(rows)):
        raise ValueError(f"{path}: non-finite entries")
    return PromptEmbedding(tokens=tuple(tokens), matrix=rows)


def pad_align(a: PromptEmbedding, b: PromptEmbedding):
    """Right-pad the shorter embedding with zero rows (reserved pad token) so
    both have max(n_a, n_b) rows.  Equal lengths are returned unchanged."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    n = max(a.n, b.n)

    def pad(e: PromptEmbedding) -> PromptEmbedding:
        if e.n == n:
            return e
        extra = n - e.n
        matrix = np.vstack([e.matrix, np.zeros((extra, e.dim))])
        return PromptEmbedding(tokens=e.tokens + (PAD_TOKEN,) * extra, matrix=matrix)

    return pad(a), pad(b)


def covariance(c: PromptEmbedding, centered: bool = False) -> np.ndarray:
    """Token covariance c c^T / (n - 1), uncentered as the mixing formula is
    written; `centered=True` subtracts the per-dimension token mean first."""
    if c.n < 2:
        raise ValueError("covariance needs at least 2 tokens")
    m = c.matrix
    if centered:
        m = m - m.mean(axis=0, keepdims=True)
    return m @ m.T / (c.n - 1)


def covdiff(src: PromptEmbedding, tgt: PromptEmbedding, centered: bool = False) -> CovDiffWeights:
    """Per-token weights from |Cov_tgt - Cov_src|: rowwise maximum (valid by
    symmetry), then min-max normalized to [0, 1].

    Identical inputs give the all-zero vector.  Positions whose token is the
    reserved pad token in *both* prompts are excluded from the normalization
    (they would pin the minimum) and receive weight 0.
    """
    if src.n != tgt.n or src.dim != tgt.dim:
        raise ValueError("covdiff expects pad-aligned embeddings")
    diff = np.abs(covariance(tgt, centered) - covariance(src, centered))
    raw = diff.max(axis=1)
    both_pad = np.array(
        [s == PAD_TOKEN and t == PAD_TOKEN for s, t in zip(src.tokens, tgt.tokens)]
    )
    live = ~both_pad
    values = np.zeros_like(raw)
    live_vals = raw[live]
    if live_vals.size:
        lo, hi = live_vals.min(), live_vals.max()
        if hi <= _DEGENERATE_EPS:
            pass  # identical prompts: Normalize(0) := 0
        elif hi - lo <= _DEGENERATE_EPS * hi:
            values[live] = 1.0
        else:
            values[live] = (live_vals - lo) / (hi - lo)
    return CovDiffWeights(values=np.clip(values, 0.0, 1.0))


def mix(src: PromptEmbedding, tgt: PromptEmbedding, lambda_t: float) -> PromptEmbedding:
    """Convex blend (1 - lambda_t) * src + lambda_t * tgt.

    lambda_t = 0 and 1 return src and tgt matrices bit-exactly.  The token
    list takes the target's token wherever it differs from the source's.
    """
    if src.n != tgt.n or src.dim != tgt.dim:
        raise ValueError("mix expects pad-aligned embeddings")
    if not 0.0 <= lambda_t <= 1.0:
        raise ValueError(f"lambda_t must lie in [0, 1], got {lambda_t!r}")
    tokens = tuple(t if t != s else s for s, t in zip(src.tokens, tgt.tokens))
    if lambda_t == 0.0:
        matrix = src.matrix.copy()
    elif lambda_t == 1.0:
        matrix = tgt.matrix.copy()
    else:
        matrix = (1.0 - lambda_t) * src.matrix + lambda_t * tgt.matrix
    return PromptEmbedding(tokens=tokens, matrix=matrix)


def guided_mix(
    src: PromptEmbedding,
    tgt: PromptEmbedding,
    lambda_t: float,
    cd: CovDiffWeights,
    t: int,
    t_edit: int,
    covdiff_floor: float = 0.1,
) -> PromptEmbedding:
    """Token-modulated mixing: during the editing stage (t >= t_edit in
    sampling time) each mixed row is scaled by its CovDiff weight, floored at
    `covdiff_floor` so no token is zeroed outright; outside the editing stage
    this is plain `mix`."""
    mixed = mix(src, tgt, lambda_t)
    if cd.values.shape[0] != mixed.n:
        raise ValueError(f"CovDiff length {cd.values.shape[0]} != token count {mixed.n}")
    if t < t_edit:
        return mixed
    scale = np.clip(cd.values, covdiff_floor, 1.0)
    return PromptEmbedding(tokens=mixed.tokens, matrix=scale[:, None] * mixed.matrix)


@dataclasses.dataclass(frozen=True)
class MixSchedule:
    """Per-timestep mixing weights plus the CovDiff token weights for one edit."""

    lambda_values: np.ndarray  # length T, indexed [t-1]
    lambda_prime: float
    covdiff: CovDiffWeights
    t_edit: int
    covdiff_floor: float = 0.1

    def __post_init__(self):
        values = np.asarray(self.lambda_values, dtype=np.float64)
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("lambda values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "lambda_values", values)

    @property
    def T(self) -> int:
        return self.lambda_values.shape[0]


def cond_provider(schedule: MixSchedule, src: PromptEmbedding, tgt: PromptEmbedding):
    """Per-step conditioning stream: t -> guided_mix(src, tgt, lambda_t, ...).

    Pure and memoized.  When the CovDiff weights are degenerate (identical
    prompts, all zeros) modulation is disabled so the edit cleanly reduces to
    reconstruction instead of conditioning on floored-to-0.1 embeddings.
    """
    if src.n != tgt.n or src.dim != tgt.dim:
        raise ValueError("cond_provider expects pad-aligned embeddings")
    modulate = not schedule.covdiff.degenerate
    cache: dict = {}

    def provider(t: int) -> PromptEmbedding:
        if t in cache:
            return cache[t]
        if not 1 <= t <= schedule.T:
            raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
        lam = float(schedule.lambda_values[t - 1])
        if modulate:
            emb = guided_mix(
                src, tgt, lam, schedule.covdiff, t, schedule.t_edit, schedule.covdiff_floor
            )
        else:
            emb = mix(src, tgt, lam)
        cache[t] = emb
        return emb

    return provider
