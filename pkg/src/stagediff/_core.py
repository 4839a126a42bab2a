"""Kernel dispatch: compiled extension when available, numpy reference otherwise.

Set ``STAGEDIFF_FORCE_PYTHON=1`` to force the numpy path even when the
compiled extension is installed (used by the benchmark and parity tests).
"""

import os

import numpy as np


def mixture_eps_numpy(z, means, log_weights, variance, alpha):
    """Exact epsilon for latents under an isotropic Gaussian-mixture data prior.

    The forward-noised marginal at signal level ``alpha`` is the mixture
    sum_k w_k N(sqrt(alpha) mu_k, (alpha*variance + 1 - alpha) I); epsilon is
    -sqrt(1 - alpha) times its score.

    Args:
        z: (B, D) flattened latents.
        means: (K, D) component means.
        log_weights: (K,) log mixture weights.
        variance: shared isotropic component variance.
        alpha: cumulative signal coefficient at the evaluation timestep.

    Returns:
        (B, D) float64 epsilon.
    """
    z = np.asarray(z, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    s2 = alpha * variance + 1.0 - alpha
    diff = z[:, None, :] - np.sqrt(alpha) * means[None, :, :]
    logits = np.asarray(log_weights)[None, :] - np.sum(diff * diff, axis=2) / (2.0 * s2)
    logits = logits - logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    post_mean = np.sqrt(alpha) * (resp @ means)
    return (z - post_mean) * (np.sqrt(1.0 - alpha) / s2)


def _load_extension():
    if os.environ.get("STAGEDIFF_FORCE_PYTHON", "") in ("1", "true", "yes"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_EXT = _load_extension()
HAVE_EXT = _EXT is not None


def mixture_eps(z, means, log_weights, variance, alpha):
    """Dispatch to the compiled kernel when present, numpy otherwise."""
    if _EXT is not None:
        z = np.ascontiguousarray(z, dtype=np.float64)
        means = np.ascontiguousarray(means, dtype=np.float64)
        log_weights = np.ascontiguousarray(log_weights, dtype=np.float64)
        return _EXT.mixture_eps(z, means, log_weights, float(variance), float(alpha))
    return mixture_eps_numpy(z, means, log_weights, variance, alpha)
