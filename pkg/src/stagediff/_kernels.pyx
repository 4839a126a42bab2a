# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: exact mixture-of-Gaussians noise prediction.

The per-step epsilon evaluation dominates sampling runtime (one call per
trajectory per timestep), so the inner posterior-responsibility loop is
compiled.  `stagediff._core` selects this module when it imports cleanly
and falls back to the numpy reference implementation otherwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def mixture_eps(const double[:, ::1] z, const double[:, ::1] means, const double[::1] log_weights,
                double variance, double alpha):
    """Exact epsilon for a batch of latents under an isotropic Gaussian mixture.

    z: (B, D) flattened latents, means: (K, D), log_weights: (K,).
    Returns (B, D) float64.
    """
    cdef Py_ssize_t B = z.shape[0]
    cdef Py_ssize_t D = z.shape[1]
    cdef Py_ssize_t K = means.shape[0]
    cdef double s2 = alpha * variance + 1.0 - alpha
    cdef double root_a = sqrt(alpha)
    cdef double coef = sqrt(1.0 - alpha) / s2

    out_arr = np.empty((B, D), dtype=np.float64)
    logits_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] logits = logits_arr

    cdef Py_ssize_t b, k, d
    cdef double acc, diff, top, total, post

    for b in range(B):
        top = -1e300
        for k in range(K):
            acc = 0.0
            for d in range(D):
                diff = z[b, d] - root_a * means[k, d]
                acc += diff * diff
            logits[k] = log_weights[k] - acc / (2.0 * s2)
            if logits[k] > top:
                top = logits[k]
        total = 0.0
        for k in range(K):
            logits[k] = exp(logits[k] - top)
            total += logits[k]
        for d in range(D):
            post = 0.0
            for k in range(K):
                post += (logits[k] / total) * means[k, d]
            out[b, d] = (z[b, d] - root_a * post) * coef
    return out_arr
